//! CSV and JSON writers.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bulk::{BulkEnvelope, MeanSeries};
use crate::dynamics::Trajectory;
use crate::Error;

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Columns `t, theta_1..N, omega_1..N, E_1..N[, u_1..N]`; `omega_offset` is
/// added to every omega value.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    traj: &Trajectory,
    omega_offset: f64,
) -> Result<(), Error> {
    let n = traj.node_count();
    let with_control = traj.states.first().is_some_and(|s| s.control.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    for prefix in ["theta", "omega", "E"] {
        header.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    if with_control {
        header.extend((1..=n).map(|i| format!("u_{i}")));
    }
    w.write_record(&header)?;

    let mut row = Vec::with_capacity(header.len());
    for (t, s) in traj.times.iter().zip(&traj.states) {
        row.clear();
        row.push(t.to_string());
        row.extend(s.theta.iter().map(f64::to_string));
        row.extend(s.omega.iter().map(|w| (w + omega_offset).to_string()));
        row.extend(s.voltage.iter().map(f64::to_string));
        if let Some(u) = &s.control {
            row.extend(u.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean series in the deviation frame, with optional closed-form columns
/// and voltage bounds.
pub fn write_bulk_csv<W: Write>(
    out: W,
    means: &MeanSeries,
    analytic: Option<&[(f64, f64)]>,
    envelope: Option<&BulkEnvelope>,
) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t", "theta_bar", "omega_bar", "E_bar"];
    if analytic.is_some() {
        header.extend(["theta_bar_analytic", "omega_bar_analytic"]);
    }
    if envelope.is_some() {
        header.extend([
            "E_lower",
            "E_upper",
            "E_lower_literal",
            "E_upper_literal",
        ]);
    }
    w.write_record(&header)?;
    for k in 0..means.len() {
        let mut row = vec![
            means.times[k].to_string(),
            means.theta[k].to_string(),
            means.omega[k].to_string(),
            means.voltage[k].to_string(),
        ];
        if let Some(a) = analytic {
            row.push(a[k].0.to_string());
            row.push(a[k].1.to_string());
        }
        if let Some(env) = envelope {
            row.push(env.lower_bound[k].to_string());
            row.push(env.upper_bound[k].to_string());
            row.push(env.lower_bound_literal[k].to_string());
            row.push(env.upper_bound_literal[k].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub(crate) fn trajectory_file(dir: &Path, traj: &Trajectory, name: &str, offset: f64) -> Result<PathBuf, Error> {
    let path = dir.join(format!("{name}_trajectory.csv"));
    write_trajectory_csv(create(&path)?, traj, offset)?;
    Ok(path)
}

pub(crate) fn bulk_file(
    dir: &Path,
    name: &str,
    means: &MeanSeries,
    analytic: Option<&[(f64, f64)]>,
    envelope: Option<&BulkEnvelope>,
) -> Result<PathBuf, Error> {
    let path = dir.join(format!("{name}_bulk.csv"));
    write_bulk_csv(create(&path)?, means, analytic, envelope)?;
    Ok(path)
}

pub(crate) fn json_file<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<PathBuf, Error> {
    let path = dir.join(file);
    let mut out = create(&path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(path)
}

/// Writes rows of already formatted fields.
pub(crate) fn csv_file(dir: &Path, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, Error> {
    let path = dir.join(file);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(path)
}
