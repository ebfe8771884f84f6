//! Executing scenarios and sweeps.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::output::{bulk_file, csv_file, json_file, trajectory_file};
use super::{Analysis, ConfigError, Scenario, ScenarioConfig, ScenarioMetadata, StabilityGuess, SCHEMA_VERSION};
use crate::bulk::{
    admissible_network_size, analytic_bulk_constant_voltage, bulk_mean_series, voltage_envelope,
    AdmissibleRange, BulkEnvelope, BulkParams, MeanSeries,
};
use crate::dynamics::{final_powers, integrate, IntegratorSettings, ModelForm, Perturbation, Trajectory, VoltageExcursion};
use crate::metrics::{
    return_time, steady_state_deviation_check, sync_check, window_std, ReturnTimeResult,
    ReturnTimeSpec, SteadyStateReport, SyncReport,
};
use crate::model::reduce_full_model;
use crate::parallel::par_map;
use crate::stability::{analyze, default_guess, StabilityReport, Verdict};
use crate::Error;

/// Tolerance of the final-window synchronization check in reports.
pub const SYNC_TOLERANCE: f64 = 1e-4;

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        if let Some(dt) = self.dt {
            cfg.integrator.dt = dt;
        }
        if let Some(t) = self.t_final {
            cfg.integrator.t_final = t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSummary {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma2_literal: f64,
    pub bounded: bool,
    pub bounded_operative: bool,
    pub td_factor_discrepancy: bool,
    /// Every sampled mean voltage lies between the consistent bounds.
    pub contains_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkSummary {
    /// Identical machines on an all-to-all network, so the closed forms apply.
    pub uniform: bool,
    pub late_window: (f64, f64),
    pub late_omega_bar: f64,
    pub late_e_bar_std: f64,
    pub final_theta_bar: f64,
    pub final_omega_bar: f64,
    pub final_e_bar: f64,
    pub theta_bar_asymptote: Option<f64>,
    pub omega_bar_asymptote: Option<f64>,
    pub analytic_max_error_theta: Option<f64>,
    pub analytic_max_error_omega: Option<f64>,
    pub envelope: Option<EnvelopeSummary>,
    pub admissible: Option<AdmissibleRange>,
    pub params: Option<BulkParams>,
}

/// In-memory results of one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub trajectory: Option<Trajectory>,
    pub means: Option<MeanSeries>,
    pub analytic: Option<AnalyticMeans>,
    pub envelope: Option<BulkEnvelope>,
    pub bulk: Option<BulkSummary>,
    pub steady_state: Option<SteadyStateReport>,
    pub sync: Option<SyncReport>,
    pub return_time: Option<ReturnTimeResult>,
    pub stability: Option<StabilityReport>,
    pub files: Vec<PathBuf>,
}

/// Closed-form `(theta_bar, omega_bar)` at every sample.
type AnalyticMeans = Vec<(f64, f64)>;

fn bulk_summary(
    scenario: &Scenario,
    traj: &Trajectory,
    means: &MeanSeries,
) -> (BulkSummary, Option<AnalyticMeans>, Option<BulkEnvelope>) {
    let t_end = *means.times.last().expect("non-empty");
    let late = (0.75 * t_end, t_end);
    let last = means.len() - 1;
    let params = BulkParams::from_model(&scenario.model, &scenario.initial, &scenario.perturbations).ok();

    let mut analytic = None;
    let mut envelope = None;
    let mut summary = BulkSummary {
        uniform: params.is_some(),
        late_window: late,
        late_omega_bar: means.window_mean(&means.omega, late.0, late.1).unwrap_or(f64::NAN),
        late_e_bar_std: window_std(&means.times, &means.voltage, late.0, late.1),
        final_theta_bar: means.theta[last],
        final_omega_bar: means.omega[last],
        final_e_bar: means.voltage[last],
        theta_bar_asymptote: None,
        omega_bar_asymptote: None,
        analytic_max_error_theta: None,
        analytic_max_error_omega: None,
        envelope: None,
        admissible: None,
        params: params.clone(),
    };
    if let Some(p) = params {
        let values: Vec<(f64, f64)> = traj
            .times
            .iter()
            .map(|&t| analytic_bulk_constant_voltage(&p, t))
            .collect();
        let err = |f: &dyn Fn(usize) -> f64| (0..means.len()).map(f).fold(0.0f64, f64::max);
        summary.analytic_max_error_theta = Some(err(&|k| (values[k].0 - means.theta[k]).abs()));
        summary.analytic_max_error_omega = Some(err(&|k| (values[k].1 - means.omega[k]).abs()));
        summary.theta_bar_asymptote = p.theta_bar_asymptote();
        summary.omega_bar_asymptote = Some(p.omega_bar_asymptote());
        summary.admissible = admissible_network_size(p.reactance_diff, p.b0, p.b1).ok();

        if scenario.form != ModelForm::ConstantVoltage {
            let env = voltage_envelope(&p, &means.times);
            let contains = means
                .voltage
                .iter()
                .enumerate()
                .all(|(k, e)| *e >= env.lower_bound[k] - 1e-12 && *e <= env.upper_bound[k] + 1e-12);
            summary.envelope = Some(EnvelopeSummary {
                sigma1: env.sigma1,
                sigma2: env.sigma2,
                sigma2_literal: env.sigma2_literal,
                bounded: env.bounded,
                bounded_operative: env.bounded_operative,
                td_factor_discrepancy: env.td_factor_discrepancy,
                contains_mean: contains,
            });
            envelope = Some(env);
        }
        analytic = Some(values);
    }
    (summary, analytic, envelope)
}

/// Runs every requested analysis without touching the filesystem.
pub fn execute(scenario: &Scenario) -> Result<ScenarioOutcome, Error> {
    let needs_trajectory = scenario.wants(Analysis::Simulate)
        || scenario.wants(Analysis::Bulk)
        || scenario.wants(Analysis::ReturnTime)
        || (scenario.wants(Analysis::Stability) && scenario.stability_guess == StabilityGuess::Endpoint);

    let mut outcome = ScenarioOutcome {
        name: scenario.name.clone(),
        trajectory: None,
        means: None,
        analytic: None,
        envelope: None,
        bulk: None,
        steady_state: None,
        sync: None,
        return_time: None,
        stability: None,
        files: Vec::new(),
    };
    let powers_after = final_powers(&scenario.model.power_setpoints(), &scenario.perturbations);

    if needs_trajectory {
        let traj = integrate(
            &scenario.model,
            &scenario.initial,
            &scenario.perturbations,
            &scenario.settings,
            scenario.form,
        )?;
        let means = bulk_mean_series(&traj)?;
        let t_end = *traj.times.last().expect("non-empty");
        outcome.steady_state = Some(steady_state_deviation_check(&traj, &scenario.model, &powers_after)?);
        outcome.sync = Some(sync_check(&traj, 0.9 * t_end, t_end, SYNC_TOLERANCE)?);
        if scenario.wants(Analysis::Bulk) {
            let (summary, analytic, envelope) = bulk_summary(scenario, &traj, &means);
            outcome.bulk = Some(summary);
            outcome.analytic = analytic;
            outcome.envelope = envelope;
        }
        if scenario.wants(Analysis::ReturnTime) {
            outcome.return_time = Some(return_time(&means.times, &means.voltage, &scenario.return_time)?);
        }
        outcome.means = Some(means);
        outcome.trajectory = Some(traj);
    }

    if scenario.wants(Analysis::Stability) {
        let model = reduce_full_model(&scenario.model.with_powers(&powers_after));
        let guess = match (&outcome.trajectory, scenario.stability_guess) {
            (Some(traj), StabilityGuess::Endpoint) => {
                let end = traj.last();
                let mut g = end.theta.clone();
                g.extend(&end.voltage);
                g
            }
            _ => default_guess(&model),
        };
        outcome.stability = Some(analyze(&model, &guess)?);
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct Report<'a> {
    name: &'a str,
    schema_version: u32,
    metadata: &'a ScenarioMetadata,
    analyses: &'a [Analysis],
    model_form: ModelForm,
    integrator: &'a IntegratorSettings,
    perturbations: &'a [Perturbation],
    frequency_offset: f64,
    samples: usize,
    nonpositive_voltage: Option<VoltageExcursion>,
    steady_state: Option<&'a SteadyStateReport>,
    sync: Option<&'a SyncReport>,
    bulk: Option<&'a BulkSummary>,
    return_time: Option<ReturnTimeReport<'a>>,
    stability_verdict: Option<Verdict>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct ReturnTimeReport<'a> {
    spec: &'a ReturnTimeSpec,
    #[serde(flatten)]
    result: &'a ReturnTimeResult,
}

fn display_paths(files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|p| p.display().to_string()).collect()
}

/// Writes the outputs of an executed scenario into `dir`.
pub fn write_outputs(scenario: &Scenario, outcome: &mut ScenarioOutcome, dir: &Path) -> Result<(), Error> {
    let name = &scenario.name;
    let mut files = Vec::new();
    if let Some(traj) = &outcome.trajectory {
        if scenario.wants(Analysis::Simulate) && scenario.output.trajectory {
            files.push(trajectory_file(dir, traj, name, scenario.frequency_offset())?);
        }
    }
    if let (Some(means), Some(bulk)) = (&outcome.means, &outcome.bulk) {
        files.push(bulk_file(
            dir,
            name,
            means,
            outcome.analytic.as_deref(),
            outcome.envelope.as_ref(),
        )?);
        files.push(json_file(dir, &format!("{name}_bulk.json"), bulk)?);
    }
    if let Some(stab) = &outcome.stability {
        files.push(json_file(dir, &format!("{name}_stability.json"), stab)?);
    }
    let report = Report {
        name,
        schema_version: SCHEMA_VERSION,
        metadata: &scenario.metadata,
        analyses: &scenario.analyses,
        model_form: scenario.form,
        integrator: &scenario.settings,
        perturbations: &scenario.perturbations,
        frequency_offset: scenario.frequency_offset(),
        samples: outcome.trajectory.as_ref().map_or(0, Trajectory::len),
        nonpositive_voltage: outcome.trajectory.as_ref().and_then(|t| t.nonpositive_voltage),
        steady_state: outcome.steady_state.as_ref(),
        sync: outcome.sync.as_ref(),
        bulk: outcome.bulk.as_ref(),
        return_time: outcome.return_time.as_ref().map(|result| ReturnTimeReport {
            spec: &scenario.return_time,
            result,
        }),
        stability_verdict: outcome.stability.as_ref().map(|s| s.verdict),
        files: display_paths(&files),
    };
    files.push(json_file(dir, &format!("{name}_report.json"), &report)?);
    outcome.files = files;
    Ok(())
}

/// Executes `scenario` and writes its outputs into `dir`.
pub fn run_scenario(scenario: &Scenario, dir: &Path) -> Result<ScenarioOutcome, Error> {
    let mut outcome = execute(scenario).map_err(|e| e.in_scenario(&scenario.name))?;
    write_outputs(scenario, &mut outcome, dir)?;
    Ok(outcome)
}

/// Applies overrides, optionally replaces the analysis list, and runs the
/// config as a single scenario (any `[sweep]` section is ignored).
pub fn run_config(
    cfg: &ScenarioConfig,
    overrides: &Overrides,
    analyses: Option<Vec<Analysis>>,
) -> Result<ScenarioOutcome, Error> {
    let mut cfg = cfg.clone();
    overrides.apply(&mut cfg);
    if let Some(a) = analyses {
        cfg.analyses = a;
    }
    let scenario = Scenario::from_config(&cfg).map_err(|e| e.in_scenario(&cfg.name))?;
    run_scenario(&scenario, &cfg.output.dir)
}

/// Values of the swept axes for one run; `None` where an axis is not swept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SweepPoint {
    pub node_count: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_scale: Option<f64>,
    pub delta_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepVariant {
    pub label: String,
    pub point: SweepPoint,
    pub config: ScenarioConfig,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Expands the `[sweep]` section into one config per grid point.
pub fn sweep_variants(cfg: &ScenarioConfig) -> Result<Vec<SweepVariant>, ConfigError> {
    let sweep = cfg.sweep.as_ref().ok_or(ConfigError::MissingSweep)?;
    if sweep.is_empty() {
        return Err(ConfigError::MissingSweep);
    }
    let mut out = Vec::new();
    for node_count in axis(&sweep.node_count) {
        for gamma in axis(&sweep.gamma) {
            for gamma_scale in axis(&sweep.gamma_scale) {
                for delta_power in axis(&sweep.delta_power) {
                    let mut c = cfg.clone();
                    c.sweep = None;
                    let mut label = cfg.name.clone();
                    if let Some(n) = node_count {
                        c.network.node_count = Some(n);
                        label.push_str(&format!("_N{n}"));
                    }
                    if let Some(g) = gamma {
                        c.nodes.secondary_gain = super::PerNode::Uniform(g);
                        label.push_str(&format!("_gamma{g}"));
                    }
                    if let Some(k) = gamma_scale {
                        c.scale_gamma(k);
                        label.push_str(&format!("_gscale{k}"));
                    }
                    if let Some(d) = delta_power {
                        for p in &mut c.perturbations {
                            p.delta_power = d;
                        }
                        label.push_str(&format!("_dp{d}"));
                    }
                    c.name = label.clone();
                    out.push(SweepVariant {
                        label,
                        point: SweepPoint {
                            node_count,
                            gamma,
                            gamma_scale,
                            delta_power,
                        },
                        config: c,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VariantStatus {
    Ok,
    Failed { message: String, exit_code: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    #[serde(flatten)]
    pub point: SweepPoint,
    #[serde(flatten)]
    pub status: VariantStatus,
    pub final_omega_bar: Option<f64>,
    pub late_omega_bar: Option<f64>,
    pub final_theta_bar: Option<f64>,
    pub late_e_bar_std: Option<f64>,
    pub return_time: Option<f64>,
    pub pointwise_return_time: Option<f64>,
    pub converged: Option<bool>,
    pub verdict: Option<Verdict>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub name: String,
    pub rows: Vec<SweepRow>,
    /// Per variant, `None` where the run failed.
    pub outcomes: Vec<Option<ScenarioOutcome>>,
    pub files: Vec<PathBuf>,
}

impl SweepOutcome {
    /// Exit code of the first failed variant.
    pub fn failure_code(&self) -> Option<i32> {
        self.rows.iter().find_map(|r| match &r.status {
            VariantStatus::Failed { exit_code, .. } => Some(*exit_code),
            VariantStatus::Ok => None,
        })
    }
}

fn row_for(variant: &SweepVariant, result: &Result<ScenarioOutcome, Error>) -> SweepRow {
    let mut row = SweepRow {
        label: variant.label.clone(),
        point: variant.point,
        status: VariantStatus::Ok,
        final_omega_bar: None,
        late_omega_bar: None,
        final_theta_bar: None,
        late_e_bar_std: None,
        return_time: None,
        pointwise_return_time: None,
        converged: None,
        verdict: None,
    };
    match result {
        Ok(o) => {
            if let Some(m) = &o.means {
                let last = m.len() - 1;
                let t_end = m.times[last];
                row.final_omega_bar = Some(m.omega[last]);
                row.final_theta_bar = Some(m.theta[last]);
                row.late_omega_bar = m.window_mean(&m.omega, 0.75 * t_end, t_end);
                row.late_e_bar_std = Some(window_std(&m.times, &m.voltage, 0.75 * t_end, t_end));
            }
            if let Some(r) = &o.return_time {
                row.return_time = r.return_time;
                row.pointwise_return_time = r.pointwise_return_time;
                row.converged = Some(r.converged);
            }
            row.verdict = o.stability.as_ref().map(|s| s.verdict);
        }
        Err(e) => {
            row.status = VariantStatus::Failed {
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
        }
    }
    row
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Runs every grid point of the `[sweep]` section, concurrently when the
/// `parallel` feature is on, and writes per-run outputs plus summaries.
///
/// Config errors abort before anything runs; numerical failures of single
/// runs are recorded in the summary.
pub fn run_sweep(cfg: &ScenarioConfig, overrides: &Overrides) -> Result<SweepOutcome, Error> {
    let mut cfg = cfg.clone();
    overrides.apply(&mut cfg);
    let dir = cfg.output.dir.clone();
    let variants = sweep_variants(&cfg)?;
    let scenarios = variants
        .iter()
        .map(|v| Scenario::from_config(&v.config).map_err(|e| e.in_scenario(&v.label)))
        .collect::<Result<Vec<_>, _>>()?;

    let results = par_map(&scenarios, |sc| run_scenario(sc, &dir));
    let rows: Vec<SweepRow> = variants.iter().zip(&results).map(|(v, r)| row_for(v, r)).collect();

    let sweep = cfg.sweep.as_ref().expect("checked by sweep_variants");
    let mut header = vec!["label"];
    let mut columns: Vec<fn(&SweepPoint) -> String> = Vec::new();
    if !sweep.node_count.is_empty() {
        header.push("node_count");
        columns.push(|p| opt(p.node_count));
    }
    if !sweep.gamma.is_empty() {
        header.push("gamma");
        columns.push(|p| opt(p.gamma));
    }
    if !sweep.gamma_scale.is_empty() {
        header.push("gamma_scale");
        columns.push(|p| opt(p.gamma_scale));
    }
    if !sweep.delta_power.is_empty() {
        header.push("delta_power");
        columns.push(|p| opt(p.delta_power));
    }
    header.extend([
        "status",
        "final_omega_bar",
        "late_omega_bar",
        "final_theta_bar",
        "late_E_bar_std",
        "return_time",
        "converged",
    ]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.label.clone()];
            line.extend(columns.iter().map(|c| c(&r.point)));
            line.push(match r.status {
                VariantStatus::Ok => "ok".into(),
                VariantStatus::Failed { .. } => "failed".into(),
            });
            line.push(opt(r.final_omega_bar));
            line.push(opt(r.late_omega_bar));
            line.push(opt(r.final_theta_bar));
            line.push(opt(r.late_e_bar_std));
            line.push(opt(r.return_time));
            line.push(opt(r.converged));
            line
        })
        .collect();

    let name = &cfg.name;
    let mut files = vec![
        csv_file(&dir, &format!("{name}_sweep.csv"), &header, &table)?,
        json_file(&dir, &format!("{name}_sweep.json"), &rows)?,
    ];
    if !sweep.gamma.is_empty() && cfg.analyses.contains(&Analysis::ReturnTime) {
        let rt: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    opt(r.point.gamma),
                    opt(r.return_time),
                    opt(r.converged),
                ]
            })
            .collect();
        files.push(csv_file(
            &dir,
            &format!("{name}_return_time.csv"),
            &["gamma", "return_time", "converged"],
            &rt,
        )?);
    }

    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(o) => {
                files.extend(o.files.iter().cloned());
                outcomes.push(Some(o));
            }
            Err(_) => outcomes.push(None),
        }
    }
    Ok(SweepOutcome {
        name: cfg.name.clone(),
        rows,
        outcomes,
        files,
    })
}
