//! Post-processing of trajectories: return time, steady-state deviations
//! and synchronization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::model::{mean, GridModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("series must cover [{needed_from}, {needed_to}] but spans [{from}, {to}]")]
    InsufficientSeriesLength {
        needed_from: f64,
        needed_to: f64,
        from: f64,
        to: f64,
    },
    #[error("series is not uniformly sampled (step {first} vs {other} at sample {index})")]
    NonUniformSampling { first: f64, other: f64, index: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("characteristic time and tolerance must be positive (T = {t}, xi = {xi})")]
    InvalidSpec { t: f64, xi: f64 },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeSpec {
    /// Lag `T` of the comparison `|E(t) - E(t - T)|`.
    pub characteristic_time: f64,
    /// Tolerance `xi`.
    pub tolerance: f64,
    /// End of the last power ramp; return times are measured from here.
    pub t_perturb_end: f64,
}

impl Default for ReturnTimeSpec {
    fn default() -> Self {
        Self {
            characteristic_time: 5.0,
            tolerance: 1e-4,
            t_perturb_end: 42.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnTimeResult {
    /// Windowed criterion; `None` if it never settles.
    pub return_time: Option<f64>,
    pub converged: bool,
    /// First sample satisfying the single-lag test, for comparison.
    pub pointwise_return_time: Option<f64>,
}

/// Time after `t_perturb_end` from which `|x(s) - x(s - T)| <= xi` holds
/// for every sample `s` of a window of length `T`.
///
/// The result is the start of the first such window, so a series that is
/// already settled yields 0. Windows start no earlier than `t_perturb_end`
/// and no earlier than `T` after the first sample.
pub fn return_time(
    times: &[f64],
    values: &[f64],
    spec: &ReturnTimeSpec,
) -> Result<ReturnTimeResult, MetricsError> {
    let t = spec.characteristic_time;
    if !(t > 0.0 && spec.tolerance > 0.0) {
        return Err(MetricsError::InvalidSpec {
            t,
            xi: spec.tolerance,
        });
    }
    if times.len() != values.len() {
        return Err(MetricsError::LengthMismatch {
            times: times.len(),
            values: values.len(),
        });
    }
    let needed_to = spec.t_perturb_end + 2.0 * t;
    let insufficient = || MetricsError::InsufficientSeriesLength {
        needed_from: spec.t_perturb_end,
        needed_to,
        from: times.first().copied().unwrap_or(f64::NAN),
        to: times.last().copied().unwrap_or(f64::NAN),
    };
    if times.len() < 2 {
        return Err(insufficient());
    }
    let step = times[1] - times[0];
    for (index, w) in times.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) || (d - step).abs() > 1e-6 * step {
            return Err(MetricsError::NonUniformSampling {
                first: step,
                other: d,
                index: index + 1,
            });
        }
    }
    let eps = 1e-9 * step.max(1.0);
    if times[0] > spec.t_perturb_end + eps || *times.last().unwrap() < needed_to - eps {
        return Err(insufficient());
    }

    let lag = ((t / step).round() as usize).max(1);
    let start = times
        .partition_point(|&s| s < spec.t_perturb_end - eps)
        .max(lag);
    let holds = |k: usize| (values[k] - values[k - lag]).abs() <= spec.tolerance;

    let pointwise = (start..values.len()).find(|&k| holds(k));
    let mut run = 0;
    let mut windowed = None;
    for k in start..values.len() {
        if holds(k) {
            run += 1;
            if run > lag {
                windowed = Some(k - lag);
                break;
            }
        } else {
            run = 0;
        }
    }
    let since = |k: usize| (times[k] - spec.t_perturb_end).max(0.0);
    Ok(ReturnTimeResult {
        return_time: windowed.map(since),
        converged: windowed.is_some(),
        pointwise_return_time: pointwise.map(since),
    })
}

/// Window-averaged deviations from the bulk asymptotes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub window: (f64, f64),
    pub sum_power: f64,
    pub omega_bar: f64,
    /// `sum P / sum alpha` without control, 0 with control.
    pub omega_bar_expected: f64,
    pub omega_bar_abs_error: f64,
    /// Relative error when the expected value is non-zero.
    pub omega_bar_rel_error: Option<f64>,
    /// Gain-weighted mean phase `sum gamma theta / sum gamma`.
    pub theta_weighted: Option<f64>,
    /// `sum P / sum gamma`.
    pub theta_expected: Option<f64>,
    pub theta_abs_error: Option<f64>,
    pub theta_rel_error: Option<f64>,
}

fn relative(err: f64, expected: f64) -> Option<f64> {
    (expected != 0.0).then(|| err / expected.abs())
}

/// Compares the last quarter of `traj` against the asymptotic bulk values.
///
/// `final_powers` are the setpoints once all ramps have completed.
pub fn steady_state_deviation_check(
    traj: &Trajectory,
    model: &GridModel,
    final_powers: &[f64],
) -> Result<SteadyStateReport, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let t_end = *traj.times.last().unwrap();
    let window = (0.75 * t_end, t_end);
    let from = traj.index_at(window.0);
    let samples = &traj.states[from..];

    let sum_power: f64 = final_powers.iter().sum();
    let alpha_sum: f64 = model.nodes.iter().map(|p| p.damping).sum();
    let gamma_sum: f64 = model.nodes.iter().map(|p| p.secondary_gain).sum();
    let controlled = gamma_sum > 0.0;

    let omega_bar = mean(&samples.iter().map(|s| s.mean_omega()).collect::<Vec<_>>());
    let omega_bar_expected = if controlled { 0.0 } else { sum_power / alpha_sum };
    let omega_err = (omega_bar - omega_bar_expected).abs();

    let (theta_weighted, theta_expected) = if controlled {
        let weighted: Vec<f64> = samples
            .iter()
            .map(|s| {
                s.theta
                    .iter()
                    .zip(&model.nodes)
                    .map(|(th, p)| th * p.secondary_gain)
                    .sum::<f64>()
                    / gamma_sum
            })
            .collect();
        (Some(mean(&weighted)), Some(sum_power / gamma_sum))
    } else {
        (None, None)
    };
    let theta_abs_error = theta_weighted.zip(theta_expected).map(|(a, b)| (a - b).abs());
    Ok(SteadyStateReport {
        window,
        sum_power,
        omega_bar,
        omega_bar_expected,
        omega_bar_abs_error: omega_err,
        omega_bar_rel_error: relative(omega_err, omega_bar_expected),
        theta_weighted,
        theta_expected,
        theta_abs_error,
        theta_rel_error: theta_abs_error
            .zip(theta_expected)
            .and_then(|(e, x)| relative(e, x)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub window: (f64, f64),
    /// Largest `|omega_i - omega_bar|` over the window.
    pub frequency_spread: f64,
    /// Largest change of any phase difference `theta_i - theta_0` over the window.
    pub phase_drift: f64,
    pub synchronized: bool,
}

/// Frequency-spread and phase-locking test over samples in `[from, to]`.
pub fn sync_check(traj: &Trajectory, from: f64, to: f64, tol: f64) -> Result<SyncReport, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let samples: Vec<_> = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= from - 1e-9 && **t <= to + 1e-9)
        .map(|(_, s)| s)
        .collect();
    let n = traj.node_count();
    let mut spread = 0.0f64;
    let mut drift = 0.0f64;
    if n > 1 && !samples.is_empty() {
        for s in &samples {
            let w = s.mean_omega();
            for o in &s.omega {
                spread = spread.max((o - w).abs());
            }
        }
        for i in 1..n {
            let diffs = samples.iter().map(|s| s.theta[i] - s.theta[0]);
            let (lo, hi) = diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
            drift = drift.max(hi - lo);
        }
    }
    Ok(SyncReport {
        window: (from, to),
        frequency_spread: spread,
        phase_drift: drift,
        synchronized: spread < tol && drift < tol,
    })
}

/// Population standard deviation of `values` over samples in `[from, to]`.
pub fn window_std(times: &[f64], values: &[f64], from: f64, to: f64) -> f64 {
    let sel: Vec<f64> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= from - 1e-9 && **t <= to + 1e-9)
        .map(|(_, v)| *v)
        .collect();
    if sel.is_empty() {
        return 0.0;
    }
    let m = mean(&sel);
    (sel.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / sel.len() as f64).sqrt()
}
