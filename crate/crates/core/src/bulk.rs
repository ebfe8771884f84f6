//! Node-mean ("bulk") dynamics.
//!
//! With uniform `alpha` and `gamma` the coupling cancels pairwise in the
//! mean frequency equation, leaving
//!
//! ```text
//! theta_bar'' + alpha theta_bar' + gamma theta_bar = sum P(t) / N
//! ```
//!
//! which is solved here exactly. The power schedule is piecewise linear in
//! time (ramps), so the solution is chained across the ramp breakpoints
//! using the closed form for affine forcing on each piece.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Perturbation, Trajectory};
use crate::model::{mean, GridModel, SimState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BulkError {
    #[error("bulk analysis needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("damping alpha must be positive, got {0}")]
    NonPositiveDamping(f64),
    #[error("voltage time constant must be positive, got {0}")]
    NonPositiveTimeConstant(f64),
    #[error("link susceptance B1 must be non-zero")]
    ZeroLinkSusceptance,
    #[error("closed-form bulk dynamics need identical node parameters")]
    NonUniformParameters,
    #[error("closed-form bulk dynamics need uniform all-to-all coupling")]
    NonUniformCoupling,
    #[error("trajectory has no samples")]
    EmptyTrajectory,
}

/// Ramp of the summed power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRamp {
    pub t_start: f64,
    pub t_end: f64,
    pub delta: f64,
}

impl From<&Perturbation> for PowerRamp {
    fn from(p: &Perturbation) -> Self {
        Self {
            t_start: p.t_start,
            t_end: p.t_end,
            delta: p.delta_power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkParams {
    pub alpha: f64,
    pub gamma: f64,
    pub node_count: usize,
    /// Summed power before any ramp.
    pub sum_power: f64,
    pub ramps: Vec<PowerRamp>,
    pub theta_bar_0: f64,
    pub omega_bar_0: f64,
    pub e_bar_0: f64,
    pub voltage_time_constant: f64,
    pub field_voltage: f64,
    pub reactance_diff: f64,
    pub b0: f64,
    pub b1: f64,
}

impl BulkParams {
    pub fn validate(&self) -> Result<(), BulkError> {
        if self.node_count < 2 {
            return Err(BulkError::TooFewNodes(self.node_count));
        }
        if !(self.alpha > 0.0) {
            return Err(BulkError::NonPositiveDamping(self.alpha));
        }
        if !(self.voltage_time_constant > 0.0) {
            return Err(BulkError::NonPositiveTimeConstant(self.voltage_time_constant));
        }
        Ok(())
    }

    /// Parameters of a uniform model. The susceptance matrix must have a
    /// constant diagonal `b0` and constant off-diagonal `b1`.
    pub fn from_model(
        model: &GridModel,
        initial: &SimState,
        perturbations: &[Perturbation],
    ) -> Result<Self, BulkError> {
        let node = model.uniform_params().ok_or(BulkError::NonUniformParameters)?;
        let b = &model.susceptance;
        let n = model.node_count();
        if n < 2 {
            return Err(BulkError::TooFewNodes(n));
        }
        let (b0, b1) = (b[(0, 0)], b[(0, 1)]);
        let tol = 1e-12 * (b0.abs() + b1.abs()).max(1.0);
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { b0 } else { b1 };
                if (b[(i, j)] - want).abs() > tol {
                    return Err(BulkError::NonUniformCoupling);
                }
            }
        }
        let p = Self {
            alpha: node.damping,
            gamma: node.secondary_gain,
            node_count: model.node_count(),
            sum_power: model.total_power(),
            ramps: perturbations.iter().map(PowerRamp::from).collect(),
            theta_bar_0: initial.mean_theta(),
            omega_bar_0: initial.mean_omega(),
            e_bar_0: initial.mean_voltage(),
            voltage_time_constant: node.voltage_time_constant,
            field_voltage: node.field_voltage,
            reactance_diff: node.reactance_diff,
            b0,
            b1,
        };
        p.validate()?;
        Ok(p)
    }

    /// Summed power once every ramp has completed.
    pub fn final_sum_power(&self) -> f64 {
        self.sum_power + self.ramps.iter().map(|r| r.delta).sum::<f64>()
    }

    fn sum_power_at(&self, t: f64) -> f64 {
        self.sum_power
            + self
                .ramps
                .iter()
                .map(|r| {
                    let frac = if t <= r.t_start {
                        0.0
                    } else if t >= r.t_end {
                        1.0
                    } else {
                        (t - r.t_start) / (r.t_end - r.t_start)
                    };
                    frac * r.delta
                })
                .sum::<f64>()
    }

    /// Long-time mean phase under control, `sum P / (N gamma)`.
    pub fn theta_bar_asymptote(&self) -> Option<f64> {
        (self.gamma > 0.0).then(|| self.final_sum_power() / (self.node_count as f64 * self.gamma))
    }

    /// Long-time mean frequency: `sum P / (N alpha)` without control, else 0.
    pub fn omega_bar_asymptote(&self) -> f64 {
        if self.gamma > 0.0 {
            0.0
        } else {
            self.final_sum_power() / (self.node_count as f64 * self.alpha)
        }
    }
}

/// Roots of `r^2 + alpha r + gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CharacteristicRoots {
    Distinct { r1: f64, r2: f64 },
    Repeated { r: f64 },
    Complex { re: f64, im: f64 },
}

pub fn characteristic_roots(alpha: f64, gamma: f64) -> CharacteristicRoots {
    let disc = alpha * alpha - 4.0 * gamma;
    let scale = (alpha * alpha).max(4.0 * gamma.abs());
    if disc.abs() <= 1e-10 * scale {
        CharacteristicRoots::Repeated { r: -alpha / 2.0 }
    } else if disc > 0.0 {
        let s = disc.sqrt();
        CharacteristicRoots::Distinct {
            r1: (-alpha + s) / 2.0,
            r2: (-alpha - s) / 2.0,
        }
    } else {
        CharacteristicRoots::Complex {
            re: -alpha / 2.0,
            im: (-disc).sqrt() / 2.0,
        }
    }
}

/// Exact solution of `x'' + alpha x' + gamma x = a + b s` after time `s`
/// from `(x0, v0)`.
fn affine_segment(alpha: f64, gamma: f64, a: f64, b: f64, x0: f64, v0: f64, s: f64) -> (f64, f64) {
    if gamma == 0.0 {
        // v' = -alpha v + a + b s
        let c1 = b / alpha;
        let c0 = (a - c1) / alpha;
        let k = v0 - c0;
        let decay = (-alpha * s).exp();
        let v = c0 + c1 * s + k * decay;
        let x = x0 + c0 * s + 0.5 * c1 * s * s + k * (1.0 - decay) / alpha;
        return (x, v);
    }
    let c1 = b / gamma;
    let c0 = (a - alpha * c1) / gamma;
    let h0 = x0 - c0;
    let dh0 = v0 - c1;
    let (h, dh) = match characteristic_roots(alpha, gamma) {
        CharacteristicRoots::Distinct { r1, r2 } => {
            let big_a = (dh0 - r2 * h0) / (r1 - r2);
            let big_b = h0 - big_a;
            let (e1, e2) = ((r1 * s).exp(), (r2 * s).exp());
            (big_a * e1 + big_b * e2, big_a * r1 * e1 + big_b * r2 * e2)
        }
        CharacteristicRoots::Repeated { r } => {
            let k = dh0 - r * h0;
            let e = (r * s).exp();
            ((h0 + k * s) * e, (k + r * (h0 + k * s)) * e)
        }
        CharacteristicRoots::Complex { re, im } => {
            let k = (dh0 - re * h0) / im;
            let e = (re * s).exp();
            let (sn, cs) = (im * s).sin_cos();
            let h = e * (h0 * cs + k * sn);
            let dh = re * h + e * (-h0 * im * sn + k * im * cs);
            (h, dh)
        }
    };
    (c0 + c1 * s + h, c1 + dh)
}

/// Closed-form `(theta_bar(t), omega_bar(t))` of the constant-voltage bulk
/// equation, including any power ramps.
pub fn analytic_bulk_constant_voltage(p: &BulkParams, t: f64) -> (f64, f64) {
    let n = p.node_count as f64;
    let mut breaks: Vec<f64> = p
        .ramps
        .iter()
        .flat_map(|r| [r.t_start, r.t_end])
        .filter(|&b| b > 0.0 && b < t)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.push(t);

    let (mut x, mut v) = (p.theta_bar_0, p.omega_bar_0);
    let mut start = 0.0;
    for end in breaks {
        let len = end - start;
        if len <= 0.0 {
            continue;
        }
        // forcing is affine on the piece; read it off at both ends
        let f0 = p.sum_power_at(start) / n;
        let f1 = p.sum_power_at(end) / n;
        let slope = (f1 - f0) / len;
        (x, v) = affine_segment(p.alpha, p.gamma, f0, slope, x, v, len);
        start = end;
    }
    (x, v)
}

/// Mean-voltage bound curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkEnvelope {
    pub times: Vec<f64>,
    /// Bounds whose asymptotes are the steady states of the bounding ODEs.
    pub lower_bound: Vec<f64>,
    pub upper_bound: Vec<f64>,
    /// As printed, with the extra `1 / T_d` on the asymptote.
    pub lower_bound_literal: Vec<f64>,
    pub upper_bound_literal: Vec<f64>,
    pub sigma1: f64,
    /// `-X (B0 - (N - 1) B1)`, used for the lower bound.
    pub sigma2: f64,
    /// `-X (B0 + (N - 1) B1)`, the alternative printed definition.
    pub sigma2_literal: f64,
    /// `1 - sigma1 > 0` and `1 + sigma2_literal > 0`.
    pub bounded: bool,
    /// `1 - sigma1 > 0` and `1 + sigma2 > 0`.
    pub bounded_operative: bool,
    /// The literal curves differ from the consistent ones (`T_d != 1`).
    pub td_factor_discrepancy: bool,
}

fn relaxation(e0: f64, asymptote: f64, rate: f64, t: f64) -> f64 {
    let decay = (-rate * t).exp();
    e0 * decay + asymptote * (1.0 - decay)
}

pub fn voltage_envelope(p: &BulkParams, times: &[f64]) -> BulkEnvelope {
    let n = p.node_count as f64;
    let sigma1 = p.reactance_diff * (p.b0 + (n - 1.0) * p.b1);
    let sigma2 = -p.reactance_diff * (p.b0 - (n - 1.0) * p.b1);
    let sigma2_literal = -p.reactance_diff * (p.b0 + (n - 1.0) * p.b1);
    let td = p.voltage_time_constant;
    let ef = p.field_voltage;
    let (up_rate, lo_rate) = ((1.0 - sigma1) / td, (1.0 + sigma2) / td);

    let curve = |rate: f64, asym: f64| -> Vec<f64> {
        times
            .iter()
            .map(|&t| relaxation(p.e_bar_0, asym, rate, t))
            .collect()
    };
    BulkEnvelope {
        times: times.to_vec(),
        upper_bound: curve(up_rate, ef / (1.0 - sigma1)),
        lower_bound: curve(lo_rate, ef / (1.0 + sigma2)),
        upper_bound_literal: curve(up_rate, ef / (td * (1.0 - sigma1))),
        lower_bound_literal: curve(lo_rate, ef / (td * (1.0 + sigma2))),
        sigma1,
        sigma2,
        sigma2_literal,
        bounded: 1.0 - sigma1 > 0.0 && 1.0 + sigma2_literal > 0.0,
        bounded_operative: 1.0 - sigma1 > 0.0 && 1.0 + sigma2 > 0.0,
        td_factor_discrepancy: td != 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleRange {
    pub n_min: f64,
    pub n_max: f64,
    /// Integers `N >= 2` in `[n_min, n_max]`.
    pub admissible: Vec<usize>,
    /// Listing stopped at [`MAX_LISTED_SIZE`].
    pub truncated: bool,
}

pub const MAX_LISTED_SIZE: usize = 1_000_000;

/// Network sizes `1 -+ X (1 - B0) / B1` between which the mean voltage
/// stays bounded.
pub fn admissible_network_size(x: f64, b0: f64, b1: f64) -> Result<AdmissibleRange, BulkError> {
    if b1 == 0.0 {
        return Err(BulkError::ZeroLinkSusceptance);
    }
    let half = x * (1.0 - b0) / b1;
    let (n_min, n_max) = {
        let (a, b) = (1.0 - half, 1.0 + half);
        (a.min(b), a.max(b))
    };
    let eps = 1e-12;
    let lo = (n_min - eps).ceil().max(2.0);
    let hi = (n_max + eps).floor();
    let mut admissible = Vec::new();
    let mut truncated = false;
    if hi >= lo {
        let hi_capped = hi.min(MAX_LISTED_SIZE as f64);
        truncated = hi > hi_capped;
        admissible = (lo as usize..=hi_capped as usize).collect();
    }
    Ok(AdmissibleRange {
        n_min,
        n_max,
        admissible,
        truncated,
    })
}

/// Node means of every sampled state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSeries {
    pub times: Vec<f64>,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub voltage: Vec<f64>,
}

impl MeanSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Average of `series` over samples with `t` in `[from, to]`.
    pub fn window_mean(&self, series: &[f64], from: f64, to: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .times
            .iter()
            .zip(series)
            .filter(|(t, _)| **t >= from - 1e-9 && **t <= to + 1e-9)
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| mean(&vals))
    }
}

pub fn bulk_mean_series(traj: &Trajectory) -> Result<MeanSeries, BulkError> {
    if traj.is_empty() {
        return Err(BulkError::EmptyTrajectory);
    }
    Ok(MeanSeries {
        times: traj.times.clone(),
        theta: traj.states.iter().map(SimState::mean_theta).collect(),
        omega: traj.states.iter().map(SimState::mean_omega).collect(),
        voltage: traj.states.iter().map(SimState::mean_voltage).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(gamma: f64) -> BulkParams {
        BulkParams {
            alpha: 0.2,
            gamma,
            node_count: 2,
            sum_power: 1.0,
            ramps: vec![],
            theta_bar_0: 0.0,
            omega_bar_0: 0.0,
            e_bar_0: 1.14,
            voltage_time_constant: 2.0,
            field_voltage: 1.0,
            reactance_diff: 1.0,
            b0: -0.8,
            b1: 1.0,
        }
    }

    #[test]
    fn controlled_asymptote() {
        let p = params(1.0);
        let (x, v) = analytic_bulk_constant_voltage(&p, 400.0);
        assert_relative_eq!(x, 0.5, epsilon = 1e-12);
        assert!(v.abs() < 1e-12);
        assert_eq!(p.theta_bar_asymptote(), Some(0.5));
    }

    #[test]
    fn uncontrolled_asymptote() {
        let p = params(0.0);
        let (_, v) = analytic_bulk_constant_voltage(&p, 400.0);
        assert_relative_eq!(v, 2.5, epsilon = 1e-12);
        assert_relative_eq!(p.omega_bar_asymptote(), 2.5);
    }

    #[test]
    fn critical_damping_roots() {
        assert_eq!(
            characteristic_roots(0.2, 0.01),
            CharacteristicRoots::Repeated { r: -0.1 }
        );
        assert!(matches!(characteristic_roots(0.2, 1.0), CharacteristicRoots::Complex { .. }));
        assert!(matches!(characteristic_roots(3.0, 1.0), CharacteristicRoots::Distinct { .. }));
    }

    #[test]
    fn segments_satisfy_the_ode() {
        // check x'' + alpha x' + gamma x = a + b s by differentiating v numerically
        for gamma in [0.0, 0.01, 0.5, 1.0, 2.0] {
            let (alpha, a, b) = (0.2, 0.3, -0.05);
            let h = 1e-5;
            for s in [0.5, 3.0, 10.0] {
                let (x, v) = affine_segment(alpha, gamma, a, b, 0.4, -0.2, s);
                let (xp, vp) = affine_segment(alpha, gamma, a, b, 0.4, -0.2, s + h);
                let (xm, vm) = affine_segment(alpha, gamma, a, b, 0.4, -0.2, s - h);
                let acc = (vp - vm) / (2.0 * h);
                assert_relative_eq!((xp - xm) / (2.0 * h), v, epsilon = 1e-8);
                assert_relative_eq!(acc + alpha * v + gamma * x, a + b * s, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn ramp_is_continuous_across_breakpoints() {
        let mut p = params(1.0);
        p.ramps.push(PowerRamp {
            t_start: 40.0,
            t_end: 42.0,
            delta: 1.0,
        });
        for tb in [40.0, 42.0] {
            let a = analytic_bulk_constant_voltage(&p, tb - 1e-9);
            let b = analytic_bulk_constant_voltage(&p, tb + 1e-9);
            assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8);
        }
        let (x, _) = analytic_bulk_constant_voltage(&p, 500.0);
        assert_relative_eq!(x, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn envelope_sigmas() {
        let p = params(1.0);
        let env = voltage_envelope(&p, &[0.0, 1.0, 10.0]);
        assert_relative_eq!(env.sigma1, 0.2, epsilon = 1e-12);
        assert!(env.bounded);
        assert_relative_eq!(env.upper_bound[0], 1.14);
        for k in 0..3 {
            assert!(env.lower_bound[k] <= env.upper_bound[k]);
        }

        let mut big = params(1.0);
        big.node_count = 50;
        let env = voltage_envelope(&big, &[0.0]);
        assert_relative_eq!(env.sigma1, 48.2, epsilon = 1e-12);
        assert!(!env.bounded);
    }

    #[test]
    fn decoupled_envelope() {
        let mut p = params(0.0);
        p.reactance_diff = 0.0;
        let times = [0.0, 0.5, 3.0];
        let env = voltage_envelope(&p, &times);
        assert_eq!(env.sigma1, 0.0);
        assert_eq!(env.sigma2, 0.0);
        for (k, &t) in times.iter().enumerate() {
            let expected = relaxation(1.14, 1.0, 0.5, t);
            assert_relative_eq!(env.upper_bound[k], expected, epsilon = 1e-14);
            assert_relative_eq!(env.lower_bound[k], expected, epsilon = 1e-14);
        }
        assert!(env.td_factor_discrepancy);
    }

    #[test]
    fn admissible_sizes() {
        let r = admissible_network_size(1.0, -0.8, 1.0).unwrap();
        assert_relative_eq!(r.n_min, -0.8, epsilon = 1e-12);
        assert_relative_eq!(r.n_max, 2.8, epsilon = 1e-12);
        assert_eq!(r.admissible, vec![2]);

        let r = admissible_network_size(0.0, -0.8, 1.0).unwrap();
        assert_eq!((r.n_min, r.n_max), (1.0, 1.0));
        assert!(r.admissible.is_empty());

        let r = admissible_network_size(1.0, -0.8, 0.5).unwrap();
        assert_relative_eq!(r.n_min, -2.6, epsilon = 1e-12);
        assert_relative_eq!(r.n_max, 4.6, epsilon = 1e-12);
        assert_eq!(r.admissible, vec![2, 3, 4]);

        assert_eq!(
            admissible_network_size(1.0, -0.8, 0.0),
            Err(BulkError::ZeroLinkSusceptance)
        );
    }

    #[test]
    fn from_model_requires_uniform_coupling() {
        use crate::model::{GridModel, NodeParams, SimState};
        use crate::topology::{all_to_all_susceptance, TopologySpec};
        let nodes = vec![NodeParams::reduced(0.0, 0.2, 1.0, 1.0, 1.0, 1.0); 3];
        let b = all_to_all_susceptance(&TopologySpec::all_to_all(3, -0.8, 1.0)).unwrap();
        let init = SimState::uniform(3, 0.0, 0.0, 1.0);
        let m = GridModel::new(nodes.clone(), b.clone(), 50.0).unwrap();
        let p = BulkParams::from_model(&m, &init, &[]).unwrap();
        assert_eq!((p.b0, p.b1), (-0.8, 1.0));

        let mut skew = b;
        skew[(1, 2)] = 0.5;
        skew[(2, 1)] = 0.5;
        let m = GridModel::new(nodes, skew, 50.0).unwrap();
        assert_eq!(
            BulkParams::from_model(&m, &init, &[]),
            Err(BulkError::NonUniformCoupling)
        );
    }
}
