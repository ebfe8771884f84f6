//! Right-hand sides of the machine network and a fixed-step RK4 integrator.
//!
//! The reduced model (instantaneous controller) reads, per node `i`,
//!
//! ```text
//! theta_i'     = omega_i
//! omega_i'     = -alpha_i omega_i - gamma_i theta_i + P_i(t)
//!                - sum_j E_i B_ij E_j sin(theta_i - theta_j)
//! T_i E_i'     = Ef_i - E_i + X_i sum_j B_ij E_j cos(theta_i - theta_j)
//! ```
//!
//! The full model replaces `-gamma_i theta_i` by a lagged controller output
//! `u_i` with `tau_i u_i' = -u_i - gamma_i theta_i - beta_i omega_i`.
//!
//! Both coupling sums are evaluated through the product expansion
//! `sin(a - b) = sin a cos b - cos a sin b`, which turns the `O(N^2)` trig
//! calls into two matrix-vector products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GridModel, SimState};

/// Linear power ramp on one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// Zero-based node index in the model.
    pub node: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub delta_power: f64,
}

impl Perturbation {
    /// Fraction of `delta_power` applied at time `t`.
    pub fn fraction(&self, t: f64) -> f64 {
        if t <= self.t_start {
            0.0
        } else if t >= self.t_end {
            1.0
        } else {
            (t - self.t_start) / (self.t_end - self.t_start)
        }
    }
}

pub fn validate_perturbations(
    perturbations: &[Perturbation],
    node_count: usize,
) -> Result<(), DynamicsError> {
    for (index, p) in perturbations.iter().enumerate() {
        let reason = if p.node >= node_count {
            Some(format!("node {} does not exist ({} nodes)", p.node, node_count))
        } else if !(p.t_start.is_finite() && p.t_end.is_finite() && p.delta_power.is_finite()) {
            Some("non-finite ramp parameters".to_string())
        } else if p.t_end <= p.t_start {
            Some(format!(
                "t_end ({}) must be greater than t_start ({})",
                p.t_end, p.t_start
            ))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(DynamicsError::InvalidPerturbation { index, reason });
        }
    }
    Ok(())
}

/// Scheduled power of every node at time `t`.
pub fn ramp_power(t: f64, base: &[f64], perturbations: &[Perturbation]) -> Vec<f64> {
    let mut out = base.to_vec();
    apply_ramps(t, perturbations, &mut out);
    out
}

fn apply_ramps(t: f64, perturbations: &[Perturbation], power: &mut [f64]) {
    for p in perturbations {
        power[p.node] += p.fraction(t) * p.delta_power;
    }
}

/// Powers once every ramp has completed.
pub fn final_powers(base: &[f64], perturbations: &[Perturbation]) -> Vec<f64> {
    let mut out = base.to_vec();
    for p in perturbations {
        out[p.node] += p.delta_power;
    }
    out
}

/// Which set of equations to integrate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    /// Instantaneous controller (`tau_g = 0`, derivative gain in damping).
    #[default]
    Reduced,
    /// Lagged controller with explicit control state `u`.
    Full,
    /// Reduced phase dynamics with voltages frozen at their initial values.
    ConstantVoltage,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("state has {found} components, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("node {node} has zero controller time constant; use the reduced model")]
    ZeroControllerTimeConstant { node: usize },
    #[error("the full model needs a control state u")]
    MissingControl,
    #[error("control state u is only valid for the full model")]
    UnexpectedControl,
    #[error("perturbation {index}: {reason}")]
    InvalidPerturbation { index: usize, reason: String },
    #[error("invalid integrator settings: {0}")]
    InvalidSettings(String),
    #[error("trajectory diverged at t = {time}")]
    Diverged {
        time: f64,
        /// Last state whose components were all finite and within bounds.
        last_state: Box<SimState>,
        last_time: f64,
    },
}

/// Evaluates a model right-hand side on flat state vectors.
///
/// Owns the scratch buffers so repeated evaluation does not allocate.
pub struct NetworkRhs<'a> {
    model: &'a GridModel,
    perturbations: &'a [Perturbation],
    form: ModelForm,
    n: usize,
    b: &'a DMatrix<f64>,
    base_power: Vec<f64>,
    power: Vec<f64>,
    sin: DVector<f64>,
    cos: DVector<f64>,
    weighted_cos: DVector<f64>,
    weighted_sin: DVector<f64>,
    acc_cos: DVector<f64>,
    acc_sin: DVector<f64>,
}

impl<'a> NetworkRhs<'a> {
    pub fn new(
        model: &'a GridModel,
        perturbations: &'a [Perturbation],
        form: ModelForm,
    ) -> Result<Self, DynamicsError> {
        let n = model.node_count();
        validate_perturbations(perturbations, n)?;
        if form == ModelForm::Full {
            if let Some(node) = model
                .nodes
                .iter()
                .position(|p| p.controller_time_constant <= 0.0)
            {
                return Err(DynamicsError::ZeroControllerTimeConstant { node });
            }
        }
        Ok(Self {
            model,
            perturbations,
            form,
            n,
            b: &model.susceptance,
            base_power: model.power_setpoints(),
            power: vec![0.0; n],
            sin: DVector::zeros(n),
            cos: DVector::zeros(n),
            weighted_cos: DVector::zeros(n),
            weighted_sin: DVector::zeros(n),
            acc_cos: DVector::zeros(n),
            acc_sin: DVector::zeros(n),
        })
    }

    pub fn dimension(&self) -> usize {
        match self.form {
            ModelForm::Full => 4 * self.n,
            _ => 3 * self.n,
        }
    }

    pub fn form(&self) -> ModelForm {
        self.form
    }

    /// Writes `dy = f(t, y)`.
    pub fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let (theta, rest) = y.split_at(n);
        let (omega, rest) = rest.split_at(n);
        let voltage = &rest[..n];

        self.power.copy_from_slice(&self.base_power);
        apply_ramps(t, self.perturbations, &mut self.power);

        for i in 0..n {
            let (s, c) = theta[i].sin_cos();
            self.sin[i] = s;
            self.cos[i] = c;
            self.weighted_cos[i] = voltage[i] * c;
            self.weighted_sin[i] = voltage[i] * s;
        }
        // acc_cos_i = sum_j B_ij E_j cos(theta_j), acc_sin_i likewise
        self.acc_cos.gemv(1.0, self.b, &self.weighted_cos, 0.0);
        self.acc_sin.gemv(1.0, self.b, &self.weighted_sin, 0.0);

        for i in 0..n {
            let node = &self.model.nodes[i];
            let (s, c) = (self.sin[i], self.cos[i]);
            // sum_j B_ij E_j sin(theta_i - theta_j), and the cos analogue
            let sin_sum = s * self.acc_cos[i] - c * self.acc_sin[i];
            let cos_sum = c * self.acc_cos[i] + s * self.acc_sin[i];
            let flow = voltage[i] * sin_sum;

            dy[i] = omega[i];
            let control = match self.form {
                ModelForm::Full => y[3 * n + i],
                _ => -node.secondary_gain * theta[i],
            };
            dy[n + i] = -node.damping * omega[i] + self.power[i] - flow + control;
            dy[2 * n + i] = match self.form {
                ModelForm::ConstantVoltage => 0.0,
                _ => {
                    (node.field_voltage - voltage[i] + node.reactance_diff * cos_sum)
                        / node.voltage_time_constant
                }
            };
            if self.form == ModelForm::Full {
                let u = y[3 * n + i];
                dy[3 * n + i] = (-u - node.secondary_gain * theta[i]
                    - node.derivative_gain * omega[i])
                    / node.controller_time_constant;
            }
        }
    }
}

fn check_state(state: &SimState, n: usize, form: ModelForm) -> Result<(), DynamicsError> {
    let expected = if form == ModelForm::Full { 4 * n } else { 3 * n };
    if !state.is_consistent() || state.node_count() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected,
            found: state.dimension(),
        });
    }
    match (form, state.control.is_some()) {
        (ModelForm::Full, false) => Err(DynamicsError::MissingControl),
        (ModelForm::Reduced | ModelForm::ConstantVoltage, true) => {
            Err(DynamicsError::UnexpectedControl)
        }
        _ => Ok(()),
    }
}

fn eval_state(
    t: f64,
    state: &SimState,
    model: &GridModel,
    perturbations: &[Perturbation],
    form: ModelForm,
) -> Result<SimState, DynamicsError> {
    let n = model.node_count();
    check_state(state, n, form)?;
    let mut rhs = NetworkRhs::new(model, perturbations, form)?;
    let y = state.to_flat();
    let mut dy = vec![0.0; y.len()];
    rhs.eval(t, &y, &mut dy);
    Ok(SimState::from_flat(&dy, n, form == ModelForm::Full))
}

/// Time derivative of the reduced model; the result is laid out as a state.
pub fn rhs_reduced(
    t: f64,
    state: &SimState,
    model: &GridModel,
    perturbations: &[Perturbation],
) -> Result<SimState, DynamicsError> {
    eval_state(t, state, model, perturbations, ModelForm::Reduced)
}

/// Time derivative of the full model with lagged controller state.
pub fn rhs_full(
    t: f64,
    state: &SimState,
    model: &GridModel,
    perturbations: &[Perturbation],
) -> Result<SimState, DynamicsError> {
    eval_state(t, state, model, perturbations, ModelForm::Full)
}

/// Classical fourth-order Runge-Kutta stepper with reusable stage buffers.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dimension: usize) -> Self {
        Self {
            k1: vec![0.0; dimension],
            k2: vec![0.0; dimension],
            k3: vec![0.0; dimension],
            k4: vec![0.0; dimension],
            tmp: vec![0.0; dimension],
        }
    }

    /// Advances `y` from `t` to `t + dt` in place.
    pub fn step<F>(&mut self, f: &mut F, t: f64, y: &mut [f64], dt: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let half = 0.5 * dt;
        f(t, y, &mut self.k1);
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *tmp = yi + half * k;
        }
        f(t + half, &self.tmp, &mut self.k2);
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *tmp = yi + half * k;
        }
        f(t + half, &self.tmp, &mut self.k3);
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *tmp = yi + dt * k;
        }
        f(t + dt, &self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub dt: f64,
    pub t_final: f64,
    /// Keep every `sample_stride`-th step.
    pub sample_stride: usize,
    /// Halt once any component exceeds this magnitude.
    pub blowup_bound: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_final: 200.0,
            sample_stride: 10,
            blowup_bound: 1e6,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidSettings(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(DynamicsError::InvalidSettings(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        if self.sample_stride == 0 {
            return Err(DynamicsError::InvalidSettings(
                "sample_stride must be at least 1".into(),
            ));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(DynamicsError::InvalidSettings(
                "blowup_bound must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    pub fn sample_interval(&self) -> f64 {
        self.dt * self.sample_stride as f64
    }
}

/// First sample at which some voltage amplitude left the physical range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageExcursion {
    pub time: f64,
    pub node: usize,
    pub value: f64,
}

/// Sampled solution of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SimState>,
    pub form: ModelForm,
    pub settings: IntegratorSettings,
    /// Set when some `E_i <= 0` was observed at an integration step.
    pub nonpositive_voltage: Option<VoltageExcursion>,
}

impl Trajectory {
    pub fn node_count(&self) -> usize {
        self.states.first().map_or(0, SimState::node_count)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &SimState {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let eps = 1e-9 * self.settings.dt;
        self.times.partition_point(|&s| s < t - eps)
    }

    /// Sample closest to time `t`.
    pub fn state_at(&self, t: f64) -> &SimState {
        let i = self.index_at(t).min(self.len() - 1);
        &self.states[i]
    }
}

/// Integrates `model` from `initial` with fixed-step RK4.
///
/// Samples are taken at `t = k * dt` for every multiple `k` of the sample
/// stride, plus the initial state at `t = 0`.
pub fn integrate(
    model: &GridModel,
    initial: &SimState,
    perturbations: &[Perturbation],
    settings: &IntegratorSettings,
    form: ModelForm,
) -> Result<Trajectory, DynamicsError> {
    settings.validate()?;
    let n = model.node_count();
    check_state(initial, n, form)?;
    let mut rhs = NetworkRhs::new(model, perturbations, form)?;
    let with_control = form == ModelForm::Full;

    let mut y = initial.to_flat();
    let mut stepper = Rk4::new(y.len());
    let steps = settings.step_count();
    let stride = settings.sample_stride;

    let mut times = Vec::with_capacity(steps / stride + 1);
    let mut states = Vec::with_capacity(steps / stride + 1);
    times.push(0.0);
    states.push(initial.clone());
    let mut nonpositive_voltage = first_nonpositive(0.0, &y[2 * n..3 * n]);

    let mut last_good = y.clone();
    let mut last_good_time = 0.0;
    let mut eval = |t: f64, y: &[f64], dy: &mut [f64]| rhs.eval(t, y, dy);
    for k in 0..steps {
        let t = k as f64 * settings.dt;
        stepper.step(&mut eval, t, &mut y, settings.dt);
        let t_next = (k + 1) as f64 * settings.dt;

        if y
            .iter()
            .any(|v| !v.is_finite() || v.abs() > settings.blowup_bound)
        {
            return Err(DynamicsError::Diverged {
                time: t_next,
                last_state: Box::new(SimState::from_flat(&last_good, n, with_control)),
                last_time: last_good_time,
            });
        }
        if nonpositive_voltage.is_none() {
            nonpositive_voltage = first_nonpositive(t_next, &y[2 * n..3 * n]);
        }
        last_good.copy_from_slice(&y);
        last_good_time = t_next;
        if (k + 1) % stride == 0 {
            times.push(t_next);
            states.push(SimState::from_flat(&y, n, with_control));
        }
    }

    Ok(Trajectory {
        times,
        states,
        form,
        settings: *settings,
        nonpositive_voltage,
    })
}

fn first_nonpositive(time: f64, voltage: &[f64]) -> Option<VoltageExcursion> {
    voltage
        .iter()
        .position(|&e| e <= 0.0)
        .map(|node| VoltageExcursion {
            time,
            node,
            value: voltage[node],
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reduce_full_model, NodeParams};

    fn two_node(power: [f64; 2], gamma: f64, td: f64) -> GridModel {
        let nodes = power
            .iter()
            .map(|&p| NodeParams::reduced(p, 0.2, gamma, td, 1.0, 1.0))
            .collect();
        GridModel::new(
            nodes,
            DMatrix::from_row_slice(2, 2, &[-0.8, 1.0, 1.0, -0.8]),
            50.0,
        )
        .unwrap()
    }

    fn ramp() -> Vec<Perturbation> {
        vec![Perturbation {
            node: 0,
            t_start: 40.0,
            t_end: 42.0,
            delta_power: 1.0,
        }]
    }

    #[test]
    fn ramp_is_piecewise_linear() {
        let base = [0.3, -0.3];
        assert_eq!(ramp_power(39.0, &base, &ramp()), vec![0.3, -0.3]);
        let mid = ramp_power(41.0, &base, &ramp());
        assert!((mid[0] - 0.8).abs() < 1e-15);
        assert_eq!(ramp_power(100.0, &base, &ramp()), vec![1.3, -0.3]);
        assert_eq!(final_powers(&base, &ramp()), vec![1.3, -0.3]);
    }

    #[test]
    fn rejects_inverted_ramp() {
        let bad = [Perturbation {
            node: 1,
            t_start: 42.0,
            t_end: 40.0,
            delta_power: 1.0,
        }];
        assert!(matches!(
            validate_perturbations(&bad, 2),
            Err(DynamicsError::InvalidPerturbation { index: 0, .. })
        ));
        let missing = [Perturbation { node: 5, ..bad[0] }];
        assert!(validate_perturbations(&missing, 2).is_err());
    }

    #[test]
    fn balanced_two_node_fixed_point_has_zero_derivative() {
        // E* = Ef / (1 - X (B0 + B1)) = 1 / 0.8
        let m = two_node([0.0, 0.0], 0.0, 2.0);
        let s = SimState::uniform(2, 0.0, 0.0, 1.25);
        let d = rhs_reduced(0.0, &s, &m, &[]).unwrap();
        assert!(d.max_abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn equal_phases_carry_no_flow() {
        let m = two_node([0.0, 0.0], 0.0, 2.0);
        let s = SimState::new(vec![0.7, 0.7], vec![0.0, 0.0], vec![1.1, 0.9]);
        let d = rhs_reduced(0.0, &s, &m, &[]).unwrap();
        assert_eq!(d.theta, vec![0.0, 0.0]);
        for w in d.omega {
            assert!(w.abs() < 1e-15);
        }
    }

    #[test]
    fn full_model_controller_manifold() {
        let mut m = two_node([0.3, -0.3], 1.0, 2.0);
        for node in &mut m.nodes {
            node.controller_time_constant = 0.1;
            node.derivative_gain = 0.3;
        }
        let theta = vec![0.2, -0.1];
        let omega = vec![0.05, -0.4];
        let u: Vec<f64> = (0..2).map(|i| -theta[i] - 0.3 * omega[i]).collect();
        let s = SimState::new(theta, omega, vec![1.1, 1.0]).with_control(u);
        let d = rhs_full(0.0, &s, &m, &[]).unwrap();
        for du in d.control.unwrap() {
            assert!(du.abs() < 1e-15);
        }
    }

    #[test]
    fn full_model_balanced_fixed_point() {
        let mut m = two_node([0.0, 0.0], 1.0, 2.0);
        for node in &mut m.nodes {
            node.controller_time_constant = 0.5;
        }
        let s = SimState::uniform(2, 0.0, 0.0, 1.25).with_control(vec![0.0, 0.0]);
        let d = rhs_full(0.0, &s, &m, &[]).unwrap();
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn full_model_requires_lag() {
        let m = two_node([0.0, 0.0], 1.0, 2.0);
        let s = SimState::uniform(2, 0.0, 0.0, 1.0).with_control(vec![0.0, 0.0]);
        assert_eq!(
            rhs_full(0.0, &s, &m, &[]),
            Err(DynamicsError::ZeroControllerTimeConstant { node: 0 })
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = two_node([0.0, 0.0], 0.0, 2.0);
        let s = SimState::uniform(3, 0.0, 0.0, 1.0);
        assert!(matches!(
            rhs_reduced(0.0, &s, &m, &[]),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_step_run_echoes_initial_state() {
        let m = two_node([0.3, -0.3], 1.0, 2.0);
        let s = SimState::uniform(2, 0.0, 0.0, 1.14);
        let settings = IntegratorSettings {
            dt: 0.01,
            t_final: 0.01,
            sample_stride: 10,
            ..Default::default()
        };
        let traj = integrate(&m, &s, &[], &settings, ModelForm::Reduced).unwrap();
        assert!(!traj.is_empty());
        assert_eq!(traj.states[0], s);
        assert_eq!(traj.times[0], 0.0);
    }

    #[test]
    fn stationary_without_control_or_imbalance() {
        let m = two_node([0.0, 0.0], 0.0, 2.0);
        let s = SimState::uniform(2, 0.0, 0.0, 1.25);
        let settings = IntegratorSettings {
            t_final: 50.0,
            ..Default::default()
        };
        let traj = integrate(&m, &s, &[], &settings, ModelForm::Reduced).unwrap();
        for st in &traj.states {
            assert_eq!(st.theta, vec![0.0, 0.0]);
            assert_eq!(st.omega, vec![0.0, 0.0]);
            for e in &st.voltage {
                assert!((e - 1.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blow_up_is_detected() {
        // 10 all-to-all nodes in phase: the voltage mode grows like exp(7.2 t)
        let n = 10;
        let nodes = vec![NodeParams::reduced(0.0, 0.2, 0.0, 1.0, 1.0, 1.0); n];
        let b = DMatrix::from_fn(n, n, |i, j| if i == j { -0.8 } else { 1.0 });
        let m = GridModel::new(nodes, b, 50.0).unwrap();
        let s = SimState::uniform(n, 0.0, 0.0, 1.14);
        let settings = IntegratorSettings {
            t_final: 20.0,
            ..Default::default()
        };
        match integrate(&m, &s, &[], &settings, ModelForm::Reduced) {
            Err(DynamicsError::Diverged {
                time,
                last_state,
                last_time,
            }) => {
                assert!(time > 0.0 && time < 20.0);
                assert!(last_state.is_finite());
                assert!(last_time < time);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_matches_rhs_by_central_differences() {
        let m = two_node([0.3, -0.3], 1.0, 2.0);
        let s = SimState::uniform(2, 0.0, 0.0, 1.14);
        let settings = IntegratorSettings {
            dt: 0.001,
            t_final: 60.0,
            sample_stride: 1,
            ..Default::default()
        };
        let traj = integrate(&m, &s, &ramp(), &settings, ModelForm::Reduced).unwrap();
        let h = settings.dt;
        for &t in &[5.0, 20.0, 41.0, 55.0] {
            let k = traj.index_at(t);
            let fd: Vec<f64> = traj.states[k + 1]
                .to_flat()
                .iter()
                .zip(traj.states[k - 1].to_flat())
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let d = rhs_reduced(traj.times[k], &traj.states[k], &m, &ramp())
                .unwrap()
                .to_flat();
            let err = fd
                .iter()
                .zip(&d)
                .fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
            // central differences are O(h^2) accurate
            assert!(err < 1e-5, "t = {t}: {err}");
        }
    }

    #[test]
    fn reduced_limit_of_full_model() {
        let mut full = two_node([0.3, -0.3], 1.0, 2.0);
        for node in &mut full.nodes {
            node.derivative_gain = 0.1;
        }
        let reduced = reduce_full_model(&full);
        let settings = IntegratorSettings {
            dt: 0.0005,
            t_final: 80.0,
            sample_stride: 20,
            ..Default::default()
        };
        let init = SimState::uniform(2, 0.0, 0.0, 1.14);
        let reference = integrate(&reduced, &init, &ramp(), &settings, ModelForm::Reduced).unwrap();

        let mut gaps = Vec::new();
        for tau in [1e-1, 1e-2, 1e-3] {
            let mut m = full.clone();
            for node in &mut m.nodes {
                node.controller_time_constant = tau;
            }
            let start = init.clone().with_control(vec![0.0, 0.0]);
            let traj = integrate(&m, &start, &ramp(), &settings, ModelForm::Full).unwrap();
            let gap = traj
                .states
                .iter()
                .zip(&reference.states)
                .flat_map(|(a, b)| a.omega.iter().zip(&b.omega).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            gaps.push(gap);
        }
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!(gaps[2] < 1e-3, "{gaps:?}");
    }
}
