//! Grid model data: per-node machine and controller parameters, the
//! susceptance matrix, and the machine state vector.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameters of a single machine and its frequency controller.
///
/// All quantities are per-unit. `damping` is the primary-control coefficient
/// and already includes any absorbed derivative gain in the reduced model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    /// Scheduled power, positive for generators and negative for consumers.
    pub power_setpoint: f64,
    pub damping: f64,
    /// Integral (secondary) frequency-control gain.
    pub secondary_gain: f64,
    /// Transient open-circuit time constant of the voltage dynamics.
    pub voltage_time_constant: f64,
    pub field_voltage: f64,
    /// Difference between synchronous and transient reactance.
    pub reactance_diff: f64,
    /// Controller lag; zero selects the instantaneous (reduced) controller.
    pub controller_time_constant: f64,
    /// Derivative gain of the controller; only meaningful while
    /// `controller_time_constant > 0`.
    pub derivative_gain: f64,
}

impl NodeParams {
    /// Machine with no controller lag and no derivative term.
    pub fn reduced(
        power_setpoint: f64,
        damping: f64,
        secondary_gain: f64,
        voltage_time_constant: f64,
        field_voltage: f64,
        reactance_diff: f64,
    ) -> Self {
        Self {
            power_setpoint,
            damping,
            secondary_gain,
            voltage_time_constant,
            field_voltage,
            reactance_diff,
            controller_time_constant: 0.0,
            derivative_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("a grid model needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("susceptance matrix is {rows}x{cols} but the model has {nodes} nodes")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        nodes: usize,
    },
    #[error("susceptance matrix is not symmetric: B[{row}][{col}] = {upper} but B[{col}][{row}] = {lower}")]
    NonSymmetricSusceptance {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },
    #[error("node {node}: {parameter} must be positive, got {value}")]
    NonPositiveTimeConstant {
        node: usize,
        parameter: &'static str,
        value: f64,
    },
    #[error("node {node}: {parameter} must be non-negative, got {value}")]
    NegativeGain {
        node: usize,
        parameter: &'static str,
        value: f64,
    },
    #[error("node {node}: {parameter} must be positive, got {value}")]
    NonPositiveParameter {
        node: usize,
        parameter: &'static str,
        value: f64,
    },
    #[error("node {node}: {parameter} is not finite")]
    NonFinite { node: usize, parameter: &'static str },
    #[error("susceptance entry B[{row}][{col}] is not finite")]
    NonFiniteSusceptance { row: usize, col: usize },
}

/// A network of machines coupled through a symmetric susceptance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub nodes: Vec<NodeParams>,
    pub susceptance: DMatrix<f64>,
    /// Display offset added to frequency columns of trajectory output (Hz).
    pub nominal_frequency: f64,
}

impl GridModel {
    /// Builds and validates a model.
    pub fn new(
        nodes: Vec<NodeParams>,
        susceptance: DMatrix<f64>,
        nominal_frequency: f64,
    ) -> Result<Self, ModelError> {
        validate_model(Self {
            nodes,
            susceptance,
            nominal_frequency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// True when no node applies secondary control; the linearization then
    /// has a neutral global phase-shift direction.
    pub fn gamma_all_zero(&self) -> bool {
        self.nodes.iter().all(|n| n.secondary_gain == 0.0)
    }

    /// True when every node uses the instantaneous controller.
    pub fn is_reduced(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.controller_time_constant == 0.0 && n.derivative_gain == 0.0)
    }

    pub fn total_power(&self) -> f64 {
        self.nodes.iter().map(|n| n.power_setpoint).sum()
    }

    pub fn power_setpoints(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.power_setpoint).collect()
    }

    /// Copy of the model with each node's scheduled power replaced.
    pub fn with_powers(&self, powers: &[f64]) -> Self {
        let mut out = self.clone();
        for (node, &p) in out.nodes.iter_mut().zip(powers) {
            node.power_setpoint = p;
        }
        out
    }

    /// Returns the node parameters if all nodes share identical values for
    /// damping, gain, time constant, field voltage and reactance.
    pub fn uniform_params(&self) -> Option<NodeParams> {
        let first = self.nodes[0];
        let same = self.nodes.iter().all(|n| {
            n.damping == first.damping
                && n.secondary_gain == first.secondary_gain
                && n.voltage_time_constant == first.voltage_time_constant
                && n.field_voltage == first.field_voltage
                && n.reactance_diff == first.reactance_diff
        });
        same.then_some(first)
    }
}

/// Checks every structural and parameter invariant of `model`.
pub fn validate_model(model: GridModel) -> Result<GridModel, ModelError> {
    let n = model.nodes.len();
    if n < 2 {
        return Err(ModelError::TooFewNodes(n));
    }
    let b = &model.susceptance;
    if b.nrows() != n || b.ncols() != n {
        return Err(ModelError::DimensionMismatch {
            rows: b.nrows(),
            cols: b.ncols(),
            nodes: n,
        });
    }
    for row in 0..n {
        for col in 0..n {
            if !b[(row, col)].is_finite() {
                return Err(ModelError::NonFiniteSusceptance { row, col });
            }
        }
    }
    for row in 0..n {
        for col in (row + 1)..n {
            if b[(row, col)] != b[(col, row)] {
                return Err(ModelError::NonSymmetricSusceptance {
                    row,
                    col,
                    upper: b[(row, col)],
                    lower: b[(col, row)],
                });
            }
        }
    }
    for (i, node) in model.nodes.iter().enumerate() {
        check_node(i, node)?;
    }
    Ok(model)
}

fn check_node(i: usize, p: &NodeParams) -> Result<(), ModelError> {
    let fields = [
        ("power_setpoint", p.power_setpoint),
        ("damping", p.damping),
        ("secondary_gain", p.secondary_gain),
        ("voltage_time_constant", p.voltage_time_constant),
        ("field_voltage", p.field_voltage),
        ("reactance_diff", p.reactance_diff),
        ("controller_time_constant", p.controller_time_constant),
        ("derivative_gain", p.derivative_gain),
    ];
    for (parameter, value) in fields {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { node: i, parameter });
        }
    }
    if p.voltage_time_constant <= 0.0 {
        return Err(ModelError::NonPositiveTimeConstant {
            node: i,
            parameter: "voltage_time_constant",
            value: p.voltage_time_constant,
        });
    }
    if p.controller_time_constant < 0.0 {
        return Err(ModelError::NonPositiveTimeConstant {
            node: i,
            parameter: "controller_time_constant",
            value: p.controller_time_constant,
        });
    }
    if p.secondary_gain < 0.0 {
        return Err(ModelError::NegativeGain {
            node: i,
            parameter: "secondary_gain",
            value: p.secondary_gain,
        });
    }
    if p.derivative_gain < 0.0 {
        return Err(ModelError::NegativeGain {
            node: i,
            parameter: "derivative_gain",
            value: p.derivative_gain,
        });
    }
    if p.damping <= 0.0 {
        return Err(ModelError::NonPositiveParameter {
            node: i,
            parameter: "damping",
            value: p.damping,
        });
    }
    if p.field_voltage <= 0.0 {
        return Err(ModelError::NonPositiveParameter {
            node: i,
            parameter: "field_voltage",
            value: p.field_voltage,
        });
    }
    Ok(())
}

/// Replaces the lagged PD controller by its instantaneous limit.
///
/// With `tau_g = 0` the controller output is `u = -gamma*theta - beta*omega`;
/// the derivative part acts exactly like extra damping, so `beta` is folded
/// into `damping`.
pub fn reduce_full_model(model: &GridModel) -> GridModel {
    let mut out = model.clone();
    for node in &mut out.nodes {
        node.damping += node.derivative_gain;
        node.derivative_gain = 0.0;
        node.controller_time_constant = 0.0;
    }
    out
}

/// Machine state. `omega` is the deviation from nominal frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub voltage: Vec<f64>,
    /// Controller outputs, present only for the lagged-controller model.
    pub control: Option<Vec<f64>>,
}

impl SimState {
    pub fn new(theta: Vec<f64>, omega: Vec<f64>, voltage: Vec<f64>) -> Self {
        Self {
            theta,
            omega,
            voltage,
            control: None,
        }
    }

    pub fn uniform(n: usize, theta: f64, omega: f64, voltage: f64) -> Self {
        Self::new(vec![theta; n], vec![omega; n], vec![voltage; n])
    }

    pub fn with_control(mut self, control: Vec<f64>) -> Self {
        self.control = Some(control);
        self
    }

    pub fn node_count(&self) -> usize {
        self.theta.len()
    }

    /// Number of scalar components (`3N` or `4N`).
    pub fn dimension(&self) -> usize {
        self.flat_len_for(self.node_count())
    }

    fn flat_len_for(&self, n: usize) -> usize {
        if self.control.is_some() {
            4 * n
        } else {
            3 * n
        }
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.theta.len();
        self.omega.len() == n
            && self.voltage.len() == n
            && self.control.as_ref().is_none_or(|u| u.len() == n)
    }

    pub fn is_finite(&self) -> bool {
        self.components().all(f64::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.components().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.theta
            .iter()
            .chain(&self.omega)
            .chain(&self.voltage)
            .chain(self.control.iter().flatten())
            .copied()
    }

    /// Concatenates `[theta, omega, E, (u)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.components().collect()
    }

    /// Inverse of [`SimState::to_flat`]; `with_control` selects the 4N layout.
    pub fn from_flat(y: &[f64], n: usize, with_control: bool) -> Self {
        let control = with_control.then(|| y[3 * n..4 * n].to_vec());
        Self {
            theta: y[..n].to_vec(),
            omega: y[n..2 * n].to_vec(),
            voltage: y[2 * n..3 * n].to_vec(),
            control,
        }
    }

    pub fn mean_theta(&self) -> f64 {
        mean(&self.theta)
    }

    pub fn mean_omega(&self) -> f64 {
        mean(&self.omega)
    }

    pub fn mean_voltage(&self) -> f64 {
        mean(&self.voltage)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_node(td: f64, b: [[f64; 2]; 2]) -> GridModel {
        let node = NodeParams::reduced(0.0, 0.2, 0.0, td, 1.0, 1.0);
        GridModel {
            nodes: vec![node, node],
            susceptance: DMatrix::from_fn(2, 2, |i, j| b[i][j]),
            nominal_frequency: 50.0,
        }
    }

    #[test]
    fn accepts_two_node_reference_model() {
        let m = two_node(2.0, [[-0.8, 1.0], [1.0, -0.8]]);
        assert_eq!(validate_model(m.clone()).unwrap(), m);
    }

    #[test]
    fn rejects_zero_voltage_time_constant() {
        let m = two_node(0.0, [[-0.8, 1.0], [1.0, -0.8]]);
        assert!(matches!(
            validate_model(m),
            Err(ModelError::NonPositiveTimeConstant { node: 0, parameter: "voltage_time_constant", .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_susceptance() {
        let m = two_node(2.0, [[-0.8, 1.0], [0.9, -0.8]]);
        assert!(matches!(
            validate_model(m),
            Err(ModelError::NonSymmetricSusceptance { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn rejects_negative_gain_and_single_node() {
        let mut m = two_node(2.0, [[-0.8, 1.0], [1.0, -0.8]]);
        m.nodes[1].secondary_gain = -1.0;
        assert!(matches!(
            validate_model(m),
            Err(ModelError::NegativeGain { node: 1, .. })
        ));

        let mut m = two_node(2.0, [[-0.8, 1.0], [1.0, -0.8]]);
        m.nodes.truncate(1);
        m.susceptance = DMatrix::from_element(1, 1, -0.8);
        assert_eq!(validate_model(m), Err(ModelError::TooFewNodes(1)));
    }

    #[test]
    fn reduction_absorbs_derivative_gain() {
        let mut m = two_node(2.0, [[-0.8, 1.0], [1.0, -0.8]]);
        m.nodes[0].derivative_gain = 0.3;
        m.nodes[0].controller_time_constant = 0.5;
        let r = reduce_full_model(&m);
        assert!((r.nodes[0].damping - 0.5).abs() < 1e-15);
        assert_eq!(r.nodes[0].derivative_gain, 0.0);
        assert_eq!(r.nodes[0].controller_time_constant, 0.0);
        // beta = 0 node untouched
        assert_eq!(r.nodes[1], m.nodes[1]);
        assert!(r.is_reduced());
    }

    #[test]
    fn flat_layout_round_trips_with_control() {
        let s = SimState::new(vec![0.1, 0.2], vec![0.3, 0.4], vec![1.0, 1.1])
            .with_control(vec![-0.5, 0.5]);
        let y = s.to_flat();
        assert_eq!(y.len(), 8);
        assert_eq!(SimState::from_flat(&y, 2, true), s);
    }

    fn arb_node() -> impl Strategy<Value = NodeParams> {
        (
            -1.0..1.0f64,
            0.01..2.0f64,
            0.0..4.0f64,
            0.1..5.0f64,
            0.5..2.0f64,
            0.0..2.0f64,
            0.0..1.0f64,
            0.0..1.0f64,
        )
            .prop_map(|(p, a, g, td, ef, x, tau, beta)| NodeParams {
                power_setpoint: p,
                damping: a,
                secondary_gain: g,
                voltage_time_constant: td,
                field_voltage: ef,
                reactance_diff: x,
                controller_time_constant: tau,
                derivative_gain: beta,
            })
    }

    proptest! {
        #[test]
        fn reduction_is_idempotent_and_preserves_validity(
            nodes in proptest::collection::vec(arb_node(), 2..6),
            b1 in -2.0..2.0f64,
        ) {
            let n = nodes.len();
            let b = DMatrix::from_fn(n, n, |i, j| if i == j { -0.8 } else { b1 });
            let m = GridModel::new(nodes, b, 50.0).unwrap();
            let once = reduce_full_model(&m);
            prop_assert_eq!(reduce_full_model(&once), once.clone());
            prop_assert!(validate_model(once).is_ok());
        }
    }
}
