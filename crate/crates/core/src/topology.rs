//! Susceptance matrices for the network families used in the experiments.
//!
//! Two families are supported: all-to-all coupling with a common self term
//! `b0` on the diagonal and `b1` everywhere else, and a star in which `n`
//! leaves connect only through a common bus. The bus can be kept as an
//! explicit (zero-power) node or eliminated by Kron reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{
    InitialConfig, InitialValue, NetworkConfig, NetworkKind, NodesConfig, PerNode,
    PerturbationConfig, Scenario, ScenarioConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    AllToAll,
    StarBus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Number of machines, not counting the bus of a star.
    pub node_count: usize,
    pub self_susceptance: f64,
    pub link_susceptance: f64,
    /// Diagonal entry of the bus row. `None` uses `-n * b1`, the value that
    /// makes the bus row sum to zero (a lossless junction with no shunt).
    pub bus_self_susceptance: Option<f64>,
}

impl TopologySpec {
    pub fn all_to_all(node_count: usize, b0: f64, b1: f64) -> Self {
        Self {
            kind: TopologyKind::AllToAll,
            node_count,
            self_susceptance: b0,
            link_susceptance: b1,
            bus_self_susceptance: None,
        }
    }

    pub fn star_bus(node_count: usize, b0: f64, b1: f64) -> Self {
        Self {
            kind: TopologyKind::StarBus,
            ..Self::all_to_all(node_count, b0, b1)
        }
    }

    fn check(&self, expected: TopologyKind) -> Result<(), TopologyError> {
        if self.kind != expected {
            return Err(TopologyError::WrongKind {
                expected,
                found: self.kind,
            });
        }
        if self.node_count < 2 {
            return Err(TopologyError::TooFewNodes(self.node_count));
        }
        if self.link_susceptance == 0.0 {
            return Err(TopologyError::ZeroLinkSusceptance);
        }
        Ok(())
    }

    pub fn bus_self_term(&self) -> f64 {
        self.bus_self_susceptance
            .unwrap_or(-(self.node_count as f64) * self.link_susceptance)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("topology needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("link susceptance must be non-zero")]
    ZeroLinkSusceptance,
    #[error("expected a {expected:?} topology, got {found:?}")]
    WrongKind {
        expected: TopologyKind,
        found: TopologyKind,
    },
    #[error("cannot eliminate node {node}: its self-susceptance is zero")]
    BusEliminationSingular { node: usize },
}

/// `b0` on the diagonal, `b1` on every off-diagonal entry.
pub fn all_to_all_susceptance(spec: &TopologySpec) -> Result<DMatrix<f64>, TopologyError> {
    spec.check(TopologyKind::AllToAll)?;
    let n = spec.node_count;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            spec.self_susceptance
        } else {
            spec.link_susceptance
        }
    }))
}

/// Both representations of a star network.
#[derive(Debug, Clone, PartialEq)]
pub struct StarBusNetwork {
    /// `(n+1) x (n+1)`, bus at index 0.
    pub explicit: DMatrix<f64>,
    /// `n x n`, bus eliminated.
    pub kron_reduced: DMatrix<f64>,
    pub bus_self_susceptance: f64,
}

pub fn star_bus_susceptance(spec: &TopologySpec) -> Result<StarBusNetwork, TopologyError> {
    spec.check(TopologyKind::StarBus)?;
    let n = spec.node_count;
    let bus = spec.bus_self_term();
    let mut explicit = DMatrix::zeros(n + 1, n + 1);
    explicit[(0, 0)] = bus;
    for i in 1..=n {
        explicit[(i, i)] = spec.self_susceptance;
        explicit[(0, i)] = spec.link_susceptance;
        explicit[(i, 0)] = spec.link_susceptance;
    }
    let kron_reduced = kron_eliminate(&explicit, 0)?;
    Ok(StarBusNetwork {
        explicit,
        kron_reduced,
        bus_self_susceptance: bus,
    })
}

/// Eliminates a passive node `k`: `B'_ij = B_ij - B_ik B_kj / B_kk`.
///
/// Symmetric entries are computed once and mirrored so the result is exactly
/// symmetric.
pub fn kron_eliminate(b: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>, TopologyError> {
    let pivot = b[(k, k)];
    if pivot == 0.0 {
        return Err(TopologyError::BusEliminationSingular { node: k });
    }
    let keep: Vec<usize> = (0..b.nrows()).filter(|&i| i != k).collect();
    let m = keep.len();
    let mut out = DMatrix::zeros(m, m);
    for (a, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate().skip(a) {
            let v = b[(i, j)] - b[(i, k)] * b[(k, j)] / pivot;
            out[(a, c)] = v;
            out[(c, a)] = v;
        }
    }
    Ok(out)
}

/// Scheduled powers of the 20-machine heterogeneous bus case, as published.
pub const HETEROGENEOUS_POWERS: [f64; 20] = [
    -0.4, 0.53, -0.51, 0.56, 0.52, 0.48, -0.55, -0.45, 0.491, 0.509, -0.482, -0.518, -0.46, -0.64,
    0.42, 0.58, -0.5, 0.5, 0.35, -0.45,
];

/// How the common bus of a star network enters the dynamics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusModel {
    /// Bus kept as a zero-power machine with median parameters.
    #[default]
    Explicit,
    /// Bus eliminated; the leaves couple all-to-all.
    Kron,
}

/// Configuration of the heterogeneous 20-machine bus experiment.
///
/// Damping is `0.2 |P_i|` and the secondary gain is `|P_i|` (zero when
/// `controlled` is false). All machines start at `theta = 0`, `E = 1.14`
/// and the perturbation ramps node 1 by `+1` between 40 s and 42 s, as in
/// the two-node and bulk experiments.
pub fn heterogeneous_case_config(controlled: bool, bus_model: BusModel) -> ScenarioConfig {
    let gain = if controlled { 1.0 } else { 0.0 };
    ScenarioConfig {
        name: format!(
            "fig6-{}",
            if controlled { "controlled" } else { "uncontrolled" }
        ),
        network: NetworkConfig {
            kind: NetworkKind::StarBus,
            node_count: Some(HETEROGENEOUS_POWERS.len()),
            self_susceptance: Some(-0.8),
            link_susceptance: Some(1.0),
            bus_model,
            ..NetworkConfig::default()
        },
        nodes: NodesConfig {
            power: PerNode::Each(HETEROGENEOUS_POWERS.to_vec()),
            damping: PerNode::abs_power(0.2),
            secondary_gain: PerNode::abs_power(gain),
            voltage_time_constant: PerNode::Uniform(1.0),
            ..NodesConfig::default()
        },
        initial: InitialConfig {
            voltage: InitialValue::Uniform(1.14),
            ..InitialConfig::default()
        },
        perturbations: vec![PerturbationConfig {
            node: 1,
            t_start: 40.0,
            t_end: 42.0,
            delta_power: 1.0,
        }],
        ..ScenarioConfig::default()
    }
}

pub fn heterogeneous_case_study(controlled: bool, bus_model: BusModel) -> Scenario {
    Scenario::from_config(&heterogeneous_case_config(controlled, bus_model))
        .expect("built-in heterogeneous case is valid")
}
