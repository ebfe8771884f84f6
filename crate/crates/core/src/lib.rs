//! Networks of third-order synchronous machines under secondary frequency
//! control.
//!
//! Each node carries a phase angle `theta`, an angular-frequency deviation
//! `omega` (co-rotating frame, so the synchronous state sits at zero) and a
//! transient voltage amplitude `E`. The crate provides:
//!
//! - [`model`]: node parameters, the susceptance matrix and the reduction of
//!   the controller-augmented model to the instantaneous-controller form.
//! - [`topology`]: all-to-all and common-bus susceptance matrices, and the
//!   heterogeneous 20-node bus case.
//! - [`dynamics`]: right-hand sides, power ramps and a fixed-step RK4
//!   integrator with blow-up detection.
//! - [`stability`]: Newton fixed points, the block Jacobian, spectra and the
//!   two definiteness conditions on the reduced phase/voltage subspaces.
//! - [`bulk`]: closed-form node-mean dynamics, the mean-voltage envelope and
//!   the admissible network-size range.
//! - [`metrics`]: return time, steady-state deviation and synchronization
//!   checks.
//! - [`scenario`]: the TOML scenario format, built-in presets, sweeps and the
//!   CSV/JSON writers used by the `swingvolt` binary.
//!
//! Batch work (sweeps, fixed-point grids) goes through [`parallel`], which
//! uses rayon when the `parallel` feature is enabled and falls back to a
//! plain sequential loop otherwise.

pub mod bulk;
pub mod dynamics;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod scenario;
pub mod stability;
pub mod topology;

mod error;

pub use error::{Error, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK};
pub use model::{GridModel, NodeParams, SimState};
