//! Fixed points, linearization and stability tests of the reduced model.
//!
//! At a synchronous fixed point `(theta*, 0, E*)` the perturbation
//! `(x1, x2, x3) = (dtheta, domega, dE)` obeys `x' = J x` with
//!
//! ```text
//!     | 0              I     0               |
//! J = | -(P + Gamma)   -A    Lambda^T        |
//!     | T^-1 chi Lambda 0    T^-1 (chi C - I)|
//! ```
//!
//! where `P` is the weighted phase Laplacian, `C_ij = B_ij cos(theta_i - theta_j)`
//! and `Lambda_ij = E_j B_ij sin(theta_i - theta_j)` off the diagonal with
//! `Lambda_ii = -sum_l E_l B_il sin(theta_i - theta_l)`. The textbook variant
//! of `Lambda` (opposite diagonal sign, `-Lambda` in the middle row) only
//! coincides with this one at phase-symmetric points; it is kept in
//! [`LinearizationBlocks::lambda_literal`] for reference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ModelForm, NetworkRhs};
use crate::linalg;
use crate::model::GridModel;

/// Newton tolerance on the Euclidean residual norm.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-10;
/// Newton iteration cap.
pub const MAX_NEWTON_ITERATIONS: usize = 100;
/// Dead zone for eigenvalue sign tests.
pub const DEFINITENESS_TOLERANCE: f64 = 1e-9;
/// Relative eigenvalue cutoff for the pseudo-inverse of `P`.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Maximum angle (rad) between a gauge eigenvector and the global phase shift.
pub const GAUGE_ANGLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("Newton iteration did not converge in {iterations} steps (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("singular Newton Jacobian at iteration {iteration}")]
    SingularJacobianAtIterate { iteration: usize },
    #[error("initial guess has {found} entries, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("fixed-point analysis needs the reduced model (tau_g = 0, beta = 0)")]
    NotReduced,
    #[error("P is not symmetric (max |P - P^T| = {asymmetry:e})")]
    AsymmetricPInput { asymmetry: f64 },
    #[error("eigenvalue iteration did not converge")]
    EigensolverFailure,
}

/// Synchronous fixed point in the deviation frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub theta: Vec<f64>,
    pub voltage: Vec<f64>,
    /// Always zero; kept for a complete state description.
    pub omega: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Residual of the steady-state equations at `(theta, E)` with `omega = 0`.
///
/// The first `N` entries are the frequency equations, the last `N` the
/// voltage equations divided by `T_d`.
pub fn steady_state_residual(model: &GridModel, theta: &[f64], voltage: &[f64]) -> Vec<f64> {
    let n = model.node_count();
    let mut rhs = NetworkRhs::new(model, &[], ModelForm::Reduced)
        .expect("a validated model has a reduced right-hand side");
    let mut y = vec![0.0; 3 * n];
    y[..n].copy_from_slice(theta);
    y[2 * n..].copy_from_slice(voltage);
    let mut dy = vec![0.0; 3 * n];
    rhs.eval(0.0, &y, &mut dy);
    dy[n..].to_vec()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton solve of the steady-state equations.
///
/// `guess` holds `theta` followed by `E` (length `2N`). With every secondary
/// gain zero the phases are only defined up to a common shift; the solver
/// then appends the constraint `sum theta = sum theta_guess` and takes
/// least-squares steps.
pub fn find_fixed_point(model: &GridModel, guess: &[f64]) -> Result<FixedPoint, StabilityError> {
    let n = model.node_count();
    if guess.len() != 2 * n {
        return Err(StabilityError::DimensionMismatch {
            expected: 2 * n,
            found: guess.len(),
        });
    }
    if !model.is_reduced() {
        return Err(StabilityError::NotReduced);
    }
    let gauge = model.gamma_all_zero();
    let theta_sum: f64 = guess[..n].iter().sum();

    let residual = |z: &[f64]| -> Vec<f64> {
        let mut r = steady_state_residual(model, &z[..n], &z[n..]);
        if gauge {
            r.push(z[..n].iter().sum::<f64>() - theta_sum);
        }
        r
    };

    let mut z = guess.to_vec();
    let mut r = residual(&z);
    let mut r_norm = norm(&r);
    let mut iterations = 0;
    while r_norm >= FIXED_POINT_TOLERANCE {
        if iterations == MAX_NEWTON_ITERATIONS || !r_norm.is_finite() {
            return Err(StabilityError::NewtonDiverged {
                iterations,
                residual: r_norm,
            });
        }
        iterations += 1;

        let jac = residual_jacobian(model, &z[..n], &z[n..], gauge);
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|x| -x));
        let step = if gauge {
            let svd = jac.svd(true, true);
            let smallest = svd.singular_values.min();
            if smallest <= 1e-13 * svd.singular_values.max() {
                return Err(StabilityError::SingularJacobianAtIterate {
                    iteration: iterations,
                });
            }
            svd.solve(&rhs, 0.0)
                .map_err(|_| StabilityError::SingularJacobianAtIterate {
                    iteration: iterations,
                })?
        } else {
            jac.lu()
                .solve(&rhs)
                .filter(|s| s.iter().all(|x| x.is_finite()))
                .ok_or(StabilityError::SingularJacobianAtIterate {
                    iteration: iterations,
                })?
        };

        // backtrack until the residual decreases
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            let tr = residual(&trial);
            let tn = norm(&tr);
            if tn < r_norm || lambda < 1e-4 {
                z = trial;
                r = tr;
                r_norm = tn;
                break;
            }
            lambda *= 0.5;
        }
    }

    Ok(FixedPoint {
        theta: z[..n].to_vec(),
        voltage: z[n..].to_vec(),
        omega: vec![0.0; n],
        residual_norm: r_norm,
        iterations,
    })
}

fn residual_jacobian(model: &GridModel, theta: &[f64], voltage: &[f64], gauge: bool) -> DMatrix<f64> {
    let n = model.node_count();
    let blocks = coupling_blocks(model, theta, voltage);
    let rows = if gauge { 2 * n + 1 } else { 2 * n };
    let mut j = DMatrix::zeros(rows, 2 * n);
    for i in 0..n {
        let node = &model.nodes[i];
        for k in 0..n {
            j[(i, k)] = -blocks.p[(i, k)];
            j[(i, n + k)] = blocks.lambda[(k, i)];
            j[(n + i, k)] = node.reactance_diff * blocks.lambda[(i, k)] / node.voltage_time_constant;
            let identity = if i == k { 1.0 } else { 0.0 };
            j[(n + i, n + k)] =
                (node.reactance_diff * blocks.c[(i, k)] - identity) / node.voltage_time_constant;
        }
        j[(i, i)] -= node.secondary_gain;
    }
    if gauge {
        for k in 0..n {
            j[(2 * n, k)] = 1.0;
        }
    }
    j
}

struct Coupling {
    p: DMatrix<f64>,
    lambda: DMatrix<f64>,
    lambda_literal: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn coupling_blocks(model: &GridModel, theta: &[f64], voltage: &[f64]) -> Coupling {
    let n = model.node_count();
    let b = &model.susceptance;
    let mut p = DMatrix::zeros(n, n);
    let mut lambda = DMatrix::zeros(n, n);
    let mut lambda_literal = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = theta[i] - theta[j];
            c[(i, j)] = b[(i, j)] * d.cos();
            if i != j {
                lambda[(i, j)] = voltage[j] * b[(i, j)] * d.sin();
                lambda_literal[(i, j)] = lambda[(i, j)];
            }
            if j > i {
                // mirrored so that P is exactly symmetric
                let v = -voltage[i] * b[(i, j)] * voltage[j] * d.cos();
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
    }
    for i in 0..n {
        let mut p_diag = 0.0;
        let mut l_diag = 0.0;
        let mut l_lit = 0.0;
        for l in 0..n {
            if l != i {
                p_diag -= p[(i, l)];
                l_diag -= voltage[l] * b[(i, l)] * (theta[i] - theta[l]).sin();
                l_lit -= voltage[l] * b[(i, l)] * (theta[l] - theta[i]).sin();
            }
        }
        p[(i, i)] = p_diag;
        lambda[(i, i)] = l_diag;
        lambda_literal[(i, i)] = l_lit;
    }
    Coupling {
        p,
        lambda,
        lambda_literal,
        c,
    }
}

/// Blocks of the linearization at a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationBlocks {
    pub p: DMatrix<f64>,
    /// Sensitivity matrix consistent with the right-hand side.
    pub lambda: DMatrix<f64>,
    /// Textbook form with the opposite diagonal sign convention.
    pub lambda_literal: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub chi: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
}

impl LinearizationBlocks {
    pub fn node_count(&self) -> usize {
        self.p.nrows()
    }
}

pub fn build_linearization(model: &GridModel, fp: &FixedPoint) -> LinearizationBlocks {
    let n = model.node_count();
    let Coupling {
        p,
        lambda,
        lambda_literal,
        c,
    } = coupling_blocks(model, &fp.theta, &fp.voltage);
    let diag = |f: &dyn Fn(usize) -> f64| DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| f(i)));
    let gamma = diag(&|i| model.nodes[i].secondary_gain);
    let damping = diag(&|i| model.nodes[i].damping);
    let chi = diag(&|i| model.nodes[i].reactance_diff);
    let t_inv = diag(&|i| 1.0 / model.nodes[i].voltage_time_constant);
    let identity = DMatrix::<f64>::identity(n, n);

    let mut j = DMatrix::zeros(3 * n, 3 * n);
    j.view_mut((0, n), (n, n)).copy_from(&identity);
    j.view_mut((n, 0), (n, n)).copy_from(&(-(&p + &gamma)));
    j.view_mut((n, n), (n, n)).copy_from(&(-&damping));
    j.view_mut((n, 2 * n), (n, n)).copy_from(&lambda.transpose());
    j.view_mut((2 * n, 0), (n, n)).copy_from(&(&t_inv * &chi * &lambda));
    j.view_mut((2 * n, 2 * n), (n, n))
        .copy_from(&(&t_inv * (&chi * &c - &identity)));

    LinearizationBlocks {
        p,
        lambda,
        lambda_literal,
        c,
        gamma,
        damping,
        chi,
        t_inv,
        jacobian: j,
    }
}

/// Central finite-difference Jacobian of the reduced right-hand side.
pub fn finite_difference_jacobian(model: &GridModel, fp: &FixedPoint, h: f64) -> DMatrix<f64> {
    let n = model.node_count();
    let mut rhs = NetworkRhs::new(model, &[], ModelForm::Reduced)
        .expect("a validated model has a reduced right-hand side");
    let mut y0 = vec![0.0; 3 * n];
    y0[..n].copy_from_slice(&fp.theta);
    y0[n..2 * n].copy_from_slice(&fp.omega);
    y0[2 * n..].copy_from_slice(&fp.voltage);
    let mut fd = DMatrix::zeros(3 * n, 3 * n);
    let (mut plus, mut minus) = (vec![0.0; 3 * n], vec![0.0; 3 * n]);
    for k in 0..3 * n {
        let mut y = y0.clone();
        y[k] += h;
        rhs.eval(0.0, &y, &mut plus);
        y[k] = y0[k] - h;
        rhs.eval(0.0, &y, &mut minus);
        for i in 0..3 * n {
            fd[(i, k)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    fd
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn from_abscissa(abscissa: f64) -> Self {
        if abscissa < -DEFINITENESS_TOLERANCE {
            Verdict::Stable
        } else if abscissa > DEFINITENESS_TOLERANCE {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }
}

/// Spectrum of a Jacobian with the global-phase mode separated out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// `(re, im)` pairs in solver order.
    pub eigenvalues: Vec<(f64, f64)>,
    pub gauge_mode_present: bool,
    pub gauge_eigenvalue: Option<(f64, f64)>,
    pub spectral_abscissa_excl_gauge: f64,
    pub verdict: Verdict,
}

/// Index of the eigenvalue whose eigenvector is the global phase shift
/// `(1, .., 1, 0, .., 0)`, if there is one.
///
/// Candidates are tried in order of increasing magnitude; for each, the
/// null vector of `J - lambda I` is compared with the shift direction.
pub fn find_gauge_mode(j: &DMatrix<f64>, eigenvalues: &[(f64, f64)]) -> Option<usize> {
    let dim = j.nrows();
    let n = dim / 3;
    let shift = DVector::from_fn(dim, |i, _| if i < n { 1.0 } else { 0.0 });
    let scale = j.amax().max(1.0);
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        let ma = eigenvalues[a].0.hypot(eigenvalues[a].1);
        let mb = eigenvalues[b].0.hypot(eigenvalues[b].1);
        ma.total_cmp(&mb)
    });
    for k in order {
        let (re, im) = eigenvalues[k];
        if im.abs() > 1e-8 * scale {
            continue;
        }
        let shifted = j - DMatrix::identity(dim, dim) * re;
        let (v, sigma) = linalg::smallest_singular_vector(&shifted);
        if sigma > 1e-6 * scale {
            continue;
        }
        if linalg::line_angle(&v, &shift) <= GAUGE_ANGLE_TOLERANCE {
            return Some(k);
        }
    }
    None
}

/// Eigenvalues of `J`, the gauge mode (only searched for when every
/// secondary gain is zero) and the largest real part of the rest.
pub fn spectral_stability(
    j: &DMatrix<f64>,
    gamma_all_zero: bool,
) -> Result<SpectralReport, StabilityError> {
    let eigenvalues: Vec<(f64, f64)> = linalg::general_eigenvalues(j)
        .ok_or(StabilityError::EigensolverFailure)?
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    let gauge = if gamma_all_zero {
        find_gauge_mode(j, &eigenvalues)
    } else {
        None
    };
    let abscissa = eigenvalues
        .iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != gauge)
        .map(|(_, z)| z.0)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SpectralReport {
        gauge_mode_present: gauge.is_some(),
        gauge_eigenvalue: gauge.map(|k| eigenvalues[k]),
        spectral_abscissa_excl_gauge: abscissa,
        verdict: Verdict::from_abscissa(abscissa),
        eigenvalues,
    })
}

/// The two definiteness conditions on the reduced phase and voltage blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionCheck {
    /// `Q^T (P + Gamma) Q` positive definite on the complement of all-ones.
    pub condition_1: bool,
    /// `C - chi^-1 + Lambda P^+ Lambda^T` negative definite.
    pub condition_2: bool,
    pub condition_1_min_eigenvalue: f64,
    pub condition_2_max_eigenvalue: f64,
    pub p_min_eigenvalue: f64,
    pub p_rank: usize,
    /// `P` has a clearly negative eigenvalue, so it is not a Laplacian-like
    /// positive semidefinite matrix.
    pub p_indefinite: bool,
}

impl PropositionCheck {
    pub fn holds(&self) -> bool {
        self.condition_1 && self.condition_2
    }
}

pub fn proposition_one_check(blocks: &LinearizationBlocks) -> Result<PropositionCheck, StabilityError> {
    let n = blocks.node_count();
    let p = &blocks.p;
    let asymmetry = linalg::asymmetry(p);
    if asymmetry > 1e-12 * p.amax().max(1.0) {
        return Err(StabilityError::AsymmetricPInput { asymmetry });
    }

    let q = linalg::ones_complement_basis(n);
    let projected = q.transpose() * (p + &blocks.gamma) * &q;
    let c1_min = linalg::symmetric_eigenvalues(&linalg::symmetrize(&projected))[0];

    let (p_pinv, p_rank) = linalg::pinv_symmetric(p, PINV_CUTOFF);
    let chi_inv = blocks.chi.map(|x| if x != 0.0 { 1.0 / x } else { 0.0 });
    let m = &blocks.c - chi_inv + &blocks.lambda * p_pinv * blocks.lambda.transpose();
    let m_eigs = linalg::symmetric_eigenvalues(&linalg::symmetrize(&m));
    let c2_max = *m_eigs.last().expect("n >= 1");

    let p_eigs = linalg::symmetric_eigenvalues(p);
    let p_min = p_eigs[0];
    Ok(PropositionCheck {
        condition_1: c1_min > DEFINITENESS_TOLERANCE,
        condition_2: c2_max < -DEFINITENESS_TOLERANCE,
        condition_1_min_eigenvalue: c1_min,
        condition_2_max_eigenvalue: c2_max,
        p_min_eigenvalue: p_min,
        p_rank,
        p_indefinite: p_min < -DEFINITENESS_TOLERANCE * p.amax().max(1.0),
    })
}

/// Result of comparing `eig(A + gamma I)` with `eig(A) + gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenShiftCheck {
    pub passed: bool,
    pub max_deviation: f64,
    pub shifted_spectrum: Vec<f64>,
}

pub fn eigen_shift_check(a: &DMatrix<f64>, gamma: f64) -> EigenShiftCheck {
    let base = linalg::symmetric_eigenvalues(a);
    let shifted = a + DMatrix::identity(a.nrows(), a.ncols()) * gamma;
    let shifted_spectrum = linalg::symmetric_eigenvalues(&shifted);
    let max_deviation = base
        .iter()
        .zip(&shifted_spectrum)
        .map(|(l, s)| (l + gamma - s).abs())
        .fold(0.0, f64::max);
    EigenShiftCheck {
        passed: max_deviation < 1e-10,
        max_deviation,
        shifted_spectrum,
    }
}

/// Everything computed for one fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub fixed_point: FixedPoint,
    pub eigenvalues: Vec<(f64, f64)>,
    pub spectral_abscissa_excl_gauge: f64,
    pub gauge_mode_present: bool,
    pub gauge_eigenvalue: Option<(f64, f64)>,
    pub proposition_condition_1: bool,
    pub proposition_condition_2: bool,
    pub condition_1_min_eigenvalue: f64,
    pub condition_2_max_eigenvalue: f64,
    pub p_min_eigenvalue: f64,
    pub p_indefinite: bool,
    pub verdict: Verdict,
    /// Whether the two conditions agree with the spectral verdict.
    pub proposition_agrees: bool,
}

/// Solves for a fixed point from `guess` and runs every test on it.
pub fn analyze(model: &GridModel, guess: &[f64]) -> Result<StabilityReport, StabilityError> {
    let fp = find_fixed_point(model, guess)?;
    analyze_fixed_point(model, fp)
}

pub fn analyze_fixed_point(model: &GridModel, fp: FixedPoint) -> Result<StabilityReport, StabilityError> {
    let blocks = build_linearization(model, &fp);
    let spectral = spectral_stability(&blocks.jacobian, model.gamma_all_zero())?;
    let prop = proposition_one_check(&blocks)?;
    let proposition_agrees = prop.holds() == (spectral.verdict == Verdict::Stable);
    Ok(StabilityReport {
        fixed_point: fp,
        eigenvalues: spectral.eigenvalues,
        spectral_abscissa_excl_gauge: spectral.spectral_abscissa_excl_gauge,
        gauge_mode_present: spectral.gauge_mode_present,
        gauge_eigenvalue: spectral.gauge_eigenvalue,
        proposition_condition_1: prop.condition_1,
        proposition_condition_2: prop.condition_2,
        condition_1_min_eigenvalue: prop.condition_1_min_eigenvalue,
        condition_2_max_eigenvalue: prop.condition_2_max_eigenvalue,
        p_min_eigenvalue: prop.p_min_eigenvalue,
        p_indefinite: prop.p_indefinite,
        verdict: spectral.verdict,
        proposition_agrees,
    })
}

/// Default Newton guess: every phase at the controlled bulk offset
/// `sum P / sum gamma` (zero without control) and every voltage at `E_f`.
pub fn default_guess(model: &GridModel) -> Vec<f64> {
    let n = model.node_count();
    let gamma_sum: f64 = model.nodes.iter().map(|p| p.secondary_gain).sum();
    let theta = if gamma_sum > 0.0 {
        model.total_power() / gamma_sum
    } else {
        0.0
    };
    let mut guess = vec![theta; n];
    guess.extend(model.nodes.iter().map(|p| p.field_voltage));
    guess
}
