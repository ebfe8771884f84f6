//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

/// Symmetric part `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest entrywise `|M - M^T|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues with magnitude at most `rel_cutoff * max|eig|` are treated as
/// zero. Returns the pseudo-inverse and the numerical rank.
pub fn pinv_symmetric(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cutoff = rel_cutoff * largest;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff && l != 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    (out, rank)
}

/// Orthonormal basis (as columns) of the complement of the all-ones vector.
///
/// Uses the Helmert construction: column `k` is
/// `(1, .., 1, -k, 0, .., 0) / sqrt(k (k + 1))` with `k` leading ones.
pub fn ones_complement_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            q[(i, k - 1)] = 1.0 / norm;
        }
        q[(k, k - 1)] = -(k as f64) / norm;
    }
    q
}

/// All eigenvalues of a general real matrix via the real Schur form.
///
/// Returns `None` if the QR iteration does not converge.
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let schur_eigs = |a: DMatrix<f64>| {
        Schur::try_new(a, f64::EPSILON, 10_000)
            .map(|s| s.complex_eigenvalues().iter().copied().collect::<Vec<_>>())
    };
    if let Some(ev) = schur_eigs(m.clone()) {
        return Some(ev);
    }
    // The unshifted QR sweep can stall on exactly block-decoupled input.
    // An orthogonal similarity preserves the spectrum and breaks the structure.
    let n = m.nrows();
    for seed in 1..=4 {
        let v = DVector::from_fn(n, |i, _| ((i + 1) * seed) as f64 + 0.5 * ((i * i) % 7) as f64);
        let h = DMatrix::identity(n, n) - &v * v.transpose() * (2.0 / v.norm_squared());
        if let Some(ev) = schur_eigs(&h * m * &h) {
            return Some(ev);
        }
    }
    None
}

/// Unit right-singular vector of `m` for its smallest singular value, and
/// that singular value.
pub fn smallest_singular_vector(m: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (k, &sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    (v_t.row(k).transpose(), sigma)
}

/// Angle in radians between two lines through the origin.
pub fn line_angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).abs().min(1.0);
    // acos loses precision near 1; use the sine form for small angles
    let s = (a - b * (a.dot(b) / b.norm_squared())).norm() / a.norm();
    if c > 0.9 {
        s.min(1.0).asin()
    } else {
        c.acos()
    }
}
