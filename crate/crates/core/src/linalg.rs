//! Dense linear-algebra kernels with explicit rank and residual tolerances.
//!
//! Every rank decision in the crate goes through [`numerical_rank`] or one of
//! the SVD-based helpers here, so a single [`Tolerance`] controls what counts
//! as "zero" throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative thresholds used for rank decisions and equation residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Singular values at or below `rank_tol * sigma_max` are treated as zero.
    pub rank_tol: f64,
    /// Relative residual accepted when checking that an equation holds.
    pub residual_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rank_tol: 1e-9,
            residual_tol: 1e-7,
        }
    }
}

impl Tolerance {
    pub fn new(rank_tol: f64, residual_tol: f64) -> Result<Self> {
        if !(rank_tol > 0.0 && rank_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "rank_tol must be positive, got {rank_tol}"
            )));
        }
        if !(residual_tol > 0.0 && residual_tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "residual_tol must be positive, got {residual_tol}"
            )));
        }
        Ok(Self { rank_tol, residual_tol })
    }

    /// Tolerances for matrices assembled from simulated trajectories: the
    /// window relations hold to rounding error, but closed-loop data can have
    /// genuine singular values near `1e-6` relative.
    pub fn data() -> Self {
        Self {
            rank_tol: 1e-10,
            residual_tol: 1e-6,
        }
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

fn ensure_nonempty(m: &Matrix, what: &str) -> Result<()> {
    if m.is_empty() {
        Err(Error::InvalidInput(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

fn threshold(sv: &Vector, tol: &Tolerance) -> f64 {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    tol.rank_tol * smax
}

/// Number of singular values strictly above `rank_tol * sigma_max`.
pub fn numerical_rank(m: &Matrix, tol: &Tolerance) -> Result<usize> {
    ensure_nonempty(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let sv = m.singular_values();
    let thr = threshold(&sv, tol);
    Ok(sv.iter().filter(|&&s| s > thr && s > 0.0).count())
}

/// Moore-Penrose pseudo-inverse with sub-threshold singular values zeroed.
pub fn pseudo_inverse(m: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    ensure_nonempty(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let thr = threshold(&svd.singular_values, tol);
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr && s > 0.0 {
            out += (v_t.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    Ok(out)
}

/// Right singular vectors of `m` (as columns, full set of `ncols`) paired with
/// their singular values; directions beyond the row count get value zero.
fn full_right_singular(m: &Matrix) -> (Vec<f64>, Matrix) {
    let cols = m.ncols();
    let padded = if m.nrows() < cols {
        let mut p = Matrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    (svd.singular_values.iter().cloned().collect(), v_t.transpose())
}

/// Orthonormal basis (as columns) of the numerical kernel of `m`.
pub fn nullspace_basis(m: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    ensure_finite(m, "matrix")?;
    let cols = m.ncols();
    if m.nrows() == 0 {
        return Ok(Matrix::identity(cols, cols));
    }
    let (sv, v) = full_right_singular(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thr = tol.rank_tol * smax;
    let kernel: Vec<usize> = (0..cols).filter(|&k| !(sv[k] > thr && sv[k] > 0.0)).collect();
    let mut out = Matrix::zeros(cols, kernel.len());
    for (j, &k) in kernel.iter().enumerate() {
        out.set_column(j, &v.column(k));
    }
    Ok(out)
}

/// Orthonormal basis of the intersection of the kernels of all `ms`, computed
/// as the kernel of their vertical stack.
pub fn intersect_kernels(ms: &[Matrix], tol: &Tolerance) -> Result<Matrix> {
    let first = ms
        .first()
        .ok_or_else(|| Error::InvalidInput("no matrices to intersect".into()))?;
    let cols = first.ncols();
    if let Some(bad) = ms.iter().find(|m| m.ncols() != cols) {
        return Err(Error::Dimension(format!(
            "kernel intersection needs equal column counts, got {cols} and {}",
            bad.ncols()
        )));
    }
    nullspace_basis(&vstack(ms)?, tol)
}

/// Matrix whose rows are an orthonormal basis of the orthogonal complement of
/// the column span of `b`.
pub fn orth_complement_basis(b: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    ensure_finite(b, "basis")?;
    Ok(nullspace_basis(&b.transpose(), tol)?.transpose())
}

/// Orthonormal basis (as rows) of the row space of `m`.
pub fn row_space_basis(m: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    let kernel = nullspace_basis(m, tol)?;
    orth_complement_basis(&kernel, tol)
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Column-major stacking of the columns of `m`.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn vstack(ms: &[Matrix]) -> Result<Matrix> {
    let cols = ms.first().map(|m| m.ncols()).unwrap_or(0);
    if ms.iter().any(|m| m.ncols() != cols) {
        return Err(Error::Dimension("vstack with differing column counts".into()));
    }
    let rows = ms.iter().map(|m| m.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for m in ms {
        out.view_mut((r, 0), (m.nrows(), cols)).copy_from(m);
        r += m.nrows();
    }
    Ok(out)
}

pub fn hstack(ms: &[Matrix]) -> Result<Matrix> {
    let rows = ms.first().map(|m| m.nrows()).unwrap_or(0);
    if ms.iter().any(|m| m.nrows() != rows) {
        return Err(Error::Dimension("hstack with differing row counts".into()));
    }
    let cols = ms.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for m in ms {
        out.view_mut((0, c), (rows, m.ncols())).copy_from(m);
        c += m.ncols();
    }
    Ok(out)
}

/// `[E^0, E^1, ..., E^k]`.
pub fn powers(e: &Matrix, k: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(Matrix::identity(e.nrows(), e.ncols()));
    for i in 0..k {
        let next = e * &out[i];
        out.push(next);
    }
    out
}

/// Coefficients `a` with `E^n = a_0 I + a_1 E + ... + a_{n-1} E^{n-1}`.
///
/// Uses the Faddeev-LeVerrier recursion (so derogatory matrices still get
/// their characteristic polynomial); if the resulting identity residual is
/// above tolerance the coefficients are refitted by least squares on the
/// vectorized identity.
pub fn char_poly_coeffs(e: &Matrix, tol: &Tolerance) -> Result<Vector> {
    if !e.is_square() || e.is_empty() {
        return Err(Error::Dimension(format!(
            "characteristic polynomial needs a nonempty square matrix, got {}x{}",
            e.nrows(),
            e.ncols()
        )));
    }
    ensure_finite(e, "matrix")?;
    let n = e.nrows();
    let pw = powers(e, n);
    let scale = pw[n].norm().max(1.0);
    let residual = |a: &Vector| {
        let mut r = pw[n].clone();
        for (k, ak) in a.iter().enumerate() {
            r -= &pw[k] * *ak;
        }
        r.norm() / scale
    };

    // Faddeev-LeVerrier: p(s) = s^n + c_{n-1} s^{n-1} + ... + c_0.
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let ident = Matrix::identity(n, n);
    let mut m_k = Matrix::zeros(n, n);
    for k in 1..=n {
        m_k = e * &m_k + &ident * c[n - k + 1];
        c[n - k] = -(e * &m_k).trace() / k as f64;
    }
    let fl = Vector::from_iterator(n, (0..n).map(|k| -c[k]));
    let fl_res = residual(&fl);
    if fl_res <= tol.residual_tol {
        return Ok(fl);
    }

    let mut design = Matrix::zeros(n * n, n);
    for (k, p) in pw.iter().take(n).enumerate() {
        design.set_column(k, &vec(p));
    }
    let fine = Tolerance {
        rank_tol: 1e-14,
        ..*tol
    };
    let ls = pseudo_inverse(&design, &fine)? * vec(&pw[n]);
    let ls_res = residual(&ls);
    let (best, best_res) = if ls_res < fl_res { (ls, ls_res) } else { (fl, fl_res) };
    if best_res <= tol.residual_tol {
        Ok(best)
    } else {
        Err(Error::NumericalFailure(format!(
            "Cayley-Hamilton residual {best_res:.3e} exceeds {:.1e}",
            tol.residual_tol
        )))
    }
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Symmetric square root of a (numerically) PSD matrix. Negative eigenvalues
/// are clamped to zero.
pub fn sym_sqrt_psd(m: &Matrix) -> Matrix {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= tol * m.norm().max(1.0)
}

/// Principal angles (radians, ascending) between the row spaces of `a` and `b`.
///
/// Angles are recovered with `atan2(sin, cos)` so small angles keep full
/// relative accuracy.
pub fn principal_angles(a: &Matrix, b: &Matrix, tol: &Tolerance) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "row spaces live in R^{} and R^{}",
            a.ncols(),
            b.ncols()
        )));
    }
    let qa = row_space_basis(a, tol)?.transpose();
    let qb = row_space_basis(b, tol)?.transpose();
    let (small, large) = if qa.ncols() <= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let k = small.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let cross = large.transpose() * &small;
    let mut cos: Vec<f64> = cross.singular_values().iter().map(|c| c.min(1.0)).collect();
    let resid = &small - &large * &cross;
    let mut sin: Vec<f64> = resid.singular_values().iter().map(|s| s.min(1.0)).collect();
    cos.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sin.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok((0..k).map(|i| sin[i].atan2(cos[i])).collect())
}

/// Least-squares solution `X` of `X * a = b` (minimum norm).
pub fn solve_right(b: &Matrix, a: &Matrix, tol: &Tolerance) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "X * A = B needs matching column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(b * pseudo_inverse(a, tol)?)
}
