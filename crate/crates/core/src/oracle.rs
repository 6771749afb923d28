//! Model-based ground truth: Riccati solutions, LQR and Kalman gains, the
//! dynamic compensator, the static window gain and its separated form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    char_poly_coeffs, ensure_finite, hstack, is_symmetric, kron, min_sym_eigenvalue, numerical_rank, powers,
    pseudo_inverse, sym_sqrt_psd, vstack, Matrix, Tolerance, Vector,
};
use crate::lti::{check_controllable, check_observable, LinearSystem};

/// Quadratic weights of one LQG task.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgTask {
    pub q: Matrix,
    pub r: Matrix,
    pub label: String,
}

impl LqgTask {
    pub fn new(q: Matrix, r: Matrix, label: impl Into<String>) -> Result<Self> {
        if !q.is_square() || q.is_empty() || !r.is_square() || r.is_empty() {
            return Err(Error::Dimension(format!(
                "Q and R must be square, got {:?} and {:?}",
                q.shape(),
                r.shape()
            )));
        }
        ensure_finite(&q, "Q")?;
        ensure_finite(&r, "R")?;
        if !is_symmetric(&q, 1e-12) || min_sym_eigenvalue(&q) < -1e-12 * q.norm().max(1.0) {
            return Err(Error::InvalidInput("Q must be symmetric positive semidefinite".into()));
        }
        if !is_symmetric(&r, 1e-12) || min_sym_eigenvalue(&r) <= 0.0 {
            return Err(Error::InvalidInput("R must be symmetric positive definite".into()));
        }
        Ok(Self {
            q,
            r,
            label: label.into(),
        })
    }

    /// Shapes match `sys` and `(A, Q^{1/2})` is observable.
    pub fn check_for(&self, sys: &LinearSystem, tol: &Tolerance) -> Result<()> {
        if self.q.nrows() != sys.n() || self.r.nrows() != sys.m() {
            return Err(Error::Dimension(format!(
                "task weights Q{:?} R{:?} do not fit n={}, m={}",
                self.q.shape(),
                self.r.shape(),
                sys.n(),
                sys.m()
            )));
        }
        if !check_observable(&sys.a, &sym_sqrt_psd(&self.q), tol)? {
            return Err(Error::AssumptionViolated("(A, Q^1/2) is not observable".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            q: &self.q * alpha,
            r: &self.r * alpha,
            label: format!("{}*{alpha}", self.label),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

fn solve_spd(lhs: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let sym = (lhs + lhs.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    sym.lu()
        .solve(rhs)
        .ok_or_else(|| Error::NumericalFailure("singular matrix in Riccati update".into()))
}

/// Fixed point of `P <- A'PA - A'PB (R + B'PB)^{-1} B'PA + Q`, iterated from `P = Q`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, opts: &DareOptions) -> Result<Matrix> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension(format!(
            "DARE shapes A{:?} B{:?} Q{:?} R{:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    for (m, name) in [(a, "A"), (b, "B"), (q, "Q"), (r, "R")] {
        ensure_finite(m, name)?;
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut last_update = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let pa = &p * a;
        let btpa = &bt * &pa;
        let gain = solve_spd(&(r + &bt * &p * b), &btpa)?;
        let mut next = &at * &pa - btpa.transpose() * gain + q;
        next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NumericalFailure("Riccati iteration diverged".into()));
        }
        last_update = (&next - &p).norm() / next.norm().max(1.0);
        p = next;
        if last_update <= opts.tol {
            return Ok(p);
        }
    }
    Err(Error::NumericalFailure(format!(
        "Riccati iteration did not converge in {} iterations (last relative update {last_update:.3e})",
        opts.max_iter
    )))
}

/// Relative plug-back residual of a DARE solution.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    let btpa = b.transpose() * p * a;
    let lhs = r + b.transpose() * p * b;
    let corr = match solve_spd(&lhs, &btpa) {
        Ok(g) => btpa.transpose() * g,
        Err(_) => return f64::INFINITY,
    };
    let res = a.transpose() * p * a - corr + q - p;
    res.norm() / p.norm().max(1.0)
}

/// Stabilizing LQR gain `K = -(R + B'PB)^{-1} B'PA`, so `u = K x`.
pub fn lqr_gain(sys: &LinearSystem, task: &LqgTask) -> Result<Matrix> {
    lqr_gain_with(sys, task, &DareOptions::default())
}

pub fn lqr_gain_with(sys: &LinearSystem, task: &LqgTask, opts: &DareOptions) -> Result<Matrix> {
    if task.q.nrows() != sys.n() || task.r.nrows() != sys.m() {
        return Err(Error::Dimension(format!(
            "task weights Q{:?} R{:?} do not fit n={}, m={}",
            task.q.shape(),
            task.r.shape(),
            sys.n(),
            sys.m()
        )));
    }
    let p = solve_dare(&sys.a, &sys.b, &task.q, &task.r, opts)?;
    let bt = sys.b.transpose();
    let k = solve_spd(&(&task.r + &bt * &p * &sys.b), &(&bt * &p * &sys.a))?;
    Ok(-k)
}

/// Steady-state filter gain `L_f = S C' (C S C' + V)^{-1}` with `S` the
/// prediction covariance.
pub fn kalman_gain(sys: &LinearSystem) -> Result<Matrix> {
    kalman_gain_with(sys, &DareOptions::default())
}

pub fn kalman_gain_with(sys: &LinearSystem, opts: &DareOptions) -> Result<Matrix> {
    let sigma = solve_dare(&sys.a.transpose(), &sys.c.transpose(), &sys.w, &sys.v, opts)?;
    let innov = &sys.c * &sigma * sys.c.transpose() + &sys.v;
    // L_f' = innov^{-1} C S
    let lt = solve_spd(&innov, &(&sys.c * &sigma))?;
    Ok(lt.transpose())
}

/// Dynamic output-feedback controller `xhat+ = E xhat + F u + G y+`, `u = H xhat`.
#[derive(Debug, Clone, PartialEq)]
pub struct Compensator {
    pub e: Matrix,
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
}

impl Compensator {
    /// Arbitrary compensator matrices (shapes only are validated).
    pub fn new(e: Matrix, f: Matrix, g: Matrix, h: Matrix) -> Result<Self> {
        let n = e.nrows();
        if n == 0 || !e.is_square() || f.nrows() != n || g.nrows() != n || h.ncols() != n || h.nrows() != f.ncols() {
            return Err(Error::Dimension(format!(
                "compensator shapes E{:?} F{:?} G{:?} H{:?}",
                e.shape(),
                f.shape(),
                g.shape(),
                h.shape()
            )));
        }
        for (m, name) in [(&e, "E"), (&f, "F"), (&g, "G"), (&h, "H")] {
            ensure_finite(m, name)?;
        }
        Ok(Self { e, f, g, h })
    }

    /// `E = (I - L_f C) A`, `F = (I - L_f C) B`, `G = L_f`, `H = K_lqr`.
    pub fn from_gains(sys: &LinearSystem, k_lqr: &Matrix, l_f: &Matrix) -> Result<Self> {
        let n = sys.n();
        if k_lqr.shape() != (sys.m(), n) || l_f.shape() != (n, sys.l()) {
            return Err(Error::Dimension(format!(
                "gains K{:?} L_f{:?} do not fit the system",
                k_lqr.shape(),
                l_f.shape()
            )));
        }
        let proj = Matrix::identity(n, n) - l_f * &sys.c;
        Self::new(&proj * &sys.a, &proj * &sys.b, l_f.clone(), k_lqr.clone())
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn l(&self) -> usize {
        self.g.ncols()
    }

    /// Joint plant/estimator matrix acting on `(x, xhat)` in the noise-free loop.
    pub fn closed_loop_matrix(&self, sys: &LinearSystem) -> Matrix {
        let bh = &sys.b * &self.h;
        let gca = &self.g * &sys.c * &sys.a;
        let bottom_right = &self.e + &self.f * &self.h + &self.g * &sys.c * &bh;
        let top = hstack(&[sys.a.clone(), bh]).expect("shapes checked");
        let bottom = hstack(&[gca, bottom_right]).expect("shapes checked");
        vstack(&[top, bottom]).expect("shapes checked")
    }
}

/// Optimal LQG compensator for `(sys, task)`.
pub fn build_compensator(sys: &LinearSystem, task: &LqgTask) -> Result<Compensator> {
    let k = lqr_gain(sys, task)?;
    let l_f = kalman_gain(sys)?;
    Compensator::from_gains(sys, &k, &l_f)
}

/// Block matrices mapping `xhat(t)` and the input/output windows onto the
/// window of inputs and onto `xhat(t+n)`.
#[derive(Debug, Clone)]
pub struct BlockMatrices {
    pub f_x: Matrix,
    pub f_u: Matrix,
    pub f_y: Matrix,
    pub m_u: Matrix,
    pub m_y: Matrix,
    pub mt_u: Matrix,
    pub mt_y: Matrix,
    /// `E^0 ..= E^n`.
    pub e_powers: Vec<Matrix>,
}

impl BlockMatrices {
    pub fn new(comp: &Compensator) -> Self {
        let (n, m, l) = (comp.n(), comp.m(), comp.l());
        let ep = powers(&comp.e, n);
        let mut f_x = Matrix::zeros(n * m, n);
        let mut f_u = Matrix::zeros(n, n * m);
        let mut f_y = Matrix::zeros(n, n * l);
        let mut m_u = Matrix::zeros(n * m, n * m);
        let mut m_y = Matrix::zeros(n * m, n * l);
        let mut mt_u = Matrix::zeros(n * n, n * m);
        let mut mt_y = Matrix::zeros(n * n, n * l);
        let ef: Vec<Matrix> = ep.iter().map(|p| p * &comp.f).collect();
        let eg: Vec<Matrix> = ep.iter().map(|p| p * &comp.g).collect();
        for i in 0..n {
            f_x.view_mut((i * m, 0), (m, n)).copy_from(&(&comp.h * &ep[i]));
            f_u.view_mut((0, i * m), (n, m)).copy_from(&ef[n - 1 - i]);
            f_y.view_mut((0, i * l), (n, l)).copy_from(&eg[n - 1 - i]);
            for j in 0..i {
                let k = i - 1 - j;
                m_u.view_mut((i * m, j * m), (m, m)).copy_from(&(&comp.h * &ef[k]));
                m_y.view_mut((i * m, j * l), (m, l)).copy_from(&(&comp.h * &eg[k]));
                mt_u.view_mut((i * n, j * m), (n, m)).copy_from(&ef[k]);
                mt_y.view_mut((i * n, j * l), (n, l)).copy_from(&eg[k]);
            }
        }
        Self {
            f_x,
            f_u,
            f_y,
            m_u,
            m_y,
            mt_u,
            mt_y,
            e_powers: ep,
        }
    }
}

/// Static gain `K_LQG` with `u(t+n) = K_LQG [U_n(t); Y_n(t+1)]` on compensator data:
/// `H [F_u + E^n F_x^+ (I - M_u), F_y - E^n F_x^+ M_y]`.
pub fn static_lqg_gain(comp: &Compensator, tol: &Tolerance) -> Result<Matrix> {
    let n = comp.n();
    let nm = n * comp.m();
    let blocks = BlockMatrices::new(comp);
    if numerical_rank(&blocks.f_x, tol)? < n {
        return Err(Error::AssumptionViolated(
            "F_x is rank deficient: (E, H) is not observable".into(),
        ));
    }
    let en_fxp = &blocks.e_powers[n] * pseudo_inverse(&blocks.f_x, tol)?;
    let left = &blocks.f_u + &en_fxp * (Matrix::identity(nm, nm) - &blocks.m_u);
    let right = &blocks.f_y - &en_fxp * &blocks.m_y;
    Ok(&comp.h * hstack(&[left, right])?)
}

/// `K_LQG = K L_est` with `K = [K_lqr, I_m]` task-specific and `L_est` task-invariant.
#[derive(Debug, Clone)]
pub struct SeparationDecomposition {
    pub k: Matrix,
    pub l_est: Matrix,
    /// Coefficients with `E^n = sum_k a_k E^k`.
    pub a: Vector,
}

impl SeparationDecomposition {
    pub fn gain(&self) -> Matrix {
        &self.k * &self.l_est
    }
}

pub fn separation_decomposition(comp: &Compensator, tol: &Tolerance) -> Result<SeparationDecomposition> {
    let (n, m, l) = (comp.n(), comp.m(), comp.l());
    let blocks = BlockMatrices::new(comp);
    if numerical_rank(&blocks.f_x, tol)? < n {
        return Err(Error::AssumptionViolated(
            "F_x is rank deficient: (E, H) is not observable".into(),
        ));
    }
    let a = char_poly_coeffs(&comp.e, tol)?;
    let a_row = Matrix::from_row_slice(1, n, a.as_slice());
    let a_n = kron(&a_row, &Matrix::identity(n, n));
    let top = hstack(&[&blocks.f_u - &a_n * &blocks.mt_u, &blocks.f_y - &a_n * &blocks.mt_y])?;
    let bottom = hstack(&[kron(&a_row, &Matrix::identity(m, m)), Matrix::zeros(m, n * l)])?;
    let l_est = vstack(&[top, bottom])?;
    let k = hstack(&[comp.h.clone(), Matrix::identity(m, m)])?;
    Ok(SeparationDecomposition { k, l_est, a })
}

/// Row `i` of the static gain via the per-row observability matrix
/// `F_x^i = [K_i; K_i E; ...; K_i E^{n-1}]`, with `P_i = F_x^i F_x^+`.
pub fn static_gain_row_lemma2(comp: &Compensator, i: usize, tol: &Tolerance) -> Result<Matrix> {
    let (n, m) = (comp.n(), comp.m());
    if i >= m {
        return Err(Error::Dimension(format!("row index {i} out of range for m = {m}")));
    }
    let blocks = BlockMatrices::new(comp);
    let k_i = comp.h.rows(i, 1).into_owned();
    let mut f_xi = Matrix::zeros(n, n);
    for k in 0..n {
        f_xi.rows_mut(k, 1).copy_from(&(&k_i * &blocks.e_powers[k]));
    }
    if numerical_rank(&f_xi, tol)? < n {
        return Err(Error::AssumptionViolated(format!(
            "(E, K_lqr row {i}) is not observable"
        )));
    }
    let p_i = &f_xi * pseudo_inverse(&blocks.f_x, tol)?;
    let en_fxi = &blocks.e_powers[n] * pseudo_inverse(&f_xi, tol)?;
    let left = &blocks.f_u + &en_fxi * (&p_i - &p_i * &blocks.m_u);
    let right = &blocks.f_y - &en_fxi * (&p_i * &blocks.m_y);
    Ok(k_i * hstack(&[left, right])?)
}

/// `(E, K_i)` observable for every row `i` of `H`, and `(E, G)` controllable.
pub fn check_assumption1(comp: &Compensator, tol: &Tolerance) -> Result<bool> {
    for i in 0..comp.m() {
        let row = comp.h.rows(i, 1).into_owned();
        if !check_observable(&comp.e, &row, tol)? {
            return Ok(false);
        }
    }
    check_controllable(&comp.e, &comp.g, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    #[test]
    fn dare_with_zero_dynamics_returns_q() {
        let q = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = solve_dare(
            &Matrix::zeros(2, 2),
            &Matrix::identity(2, 2),
            &q,
            &Matrix::identity(2, 2),
            &DareOptions::default(),
        )
        .unwrap();
        assert!((p - q).norm() < 1e-15);
    }

    #[test]
    fn dare_reports_non_convergence() {
        let opts = DareOptions {
            tol: 1e-12,
            max_iter: 2,
        };
        let r = solve_dare(&scalar(0.9), &scalar(1.0), &scalar(1.0), &scalar(1.0), &opts);
        assert!(matches!(r, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn dare_shape_mismatch() {
        let r = solve_dare(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(3, 1),
            &Matrix::zeros(2, 2),
            &scalar(1.0),
            &DareOptions::default(),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn task_validation() {
        assert!(LqgTask::new(scalar(-1.0), scalar(1.0), "bad").is_err());
        assert!(LqgTask::new(scalar(1.0), scalar(0.0), "bad").is_err());
        assert!(LqgTask::new(scalar(0.0), scalar(1.0), "ok").is_ok());
    }

    #[test]
    fn zero_filter_gain_keeps_open_loop_matrices() {
        let sys = LinearSystem::new(
            Matrix::from_row_slice(2, 2, &[1.1, 0.2, 0.0, 0.7]),
            Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            Matrix::identity(2, 2),
            scalar(1.0),
        )
        .unwrap();
        let comp =
            Compensator::from_gains(&sys, &Matrix::from_row_slice(1, 2, &[-0.5, -0.3]), &Matrix::zeros(2, 1)).unwrap();
        assert_eq!(comp.e, sys.a);
        assert_eq!(comp.f, sys.b);
    }

    #[test]
    fn zero_lqr_gain_violates_assumption1() {
        let comp = Compensator::new(
            Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            Matrix::from_column_slice(2, 1, &[1.0, 0.0]),
            Matrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Matrix::zeros(1, 2),
        )
        .unwrap();
        assert!(!check_assumption1(&comp, &Tolerance::default()).unwrap());
        assert!(matches!(
            static_lqg_gain(&comp, &Tolerance::default()),
            Err(Error::AssumptionViolated(_))
        ));
        assert!(matches!(
            static_gain_row_lemma2(&comp, 0, &Tolerance::default()),
            Err(Error::AssumptionViolated(_))
        ));
    }

    #[test]
    fn block_matrices_are_strictly_block_lower_triangular() {
        let comp = Compensator::new(
            Matrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.2, 0.3, 0.1, 0.0, 0.4, 0.2]),
            Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, 0.0, 0.3]),
            Matrix::from_column_slice(3, 1, &[0.2, 0.1, 0.7]),
            Matrix::from_row_slice(2, 3, &[1.0, 0.5, 0.2, -0.3, 0.8, 0.1]),
        )
        .unwrap();
        let b = BlockMatrices::new(&comp);
        let (n, m, l) = (3, 2, 1);
        for i in 0..n {
            for j in i..n {
                assert_eq!(b.m_u.view((i * m, j * m), (m, m)).norm(), 0.0);
                assert_eq!(b.m_y.view((i * m, j * l), (m, l)).norm(), 0.0);
                assert_eq!(b.mt_u.view((i * n, j * m), (n, m)).norm(), 0.0);
                assert_eq!(b.mt_y.view((i * n, j * l), (n, l)).norm(), 0.0);
            }
        }
        // M_u = blockdiag(H) * Mtilde_u
        let hdiag = kron(&Matrix::identity(n, n), &comp.h);
        assert!((&hdiag * &b.mt_u - &b.m_u).norm() < 1e-14);
        assert!((&hdiag * &b.mt_y - &b.m_y).norm() < 1e-14);
    }
}
