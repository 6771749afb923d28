//! Task-invariant estimation matrix learned from several source tasks, and
//! target gains learned from a short trajectory on top of it.

use serde::{Deserialize, Serialize};

use crate::data::DataMatrixPair;
use crate::error::{Error, Result};
use crate::imitation::{imitation_min_horizon, learn_klqg, LearnedGain};
use crate::linalg::{
    intersect_kernels, nullspace_basis, numerical_rank, orth_complement_basis, pseudo_inverse, spectral_norm, vstack,
    Matrix, Tolerance,
};
use crate::lti::{RngSeed, Trajectory};
use crate::par;

#[derive(Debug, Clone)]
pub struct SourceDataset {
    pub traj: Trajectory,
    pub label: String,
    pub learned_gain: Option<LearnedGain>,
}

impl SourceDataset {
    pub fn new(traj: Trajectory, label: impl Into<String>) -> Self {
        Self {
            traj,
            label: label.into(),
            learned_gain: None,
        }
    }

    /// Learns and caches the imitation gain.
    pub fn with_gain(mut self, n: usize, tol: &Tolerance) -> Result<Self> {
        self.learned_gain = Some(learn_klqg(&self.traj, n, tol)?);
        Ok(self)
    }

    fn gain(&self, n: usize, tol: &Tolerance) -> Result<LearnedGain> {
        match &self.learned_gain {
            Some(g) if g.k.ncols() == n * (self.traj.m() + self.traj.l()) => Ok(g.clone()),
            _ => learn_klqg(&self.traj, n, tol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMethod {
    SingleInputKernel,
    MultiKernelCorrection,
    BilinearAls,
}

impl EstimatorMethod {
    pub fn tag(self) -> &'static str {
        match self {
            Self::SingleInputKernel => "single-input-kernel",
            Self::MultiKernelCorrection => "multi-kernel-correction",
            Self::BilinearAls => "bilinear-als",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Final value of the method's objective (absent for the closed-form method).
    pub objective: Option<f64>,
    pub converged: bool,
    /// Index of the winning random start, for multi-start methods.
    pub best_start: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LearnedEstimator {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    /// `(n+m) x n(m+l)` with orthonormal rows.
    pub l_hat: Matrix,
    /// Orthonormal columns spanning the kernel of `l_hat`.
    pub kernel_basis: Matrix,
    pub method: EstimatorMethod,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize, Deserialize)]
struct EstimatorJson {
    n: usize,
    m: usize,
    l: usize,
    method: EstimatorMethod,
    #[serde(rename = "L_hat")]
    l_hat: Vec<Vec<f64>>,
    diagnostics: Diagnostics,
}

impl LearnedEstimator {
    /// Estimator spanning the row space of `l` (e.g. a model-side `L_est`);
    /// the rows are orthonormalized.
    pub fn from_basis(
        l: &Matrix,
        dims: (usize, usize, usize),
        method: EstimatorMethod,
        tol: &Tolerance,
    ) -> Result<Self> {
        let (n, m, ly) = dims;
        let rows = crate::linalg::row_space_basis(l, tol)?;
        if rows.nrows() != n + m || rows.ncols() != n * (m + ly) {
            return Err(Error::Dimension(format!(
                "estimator needs an {}-dimensional row space in R^{}, got rank {} in R^{}",
                n + m,
                n * (m + ly),
                rows.nrows(),
                rows.ncols()
            )));
        }
        Self::from_rows(rows, dims, method, Diagnostics::default(), tol)
    }

    fn from_rows(
        l_hat: Matrix,
        dims: (usize, usize, usize),
        method: EstimatorMethod,
        diagnostics: Diagnostics,
        tol: &Tolerance,
    ) -> Result<Self> {
        let (n, m, l) = dims;
        let kernel_basis = nullspace_basis(&l_hat, tol)?;
        Ok(Self {
            n,
            m,
            l,
            l_hat,
            kernel_basis,
            method,
            diagnostics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let rows = (0..self.l_hat.nrows())
            .map(|i| self.l_hat.row(i).iter().cloned().collect())
            .collect();
        Ok(serde_json::to_string_pretty(&EstimatorJson {
            n: self.n,
            m: self.m,
            l: self.l,
            method: self.method,
            l_hat: rows,
            diagnostics: self.diagnostics.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: EstimatorJson = serde_json::from_str(s)?;
        let (k, d) = (j.n + j.m, j.n * (j.m + j.l));
        if j.l_hat.len() != k || j.l_hat.iter().any(|r| r.len() != d) {
            return Err(Error::Format(format!("L_hat must be {k}x{d}")));
        }
        let l_hat = Matrix::from_fn(k, d, |i, c| j.l_hat[i][c]);
        Self::from_rows(l_hat, (j.n, j.m, j.l), j.method, j.diagnostics, &Tolerance::default())
    }
}

#[derive(Debug, Clone)]
pub struct TargetResult {
    /// `m x (n+m)`.
    pub k_hat: Matrix,
    /// `k_hat * l_hat`, `m x n(m+l)`.
    pub k_target: Matrix,
    pub residual: f64,
    pub trajectory_length_used: usize,
}

/// Shortest target horizon for which `L_hat H` can be square and invertible.
pub fn target_min_horizon(n: usize, m: usize) -> usize {
    2 * n + m - 1
}

/// Common `(m, l)` of all datasets, after checking their lengths.
fn validate_sources(datasets: &[SourceDataset], n: usize) -> Result<(usize, usize)> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InvalidInput("no source datasets".into()))?;
    if n == 0 {
        return Err(Error::InvalidInput("state dimension must be positive".into()));
    }
    let (m, l) = (first.traj.m(), first.traj.l());
    let required = imitation_min_horizon(n, l);
    for ds in datasets {
        if ds.traj.m() != m || ds.traj.l() != l {
            return Err(Error::Dimension(format!(
                "dataset '{}' has (m, l) = ({}, {}), expected ({m}, {l})",
                ds.label,
                ds.traj.m(),
                ds.traj.l()
            )));
        }
        if ds.traj.horizon() < required {
            return Err(Error::InsufficientData {
                required,
                actual: ds.traj.horizon(),
            });
        }
    }
    Ok((m, l))
}

/// Kernel intersection of the per-source imitation gains.
pub fn learn_lest_single_input(datasets: &[SourceDataset], n: usize, tol: &Tolerance) -> Result<LearnedEstimator> {
    let (m, l) = validate_sources(datasets, n)?;
    if m != 1 {
        return Err(Error::InvalidInput(format!(
            "kernel intersection needs a single input, got m = {m}"
        )));
    }
    let gains: Vec<Matrix> = par::try_map(datasets, |ds| ds.gain(n, tol).map(|g| g.k))?;
    let kernel = intersect_kernels(&gains, tol)?;
    let expected = n * (m + l) - (n + m);
    if kernel.ncols() != expected {
        return Err(Error::DiversityViolation {
            expected,
            achieved: kernel.ncols(),
        });
    }
    let l_hat = orth_complement_basis(&kernel, tol)?;
    Ok(LearnedEstimator {
        n,
        m,
        l,
        l_hat,
        kernel_basis: kernel,
        method: EstimatorMethod::SingleInputKernel,
        diagnostics: Diagnostics {
            converged: true,
            ..Diagnostics::default()
        },
    })
}

/// Stacked matrices have full column rank `n + m`, i.e. trivially intersecting kernels.
pub fn check_assumption2(k_list: &[Matrix], tol: &Tolerance) -> bool {
    let Some(first) = k_list.first() else {
        return false;
    };
    match vstack(k_list) {
        Ok(s) => numerical_rank(&s, tol).map(|r| r == first.ncols()).unwrap_or(false),
        Err(_) => false,
    }
}

/// `Ker(L)` meets the span of the leading `rows(L)` columns of `h_target`
/// only at zero, and those columns are independent.
pub fn check_persistency(l: &Matrix, h_target: &Matrix, tol: &Tolerance) -> bool {
    let k = l.nrows();
    if l.ncols() != h_target.nrows() || h_target.ncols() < k || k == 0 {
        return false;
    }
    let lead = h_target.columns(0, k).into_owned();
    let rank_h = numerical_rank(&lead, tol).unwrap_or(0);
    let rank_lh = numerical_rank(&(l * &lead), tol).unwrap_or(0);
    rank_h == k && rank_lh == k
}

/// `K_hat = Ubar (L_hat H)^{-1}` on a target trajectory (least squares when
/// there are more than `n + m` columns).
pub fn learn_target_gain(
    est: &LearnedEstimator,
    target: &Trajectory,
    n: usize,
    tol: &Tolerance,
) -> Result<TargetResult> {
    let m = target.m();
    if target.m() != est.m || target.l() != est.l || n != est.n {
        return Err(Error::Dimension(format!(
            "target (n, m, l) = ({n}, {}, {}) does not match the estimator ({}, {}, {})",
            target.m(),
            target.l(),
            est.n,
            est.m,
            est.l
        )));
    }
    let required = target_min_horizon(n, m);
    if target.horizon() < required {
        return Err(Error::InsufficientData {
            required,
            actual: target.horizon(),
        });
    }
    let c = DataMatrixPair::max_columns(target, n, 0);
    let pair = DataMatrixPair::build(target, n, c, 0)?;
    if !check_persistency(&est.l_hat, &pair.h, tol) {
        return Err(Error::Persistency(
            "target data matrix meets the kernel of the estimation matrix".into(),
        ));
    }
    let lh = &est.l_hat * &pair.h;
    let k_hat = if lh.is_square() {
        lh.clone()
            .try_inverse()
            .map(|inv| &pair.ubar * inv)
            .ok_or_else(|| Error::NumericalFailure("L_hat H is singular".into()))?
    } else {
        &pair.ubar * pseudo_inverse(&lh, tol)?
    };
    let residual = (&pair.ubar - &k_hat * &lh).norm() / pair.ubar.norm().max(1.0);
    if residual > tol.residual_tol {
        return Err(Error::InconsistentData {
            residual,
            tol: tol.residual_tol,
        });
    }
    let k_target = &k_hat * &est.l_hat;
    Ok(TargetResult {
        k_hat,
        k_target,
        residual,
        trajectory_length_used: target.horizon(),
    })
}

/// Spectral norm of the part of `k_target` outside the row space of `L_hat`.
pub fn subspace_error(k_target: &Matrix, est: &LearnedEstimator) -> Result<f64> {
    if k_target.ncols() != est.l_hat.ncols() {
        return Err(Error::Dimension(format!(
            "gain has {} columns, estimator {}",
            k_target.ncols(),
            est.l_hat.ncols()
        )));
    }
    let proj = pseudo_inverse(&est.l_hat, &Tolerance::default())? * &est.l_hat;
    Ok(spectral_norm(&(k_target - k_target * proj)))
}

/// Per-source data: `H`, `Ubar`, the minimum-norm gain and an orthonormal
/// left-null basis `Z` of `H` (as rows).
struct SourceBlocks {
    h: Matrix,
    ubar: Matrix,
    gain: Matrix,
    z: Matrix,
}

fn source_blocks(datasets: &[SourceDataset], n: usize, tol: &Tolerance) -> Result<Vec<SourceBlocks>> {
    par::try_map(datasets, |ds| {
        let c = DataMatrixPair::max_columns(&ds.traj, n, 0);
        let pair = DataMatrixPair::build(&ds.traj, n, c, 0)?;
        let gain = ds.gain(n, tol)?.k;
        let z = nullspace_basis(&pair.h.transpose(), tol)?.transpose();
        Ok(SourceBlocks {
            h: pair.h,
            ubar: pair.ubar,
            gain,
            z,
        })
    })
}

fn check_multi_pre(datasets: &[SourceDataset], n: usize, m: usize) -> Result<usize> {
    let (dm, l) = validate_sources(datasets, n)?;
    if dm != m {
        return Err(Error::Dimension(format!("datasets have m = {dm}, expected {m}")));
    }
    if m * datasets.len() < n + m {
        return Err(Error::InvalidInput(format!(
            "{} sources with m = {m} cannot span an {}-dimensional row space",
            datasets.len(),
            n + m
        )));
    }
    Ok(l)
}

/// Top `k` right singular vectors (as rows) and all singular values, descending.
fn leading_rows(s: &Matrix, k: usize) -> (Matrix, Vec<f64>) {
    let svd = s.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut rows = Matrix::zeros(k, s.ncols());
    for (i, &j) in order.iter().take(k).enumerate() {
        rows.row_mut(i).copy_from(&v_t.row(j));
    }
    (rows, order.iter().map(|&j| svd.singular_values[j]).collect())
}

/// Alternating projection between rank-`(n+m)` stacks and the per-source
/// affine sets `{G_i + X_i Z_i}`.
///
/// Stops once the `(n+m+1)`-th singular value of the stack is at most
/// `rank_tol` times the largest; otherwise returns the best iterate with
/// `converged = false`.
pub fn learn_lest_multi_kernel(
    datasets: &[SourceDataset],
    n: usize,
    m: usize,
    tol: &Tolerance,
    max_iter: usize,
) -> Result<LearnedEstimator> {
    let l = check_multi_pre(datasets, n, m)?;
    let k = n + m;
    let blocks = source_blocks(datasets, n, tol)?;
    let gains: Vec<Matrix> = blocks.iter().map(|b| b.gain.clone()).collect();
    let mut stack = vstack(&gains)?;

    let gap = |sv: &[f64]| {
        let top = sv.first().cloned().unwrap_or(0.0);
        let next = sv.get(k).cloned().unwrap_or(0.0);
        if top > 0.0 {
            next / top
        } else {
            0.0
        }
    };
    let (mut best_rows, sv) = leading_rows(&stack, k);
    let mut best_gap = gap(&sv);
    let mut iterations = 0;
    while best_gap > tol.rank_tol && iterations < max_iter {
        iterations += 1;
        let svd = stack.clone().svd(true, true);
        let low_rank = truncate(&svd, k);
        for (i, b) in blocks.iter().enumerate() {
            let target = low_rank.rows(i * m, m).into_owned();
            let block = if b.z.nrows() == 0 {
                b.gain.clone()
            } else {
                &b.gain + (&target - &b.gain) * b.z.transpose() * &b.z
            };
            stack.rows_mut(i * m, m).copy_from(&block);
        }
        let (rows, sv) = leading_rows(&stack, k);
        let g = gap(&sv);
        if g < best_gap {
            best_gap = g;
            best_rows = rows;
        }
    }
    LearnedEstimator::from_rows(
        best_rows,
        (n, m, l),
        EstimatorMethod::MultiKernelCorrection,
        Diagnostics {
            iterations,
            objective: Some(best_gap),
            converged: best_gap <= tol.rank_tol,
            best_start: None,
        },
        tol,
    )
}

fn truncate(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, k: usize) -> Matrix {
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = Matrix::zeros(u.nrows(), v_t.ncols());
    for &j in order.iter().take(k) {
        out += u.column(j) * v_t.row(j) * svd.singular_values[j];
    }
    out
}

/// Number of random starts used by [`learn_lest_multi_bilinear`].
pub const DEFAULT_STARTS: usize = 5;

struct AlsRun {
    l_hat: Matrix,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Variable-projection objective: with `L` fixed each `K_i` is the exact
/// least-squares minimizer, so only `L` is left.
fn als_gains(blocks: &[SourceBlocks], l_hat: &Matrix, tol: &Tolerance) -> Result<(Vec<Matrix>, f64)> {
    let mut obj = 0.0;
    let mut ks = Vec::with_capacity(blocks.len());
    for b in blocks {
        let lh = l_hat * &b.h;
        let k = &b.ubar * pseudo_inverse(&lh, tol)?;
        obj += (&b.ubar - &k * &lh).norm_squared();
        ks.push(k);
    }
    Ok((ks, obj))
}

/// Orthonormal rows spanning the row space of `l` (keeps `k` rows even when
/// `l` is rank deficient).
fn orthonormal_rows(l: &Matrix) -> Matrix {
    leading_rows(l, l.nrows()).0
}

fn als_single_start(
    blocks: &[SourceBlocks],
    dims: (usize, usize),
    tol: &Tolerance,
    max_iter: usize,
    seed: RngSeed,
) -> Result<AlsRun> {
    use rand_distr::{Distribution, StandardNormal};
    let (k, d) = dims;
    let mut rng = seed.rng();
    let init = Matrix::from_fn(k, d, |_, _| StandardNormal.sample(&mut rng));
    let mut l_hat = orthonormal_rows(&init);
    let scale: f64 = blocks.iter().map(|b| b.ubar.norm_squared()).sum::<f64>().max(1.0);
    let stop = tol.residual_tol * tol.residual_tol * scale;

    let (mut ks, mut obj) = als_gains(blocks, &l_hat, tol)?;
    let mut iterations = 0;
    while obj > stop && iterations < max_iter {
        iterations += 1;
        // vec(K_i L H_i) = (H_i^T kron K_i) vec(L); solved through the normal equations
        let mut normal = Matrix::zeros(k * d, k * d);
        let mut rhs = Matrix::zeros(k, d);
        for (b, kk) in blocks.iter().zip(&ks) {
            normal += (&b.h * b.h.transpose()).kronecker(&(kk.transpose() * kk));
            rhs += kk.transpose() * &b.ubar * b.h.transpose();
        }
        let rhs = crate::linalg::vec(&rhs);
        let sol = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => pseudo_inverse(&normal, tol)? * rhs,
        };
        let next = Matrix::from_column_slice(k, d, sol.as_slice());
        l_hat = orthonormal_rows(&next);
        let prev = obj;
        (ks, obj) = als_gains(blocks, &l_hat, tol)?;
        if prev - obj <= stop {
            break;
        }
    }
    Ok(AlsRun {
        l_hat,
        objective: obj,
        iterations,
        converged: obj <= stop,
    })
}

/// Alternating least squares on `sum_i ||Ubar_i - K_i L H_i||^2` with
/// [`DEFAULT_STARTS`] seeded random starts; the lowest objective wins, ties
/// going to the earliest start.
///
/// Iteration stops when the objective, or its decrease over one sweep, falls
/// below `residual_tol^2` times `sum_i ||Ubar_i||^2`.
pub fn learn_lest_multi_bilinear(
    datasets: &[SourceDataset],
    n: usize,
    m: usize,
    tol: &Tolerance,
    max_iter: usize,
    seed: RngSeed,
) -> Result<LearnedEstimator> {
    learn_lest_multi_bilinear_with_starts(datasets, n, m, tol, max_iter, seed, DEFAULT_STARTS)
}

pub fn learn_lest_multi_bilinear_with_starts(
    datasets: &[SourceDataset],
    n: usize,
    m: usize,
    tol: &Tolerance,
    max_iter: usize,
    seed: RngSeed,
    starts: usize,
) -> Result<LearnedEstimator> {
    let l = check_multi_pre(datasets, n, m)?;
    if starts == 0 {
        return Err(Error::InvalidInput("at least one start is required".into()));
    }
    let blocks = source_blocks(datasets, n, tol)?;
    let dims = (n + m, n * (m + l));
    let idx: Vec<usize> = (0..starts).collect();
    let runs = par::try_map(&idx, |&s| {
        als_single_start(&blocks, dims, tol, max_iter, seed.derive(s as u64))
    })?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.objective < runs[best].objective {
            best = i;
        }
    }
    let run = &runs[best];
    LearnedEstimator::from_rows(
        run.l_hat.clone(),
        (n, m, l),
        EstimatorMethod::BilinearAls,
        Diagnostics {
            iterations: run.iterations,
            objective: Some(run.objective),
            converged: run.converged,
            best_start: Some(best),
        },
        tol,
    )
}
