//! Windowed data matrices built from one input/output trajectory.
//!
//! Column `j` of `H_{r,c}` stacks `U_r(t0+j) = [u(t0+j); ...; u(t0+j+r-1)]` above
//! `Y_r(t0+j+1) = [y(t0+j+1); ...; y(t0+j+r)]`. The shifted input block holds
//! `u(t0+r+j)` in column `j`.

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Matrix, Tolerance, Vector};
use crate::lti::Trajectory;

/// `(U_r(t), Y_r(t+1))` for the trajectory sample index `t` (relative to its start).
pub fn stack_window(traj: &Trajectory, r: usize, t: usize) -> Result<(Vector, Vector)> {
    if r == 0 {
        return Err(Error::InvalidInput("window depth must be positive".into()));
    }
    if t + r >= traj.len() {
        return Err(Error::InsufficientData {
            required: t + r,
            actual: traj.horizon(),
        });
    }
    let (m, l) = (traj.m(), traj.l());
    let mut u = Vector::zeros(r * m);
    let mut y = Vector::zeros(r * l);
    for k in 0..r {
        u.rows_mut(k * m, m).copy_from(&traj.inputs.column(t + k));
        y.rows_mut(k * l, l).copy_from(&traj.outputs.column(t + k + 1));
    }
    Ok((u, y))
}

#[derive(Debug, Clone)]
pub struct DataMatrixPair {
    /// `r(m+l) x c`, inputs block above outputs block.
    pub h: Matrix,
    /// `m x c` shifted inputs.
    pub ubar: Matrix,
    pub r: usize,
    pub c: usize,
    pub t0: usize,
}

impl DataMatrixPair {
    /// Needs samples up to index `t0 + r + c - 1`, i.e. horizon `T >= t0 + r + c - 1`.
    pub fn build(traj: &Trajectory, r: usize, c: usize, t0: usize) -> Result<Self> {
        Self::build_inner(traj, r, c, t0, true)
    }

    /// Only the data matrix; the shifted inputs are left empty, so the
    /// trajectory may be one sample shorter.
    pub fn build_hankel(traj: &Trajectory, r: usize, c: usize, t0: usize) -> Result<Matrix> {
        Ok(Self::build_inner(traj, r, c, t0, false)?.h)
    }

    fn build_inner(traj: &Trajectory, r: usize, c: usize, t0: usize, with_ubar: bool) -> Result<Self> {
        if r == 0 || c == 0 {
            return Err(Error::InvalidInput(format!(
                "window depth and column count must be positive, got r={r}, c={c}"
            )));
        }
        // last sample touched: y(t0 + c - 1 + r) for H, u(t0 + r + c - 1) for Ubar
        let required = t0 + r + c - 1;
        if required > traj.horizon() {
            return Err(Error::InsufficientData {
                required,
                actual: traj.horizon(),
            });
        }
        let (m, l) = (traj.m(), traj.l());
        let mut h = Matrix::zeros(r * (m + l), c);
        for j in 0..c {
            let (u, y) = stack_window(traj, r, t0 + j)?;
            h.view_mut((0, j), (r * m, 1)).copy_from(&u);
            h.view_mut((r * m, j), (r * l, 1)).copy_from(&y);
        }
        let ubar = if with_ubar {
            traj.inputs.columns(t0 + r, c).into_owned()
        } else {
            Matrix::zeros(m, 0)
        };
        Ok(Self { h, ubar, r, c, t0 })
    }

    /// Largest column count a trajectory supports for depth `r` from `t0`.
    pub fn max_columns(traj: &Trajectory, r: usize, t0: usize) -> usize {
        (traj.horizon() + 1).saturating_sub(t0 + r)
    }
}

/// Rank of `H_{r,c}` on closed-loop data: `min{(m+l) r, c, n + l r}`.
pub fn expected_rank(r: usize, c: usize, n: usize, m: usize, l: usize) -> usize {
    ((m + l) * r).min(c).min(n + l * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionEstimate {
    pub n: usize,
    pub l: usize,
    /// First window depth at which the data matrix lost row rank.
    pub detected_at: usize,
}

/// Estimates the state dimension from the first window depth `r` at which
/// `rank(H_{r,c}) < (m+l) r` with `c` as large as the trajectory allows (and
/// at least `(m+l)(r+1)`); then `n = rank - l r`.
pub fn estimate_dimension(traj: &Trajectory, r_max: usize, tol: &Tolerance) -> Result<DimensionEstimate> {
    let (m, l) = (traj.m(), traj.l());
    let needed_cols = (m + l) * (r_max + 1);
    let required = r_max + 1 + needed_cols - 1;
    if required > traj.horizon() {
        return Err(Error::InsufficientData {
            required,
            actual: traj.horizon(),
        });
    }
    for r in 1..=r_max + 1 {
        let c = DataMatrixPair::max_columns(traj, r, 0);
        let h = DataMatrixPair::build_hankel(traj, r, c, 0)?;
        let rank = numerical_rank(&h, tol)?;
        if rank < (m + l) * r {
            let n = rank.checked_sub(l * r).filter(|&n| n > 0).ok_or_else(|| {
                Error::NumericalFailure(format!(
                    "rank {rank} at depth {r} is below the output contribution {}",
                    l * r
                ))
            })?;
            return Ok(DimensionEstimate { n, l, detected_at: r });
        }
    }
    Err(Error::NoRankSaturation { r_max })
}
