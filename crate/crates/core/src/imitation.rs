//! Static LQG gain learned from a single expert trajectory.

use crate::data::DataMatrixPair;
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, pseudo_inverse, Matrix, Tolerance};
use crate::lti::Trajectory;

#[derive(Debug, Clone)]
pub struct LearnedGain {
    /// `m x n(m+l)`.
    pub k: Matrix,
    /// `||Ubar - K H|| / max(1, ||Ubar||)`.
    pub residual: f64,
    /// `H_{n,c}` had full row rank, so `K` is the only consistent static gain.
    pub unique: bool,
    pub columns: usize,
}

/// Shortest horizon for which the window-`n` data matrix can have full row rank.
pub fn imitation_min_horizon(n: usize, l: usize) -> usize {
    n * (l + 2) - 1
}

/// `K = Ubar H^+` with `H = H_{n,c}`, `c = T - n + 1` (all available columns).
///
/// Shorter trajectories than [`imitation_min_horizon`] still produce a gain
/// (the minimum-norm solution) with `unique = false`.
pub fn learn_klqg(traj: &Trajectory, n: usize, tol: &Tolerance) -> Result<LearnedGain> {
    if n == 0 {
        return Err(Error::InvalidInput("state dimension must be positive".into()));
    }
    let c = DataMatrixPair::max_columns(traj, n, 0);
    if c == 0 {
        return Err(Error::InsufficientData {
            required: imitation_min_horizon(n, traj.l()),
            actual: traj.horizon(),
        });
    }
    let pair = DataMatrixPair::build(traj, n, c, 0)?;
    let k = &pair.ubar * pseudo_inverse(&pair.h, tol)?;
    let residual = (&pair.ubar - &k * &pair.h).norm() / pair.ubar.norm().max(1.0);
    if residual > tol.residual_tol {
        return Err(Error::InconsistentData {
            residual,
            tol: tol.residual_tol,
        });
    }
    let unique = numerical_rank(&pair.h, tol)? == pair.h.nrows();
    Ok(LearnedGain {
        k,
        residual,
        unique,
        columns: c,
    })
}
