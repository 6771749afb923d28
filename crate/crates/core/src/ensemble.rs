//! Random plants and tasks for Monte-Carlo property checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, Matrix, Tolerance};
use crate::lti::{check_controllable, check_observable, LinearSystem, RngSeed};
use crate::oracle::{build_compensator, check_assumption1, Compensator, LqgTask};

/// Redraws allowed before a draw is reported as failed.
pub const MAX_REDRAWS: usize = 20;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `A` Gaussian rescaled to a spectral radius drawn from `[0.3, 1.2]`,
/// `B`, `C` Gaussian, `W = w I`, `V = v I` with `w, v` uniform on `[0.1, 2]`.
pub fn draw_system(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> Result<LinearSystem> {
    let raw = gaussian(rng, n, n);
    let rho = spectral_radius(&raw);
    let target = rng.random_range(0.3..=1.2);
    let a = if rho > 0.0 { raw * (target / rho) } else { raw };
    let b = gaussian(rng, n, m);
    let c = gaussian(rng, l, n);
    let w = rng.random_range(0.1..=2.0);
    let v = rng.random_range(0.1..=2.0);
    LinearSystem::new(a, b, c, Matrix::identity(n, n) * w, Matrix::identity(l, l) * v)
}

/// Diagonal `Q` with entries uniform on `[0.5, 5]` and `R = r I`, `r` uniform on `[0.5, 2]`.
pub fn draw_task(rng: &mut ChaCha8Rng, n: usize, m: usize, label: &str) -> Result<LqgTask> {
    let q = Matrix::from_diagonal(&crate::linalg::Vector::from_fn(n, |_, _| rng.random_range(0.5..=5.0)));
    let r = Matrix::identity(m, m) * rng.random_range(0.5..=2.0);
    LqgTask::new(q, r, label)
}

/// A plant with its optimal compensator for a random task.
#[derive(Debug, Clone)]
pub struct Draw {
    pub sys: LinearSystem,
    pub task: LqgTask,
    pub comp: Compensator,
    pub redraws: usize,
}

/// Draws until the plant is controllable and observable and the optimal
/// compensator satisfies the observability/controllability assumption.
pub fn draw_plant(seed: RngSeed, n: usize, m: usize, l: usize) -> Result<Draw> {
    let tol = Tolerance::default();
    let mut rng = seed.rng();
    for redraws in 0..=MAX_REDRAWS {
        let attempt = (|| -> Result<Option<Draw>> {
            let sys = draw_system(&mut rng, n, m, l)?;
            let task = draw_task(&mut rng, n, m, "random")?;
            if !check_controllable(&sys.a, &sys.b, &tol)? || !check_observable(&sys.a, &sys.c, &tol)? {
                return Ok(None);
            }
            let comp = build_compensator(&sys, &task)?;
            if !check_assumption1(&comp, &tol)? {
                return Ok(None);
            }
            Ok(Some(Draw {
                sys,
                task,
                comp,
                redraws,
            }))
        })();
        match attempt {
            Ok(Some(d)) => return Ok(d),
            Ok(None) | Err(Error::NumericalFailure(_)) | Err(Error::AssumptionViolated(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::AssumptionViolated(format!(
        "no admissible plant after {MAX_REDRAWS} redraws"
    )))
}

/// Sub-optimal but stabilizing compensator: the optimal one with its state
/// feedback gain scaled by `alpha`, when that keeps the loop stable.
pub fn detuned_compensator(draw: &Draw, alpha: f64) -> Result<Option<Compensator>> {
    let l_f = crate::oracle::kalman_gain(&draw.sys)?;
    let comp = Compensator::from_gains(&draw.sys, &(&draw.comp.h * alpha), &l_f)?;
    if spectral_radius(&comp.closed_loop_matrix(&draw.sys)) < 1.0 {
        Ok(Some(comp))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible() {
        let a = draw_plant(RngSeed(11), 3, 1, 2).unwrap();
        let b = draw_plant(RngSeed(11), 3, 1, 2).unwrap();
        assert_eq!(a.sys.a, b.sys.a);
        assert_eq!(a.comp, b.comp);
    }

    #[test]
    fn spectral_radius_is_bounded() {
        let mut rng = RngSeed(5).rng();
        for _ in 0..20 {
            let s = draw_system(&mut rng, 4, 2, 1).unwrap();
            assert!(spectral_radius(&s.a) <= 1.2 + 1e-9);
        }
    }
}
