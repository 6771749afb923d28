//! Stochastic discrete-time plant, closed-loop simulation and structural checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, hstack, is_symmetric, min_sym_eigenvalue, numerical_rank, sym_sqrt_psd, Matrix, Tolerance, Vector,
};
use crate::oracle::{Compensator, LqgTask};

/// Plant `x(t+1) = A x + B u + w`, `y = C x + v` with `w ~ N(0, W)`, `v ~ N(0, V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub w: Matrix,
    pub v: Matrix,
}

impl LinearSystem {
    /// Validates shapes, finiteness and the noise covariances (W PSD, V PD).
    /// Structural properties are checked separately by [`LinearSystem::check_structure`].
    pub fn new(a: Matrix, b: Matrix, c: Matrix, w: Matrix, v: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and nonempty, got {:?}",
                a.shape()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B must be {n}xm, got {:?}", b.shape())));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!("C must be lx{n}, got {:?}", c.shape())));
        }
        if w.shape() != (n, n) {
            return Err(Error::Dimension(format!("W must be {n}x{n}, got {:?}", w.shape())));
        }
        let l = c.nrows();
        if v.shape() != (l, l) {
            return Err(Error::Dimension(format!("V must be {l}x{l}, got {:?}", v.shape())));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&w, "W"), (&v, "V")] {
            ensure_finite(m, name)?;
        }
        let scale_w = w.norm().max(1.0);
        if !is_symmetric(&w, 1e-12) || min_sym_eigenvalue(&w) < -1e-12 * scale_w {
            return Err(Error::InvalidInput("W must be symmetric positive semidefinite".into()));
        }
        if !is_symmetric(&v, 1e-12) || min_sym_eigenvalue(&v) <= 0.0 {
            return Err(Error::InvalidInput("V must be symmetric positive definite".into()));
        }
        Ok(Self { a, b, c, w, v })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn l(&self) -> usize {
        self.c.nrows()
    }

    /// `(A,B)` and `(A, W^{1/2})` controllable, `(A,C)` observable.
    pub fn check_structure(&self, tol: &Tolerance) -> Result<()> {
        if !check_controllable(&self.a, &self.b, tol)? {
            return Err(Error::AssumptionViolated("(A, B) is not controllable".into()));
        }
        if !check_controllable(&self.a, &sym_sqrt_psd(&self.w), tol)? {
            return Err(Error::AssumptionViolated("(A, W^1/2) is not controllable".into()));
        }
        if !check_observable(&self.a, &self.c, tol)? {
            return Err(Error::AssumptionViolated("(A, C) is not observable".into()));
        }
        Ok(())
    }
}

pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "controllability needs A nxn and B nxm, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut blocks = Vec::with_capacity(a.nrows());
    let mut cur = b.clone();
    for _ in 0..a.nrows() {
        let next = a * &cur;
        blocks.push(cur);
        cur = next;
    }
    hstack(&blocks)
}

pub fn check_controllable(a: &Matrix, b: &Matrix, tol: &Tolerance) -> Result<bool> {
    let ctrb = controllability_matrix(a, b)?;
    Ok(numerical_rank(&ctrb, tol)? == a.nrows())
}

pub fn check_observable(a: &Matrix, c: &Matrix, tol: &Tolerance) -> Result<bool> {
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "observability needs A nxn and C lxn, got {:?} and {:?}",
            a.shape(),
            c.shape()
        )));
    }
    check_controllable(&a.transpose(), &c.transpose(), tol)
}

/// Expert input/output record: column `k` of `inputs`/`outputs` is `u(t0+k)` / `y(t0+k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Matrix,
    pub outputs: Matrix,
    pub start_time: usize,
}

impl Trajectory {
    pub fn new(inputs: Matrix, outputs: Matrix, start_time: usize) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() || inputs.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "input and output sequences must have equal nonzero length, got {} and {}",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(Error::InvalidInput(
                "input and output dimensions must be positive".into(),
            ));
        }
        ensure_finite(&inputs, "inputs")?;
        ensure_finite(&outputs, "outputs")?;
        Ok(Self {
            inputs,
            outputs,
            start_time,
        })
    }

    /// Number of samples `T + 1`.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Horizon `T`: samples are indexed `0..=T`.
    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn l(&self) -> usize {
        self.outputs.nrows()
    }

    /// First `horizon + 1` samples.
    pub fn truncated(&self, horizon: usize) -> Result<Self> {
        if horizon + 1 > self.len() {
            return Err(Error::InsufficientData {
                required: horizon,
                actual: self.horizon(),
            });
        }
        Ok(Self {
            inputs: self.inputs.columns(0, horizon + 1).into_owned(),
            outputs: self.outputs.columns(0, horizon + 1).into_owned(),
            start_time: self.start_time,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// ChaCha8 stream; all Gaussian draws in the crate come from this generator.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Deterministic child seed, for deriving independent streams from one seed.
    pub fn derive(self, index: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0 ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Initial conditions for [`simulate_closed_loop`]. `burn_in` steps are simulated
/// and discarded before recording; `start_time` of the result equals `burn_in`.
#[derive(Debug, Clone, Default)]
pub struct InitialState {
    pub x0: Option<Vector>,
    pub xhat0: Option<Vector>,
    pub burn_in: usize,
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    Vector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

/// Full simulation record, including the true states used for cost evaluation.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub trajectory: Trajectory,
    pub states: Matrix,
}

fn check_compensator(sys: &LinearSystem, comp: &Compensator) -> Result<()> {
    let (n, m, l) = (sys.n(), sys.m(), sys.l());
    if comp.e.shape() != (n, n) || comp.f.shape() != (n, m) || comp.g.shape() != (n, l) || comp.h.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "compensator shapes E{:?} F{:?} G{:?} H{:?} do not fit n={n}, m={m}, l={l}",
            comp.e.shape(),
            comp.f.shape(),
            comp.g.shape(),
            comp.h.shape()
        )));
    }
    Ok(())
}

/// Simulates the plant in closed loop with a dynamic compensator for `steps` steps.
///
/// Per step: `u(t) = H xhat(t)`, `x(t+1) = A x + B u + w(t)`,
/// `y(t+1) = C x(t+1) + v(t+1)`, `xhat(t+1) = E xhat + F u + G y(t+1)`.
/// The record holds `u(0..=T)` and `y(0..=T)` with `y(0) = C x0 + v(0)`.
/// Noise draws per step are `w` then `v`, each `sqrt(cov) * g` with `g` standard normal.
pub fn simulate_closed_loop(
    sys: &LinearSystem,
    comp: &Compensator,
    steps: usize,
    seed: RngSeed,
    init: &InitialState,
) -> Result<ClosedLoopRun> {
    check_compensator(sys, comp)?;
    if steps == 0 {
        return Err(Error::InvalidInput("simulation needs at least one step".into()));
    }
    let (n, m, l) = (sys.n(), sys.m(), sys.l());
    let mut x = init.x0.clone().unwrap_or_else(|| Vector::zeros(n));
    let mut xhat = init.xhat0.clone().unwrap_or_else(|| Vector::zeros(n));
    if x.len() != n || xhat.len() != n {
        return Err(Error::Dimension(format!("initial states must have length {n}")));
    }
    let w_sqrt = sym_sqrt_psd(&sys.w);
    let v_sqrt = sym_sqrt_psd(&sys.v);
    let mut rng = seed.rng();

    let total = init.burn_in + steps + 1;
    let mut inputs = Matrix::zeros(m, steps + 1);
    let mut outputs = Matrix::zeros(l, steps + 1);
    let mut states = Matrix::zeros(n, steps + 1);
    let mut y = &sys.c * &x + &v_sqrt * standard_normal(&mut rng, l);
    for t in 0..total {
        let u = &comp.h * &xhat;
        if t >= init.burn_in {
            let k = t - init.burn_in;
            inputs.set_column(k, &u);
            outputs.set_column(k, &y);
            states.set_column(k, &x);
        }
        if t + 1 == total {
            break;
        }
        let w = &w_sqrt * standard_normal(&mut rng, n);
        let v = &v_sqrt * standard_normal(&mut rng, l);
        x = &sys.a * &x + &sys.b * &u + w;
        y = &sys.c * &x + v;
        xhat = &comp.e * &xhat + &comp.f * &u + &comp.g * &y;
    }
    Ok(ClosedLoopRun {
        trajectory: Trajectory::new(inputs, outputs, init.burn_in)?,
        states,
    })
}

/// Simulates the plant under the static window law `u(t+n) = K [U_n(t); Y_n(t+1)]`.
///
/// The first `window` inputs come from `warm_start` (a dynamic compensator
/// started at `xhat = 0`); from then on every input is produced by `gain` alone.
/// Noise draws follow the same order as [`simulate_closed_loop`], so equal
/// seeds give the same disturbance sequence.
pub fn simulate_static_gain(
    sys: &LinearSystem,
    gain: &Matrix,
    window: usize,
    warm_start: &Compensator,
    steps: usize,
    seed: RngSeed,
) -> Result<ClosedLoopRun> {
    check_compensator(sys, warm_start)?;
    let (n, m, l) = (sys.n(), sys.m(), sys.l());
    if gain.shape() != (m, window * (m + l)) {
        return Err(Error::Dimension(format!(
            "static gain must be {m}x{}, got {:?}",
            window * (m + l),
            gain.shape()
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("simulation needs at least one step".into()));
    }
    let w_sqrt = sym_sqrt_psd(&sys.w);
    let v_sqrt = sym_sqrt_psd(&sys.v);
    let mut rng = seed.rng();
    let mut x = Vector::zeros(n);
    let mut xhat = Vector::zeros(n);
    let mut inputs = Matrix::zeros(m, steps + 1);
    let mut outputs = Matrix::zeros(l, steps + 1);
    let mut states = Matrix::zeros(n, steps + 1);
    let mut y = &sys.c * &x + &v_sqrt * standard_normal(&mut rng, l);
    let mut z = Vector::zeros(window * (m + l));
    for t in 0..=steps {
        outputs.set_column(t, &y);
        states.set_column(t, &x);
        let u = if t < window {
            &warm_start.h * &xhat
        } else {
            let s = t - window;
            for k in 0..window {
                z.rows_mut(k * m, m).copy_from(&inputs.column(s + k));
                z.rows_mut(window * m + k * l, l).copy_from(&outputs.column(s + k + 1));
            }
            gain * &z
        };
        inputs.set_column(t, &u);
        if t == steps {
            break;
        }
        let w = &w_sqrt * standard_normal(&mut rng, n);
        let v = &v_sqrt * standard_normal(&mut rng, l);
        x = &sys.a * &x + &sys.b * &u + w;
        y = &sys.c * &x + v;
        if t < window {
            xhat = &warm_start.e * &xhat + &warm_start.f * &u + &warm_start.g * &y;
        }
    }
    Ok(ClosedLoopRun {
        trajectory: Trajectory::new(inputs, outputs, 0)?,
        states,
    })
}

/// `(1/T) sum_{t<T} x'Qx + u'Ru` for one recorded run.
pub fn quadratic_cost(run: &ClosedLoopRun, task: &LqgTask) -> Result<f64> {
    let n = run.states.nrows();
    let m = run.trajectory.m();
    if task.q.shape() != (n, n) || task.r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "cost weights Q{:?} R{:?} do not fit n={n}, m={m}",
            task.q.shape(),
            task.r.shape()
        )));
    }
    let horizon = run.trajectory.horizon();
    let mut acc = 0.0;
    for t in 0..horizon {
        let x = run.states.column(t);
        let u = run.trajectory.inputs.column(t);
        acc += (x.transpose() * &task.q * x)[(0, 0)] + (u.transpose() * &task.r * u)[(0, 0)];
    }
    Ok(acc / horizon as f64)
}

/// Monte-Carlo estimate of the average LQG cost, averaged over `seeds`.
pub fn lqg_cost_estimate(
    sys: &LinearSystem,
    comp: &Compensator,
    task: &LqgTask,
    steps: usize,
    seeds: &[RngSeed],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("cost estimate needs at least one seed".into()));
    }
    let costs = crate::par::try_map(seeds, |&s| {
        let run = simulate_closed_loop(sys, comp, steps, s, &InitialState::default())?;
        quadratic_cost(&run, task)
    })?;
    Ok(costs.iter().sum::<f64>() / seeds.len() as f64)
}

/// Monte-Carlo cost of the static window law (see [`simulate_static_gain`]).
pub fn static_gain_cost_estimate(
    sys: &LinearSystem,
    gain: &Matrix,
    window: usize,
    warm_start: &Compensator,
    task: &LqgTask,
    steps: usize,
    seeds: &[RngSeed],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("cost estimate needs at least one seed".into()));
    }
    let costs = crate::par::try_map(seeds, |&s| {
        let run = simulate_static_gain(sys, gain, window, warm_start, steps, s)?;
        quadratic_cost(&run, task)
    })?;
    Ok(costs.iter().sum::<f64>() / seeds.len() as f64)
}
