//! Reproducible experiment scenarios and their flat-file results.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{estimate_dimension, expected_rank, DataMatrixPair};
use crate::ensemble::{detuned_compensator, draw_plant, draw_task};
use crate::error::{Error, Result};
use crate::imitation::{imitation_min_horizon, learn_klqg};
use crate::linalg::{numerical_rank, Matrix, Tolerance};
use crate::lti::{
    lqg_cost_estimate, simulate_closed_loop, static_gain_cost_estimate, InitialState, LinearSystem, RngSeed, Trajectory,
};
use crate::oracle::{
    build_compensator, separation_decomposition, static_gain_row_lemma2, static_lqg_gain, Compensator, LqgTask,
};
use crate::par;
use crate::transfer::{
    learn_lest_multi_bilinear, learn_lest_multi_kernel, learn_lest_single_input, learn_target_gain, subspace_error,
    target_min_horizon, EstimatorMethod, SourceDataset,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ReactorSingle,
    ReactorMulti,
    RankLaw,
    Dimension,
    EnsembleTransfer,
    CostClosedloop,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::ReactorSingle,
        Scenario::ReactorMulti,
        Scenario::RankLaw,
        Scenario::Dimension,
        Scenario::EnsembleTransfer,
        Scenario::CostClosedloop,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::ReactorSingle => "reactor-single",
            Scenario::ReactorMulti => "reactor-multi",
            Scenario::RankLaw => "rank-law",
            Scenario::Dimension => "dimension",
            Scenario::EnsembleTransfer => "ensemble-transfer",
            Scenario::CostClosedloop => "cost-closedloop",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.tag() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario '{s}'")))
    }
}

fn default_tolerances() -> Tolerance {
    Tolerance::data()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: RngSeed,
    #[serde(alias = "N_sources")]
    pub n_sources: usize,
    #[serde(alias = "T_source")]
    pub t_source: usize,
    #[serde(alias = "T_target")]
    pub t_target: usize,
    #[serde(default = "default_tolerances")]
    pub tolerances: Tolerance,
    pub output_path: PathBuf,
}

impl ExperimentConfig {
    /// Default batch-reactor settings: minimal source and target horizons, 5 sources
    /// (single input) or 10 (two inputs).
    pub fn reactor_defaults(scenario: Scenario, seed: RngSeed, output_path: impl Into<PathBuf>) -> Self {
        let (n_sources, t_target) = match scenario {
            Scenario::ReactorMulti => (10, target_min_horizon(REACTOR_N, 2)),
            _ => (5, target_min_horizon(REACTOR_N, 1)),
        };
        Self {
            scenario,
            seed,
            n_sources,
            t_source: imitation_min_horizon(REACTOR_N, 1),
            t_target,
            tolerances: Tolerance::data(),
            output_path: output_path.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 {
            return Err(Error::InvalidInput("n_sources must be positive".into()));
        }
        if self.t_source == 0 || self.t_target == 0 {
            return Err(Error::InvalidInput("trajectory horizons must be positive".into()));
        }
        Tolerance::new(self.tolerances.rank_tol, self.tolerances.residual_tol)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Equal,
    /// Reported for information; always passes.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scenario: Scenario,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub comparison: Comparison,
    pub pass: bool,
    pub wall_time_s: f64,
}

impl ResultRecord {
    fn new(
        scenario: Scenario,
        seed: RngSeed,
        metric: impl Into<String>,
        value: f64,
        cmp: Comparison,
        threshold: Option<f64>,
    ) -> Self {
        let pass = value.is_finite()
            && match (cmp, threshold) {
                (Comparison::AtMost, Some(t)) => value <= t,
                (Comparison::AtLeast, Some(t)) => value >= t,
                (Comparison::Equal, Some(t)) => value == t,
                _ => true,
            };
        Self {
            scenario,
            seed: seed.0,
            metric: metric.into(),
            value,
            threshold,
            comparison: cmp,
            pass,
            wall_time_s: 0.0,
        }
    }

    fn timed(mut self, start: Instant) -> Self {
        self.wall_time_s = start.elapsed().as_secs_f64();
        self
    }
}

/// Collects records of one scenario run.
struct Recorder {
    scenario: Scenario,
    seed: RngSeed,
    out: Vec<ResultRecord>,
}

impl Recorder {
    fn new(scenario: Scenario, seed: RngSeed) -> Self {
        Self {
            scenario,
            seed,
            out: Vec::new(),
        }
    }

    fn push(&mut self, metric: impl Into<String>, value: f64, cmp: Comparison, threshold: Option<f64>, start: Instant) {
        self.out
            .push(ResultRecord::new(self.scenario, self.seed, metric, value, cmp, threshold).timed(start));
    }

    fn at_most(&mut self, metric: impl Into<String>, value: f64, t: f64, start: Instant) {
        self.push(metric, value, Comparison::AtMost, Some(t), start);
    }

    fn at_least(&mut self, metric: impl Into<String>, value: f64, t: f64, start: Instant) {
        self.push(metric, value, Comparison::AtLeast, Some(t), start);
    }

    fn equal(&mut self, metric: impl Into<String>, value: f64, t: f64, start: Instant) {
        self.push(metric, value, Comparison::Equal, Some(t), start);
    }

    fn info(&mut self, metric: impl Into<String>, value: f64, start: Instant) {
        self.push(metric, value, Comparison::Info, None, start);
    }
}

pub const REACTOR_N: usize = 4;

/// Published target gain of the single-input reactor, rounded to two decimals.
pub const REACTOR_PRINTED_GAIN: [f64; 8] = [-0.01, 0.16, -0.54, 1.02, 2.6, -13.34, 21.25, -10.60];

/// Open-loop unstable batch reactor; `two_input` selects the second input column.
pub fn reactor_system(two_input: bool) -> LinearSystem {
    let a = Matrix::from_row_slice(
        4,
        4,
        &[
            1.178, 0.001, 0.511, -0.403, //
            -0.051, 0.661, -0.011, 0.061, //
            0.076, 0.335, 0.560, 0.382, //
            0.0, 0.335, 0.089, 0.849,
        ],
    );
    let b = if two_input {
        Matrix::from_row_slice(4, 2, &[0.004, -0.087, 0.467, 0.001, 0.213, -0.235, 0.213, -0.016])
    } else {
        Matrix::from_column_slice(4, 1, &[0.004, 0.467, 0.213, 0.213])
    };
    let c = Matrix::from_row_slice(1, 4, &[-0.44, -0.51, 0.09, 0.44]);
    LinearSystem::new(a, b, c, Matrix::identity(4, 4) * 1.5, Matrix::from_element(1, 1, 0.6))
        .expect("reactor data is valid")
}

pub fn reactor_target_task(two_input: bool) -> LqgTask {
    let q = Matrix::from_row_slice(
        4,
        4,
        &[
            6.0, 1.0, 1.0, -3.0, 1.0, 1.0, 0.0, -1.0, 1.0, 0.0, 3.0, 0.0, -3.0, -1.0, 0.0, 2.0,
        ],
    );
    let r = if two_input {
        Matrix::from_diagonal(&crate::linalg::Vector::from_vec(vec![1.0, 4.0]))
    } else {
        Matrix::identity(1, 1)
    };
    LqgTask::new(q, r, "target").expect("reactor weights are valid")
}

/// `Q_i = i I_4`, `R_i = I_m` for `i = 1..=count`.
pub fn reactor_source_tasks(count: usize, two_input: bool) -> Vec<LqgTask> {
    let m = if two_input { 2 } else { 1 };
    (1..=count)
        .map(|i| {
            LqgTask::new(
                Matrix::identity(4, 4) * i as f64,
                Matrix::identity(m, m),
                format!("source-{i}"),
            )
            .expect("source weights are valid")
        })
        .collect()
}

/// Seed of the target expert trajectory; sources use `seed.derive(i)` for `i >= 1`.
const TARGET_STREAM: u64 = 0;

/// Steps simulated before an expert trajectory is recorded. Starting at
/// `xhat = 0` pins `u(0) = 0`, which costs the first data matrix a rank.
pub const EXPERT_BURN_IN: usize = 20;

/// Closed-loop expert record of `horizon + 1` samples after [`EXPERT_BURN_IN`] steps.
pub fn expert_trajectory(sys: &LinearSystem, comp: &Compensator, horizon: usize, seed: RngSeed) -> Result<Trajectory> {
    let init = InitialState {
        burn_in: EXPERT_BURN_IN,
        ..InitialState::default()
    };
    Ok(simulate_closed_loop(sys, comp, horizon, seed, &init)?.trajectory)
}

fn source_datasets(sys: &LinearSystem, tasks: &[LqgTask], horizon: usize, seed: RngSeed) -> Result<Vec<SourceDataset>> {
    let indexed: Vec<(usize, &LqgTask)> = tasks.iter().enumerate().collect();
    par::try_map(&indexed, |&(i, task)| {
        let comp = build_compensator(sys, task)?;
        let traj = expert_trajectory(sys, &comp, horizon, seed.derive(i as u64 + 1))?;
        Ok(SourceDataset::new(traj, task.label.clone()))
    })
}

fn rel_error(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn run_reactor_single(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect_scenario(cfg, &[Scenario::ReactorSingle])?;
    let tol = cfg.tolerances;
    let model_tol = Tolerance::default();
    let mut rec = Recorder::new(cfg.scenario, cfg.seed);
    let sys = reactor_system(false);
    let target = reactor_target_task(false);

    let start = Instant::now();
    let comp = build_compensator(&sys, &target)?;
    let k_model = static_lqg_gain(&comp, &model_tol)?;
    let printed = Matrix::from_row_slice(1, 8, &REACTOR_PRINTED_GAIN);
    rec.at_most("printed_gain_max_abs_dev", (&k_model - &printed).amax(), 0.01, start);

    let start = Instant::now();
    let expert = expert_trajectory(&sys, &comp, cfg.t_source, cfg.seed.derive(TARGET_STREAM))?;
    let learned = learn_klqg(&expert, REACTOR_N, &tol)?;
    rec.at_most("imitation_rel_error", rel_error(&learned.k, &k_model), 1e-6, start);
    rec.equal("imitation_unique", learned.unique as u8 as f64, 1.0, start);

    let start = Instant::now();
    let datasets = source_datasets(
        &sys,
        &reactor_source_tasks(cfg.n_sources, false),
        cfg.t_source,
        cfg.seed,
    )?;
    let est = match learn_lest_single_input(&datasets, REACTOR_N, &tol) {
        Ok(est) => est,
        Err(Error::DiversityViolation { achieved, .. }) => {
            // later stages need the estimator; report them as failed
            rec.equal("kernel_dimension", achieved as f64, 3.0, start);
            rec.at_most("subspace_error", f64::NAN, 1e-6, start);
            rec.at_most("transfer_rel_error", f64::NAN, 1e-6, start);
            rec.equal("short_target_rejected", f64::NAN, 1.0, start);
            return Ok(rec.out);
        }
        Err(e) => return Err(e),
    };
    rec.equal("kernel_dimension", est.kernel_basis.ncols() as f64, 3.0, start);
    rec.at_most("subspace_error", subspace_error(&k_model, &est)?, 1e-6, start);

    let start = Instant::now();
    let target_traj = expert_trajectory(&sys, &comp, cfg.t_target, cfg.seed.derive(TARGET_STREAM))?;
    let result = learn_target_gain(&est, &target_traj, REACTOR_N, &tol)?;
    rec.at_most("transfer_rel_error", rel_error(&result.k_target, &k_model), 1e-6, start);
    rec.info("target_samples", (result.trajectory_length_used + 1) as f64, start);

    let start = Instant::now();
    let bound = target_min_horizon(REACTOR_N, 1);
    let short = expert_trajectory(&sys, &comp, bound - 1, cfg.seed.derive(TARGET_STREAM))?;
    let rejected = matches!(
        learn_target_gain(&est, &short, REACTOR_N, &tol),
        Err(Error::InsufficientData { .. })
    );
    rec.equal("short_target_rejected", rejected as u8 as f64, 1.0, start);
    Ok(rec.out)
}

/// ALS sweep budget for the two-input experiment.
pub const MULTI_ALS_MAX_ITER: usize = 500;
/// Alternating-projection sweep budget for the two-input experiment.
pub const MULTI_KERNEL_MAX_ITER: usize = 5000;
/// Largest subspace error accepted at the final source count.
pub const MULTI_FINAL_THRESHOLD: f64 = 1e-3;

pub fn multi_metric(method: EstimatorMethod, n_sources: usize) -> String {
    format!("subspace_error/{}/N={n_sources:02}", method.tag())
}

/// Subspace error of both two-input methods for `N = 2..=n_sources`.
///
/// The reference gain is the separated form `K L_est` of the target
/// compensator, whose row space is the one the methods try to recover.
pub fn run_reactor_multi(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect_scenario(cfg, &[Scenario::ReactorMulti])?;
    let tol = cfg.tolerances;
    let mut rec = Recorder::new(cfg.scenario, cfg.seed);
    let sys = reactor_system(true);
    let comp = build_compensator(&sys, &reactor_target_task(true))?;
    let k_ref = separation_decomposition(&comp, &Tolerance::default())?.gain();

    let start = Instant::now();
    let datasets = source_datasets(&sys, &reactor_source_tasks(cfg.n_sources, true), cfg.t_source, cfg.seed)?;
    let datasets = par::try_map(&datasets, |ds| ds.clone().with_gain(REACTOR_N, &tol))?;
    let unique = datasets
        .iter()
        .filter(|d| d.learned_gain.as_ref().is_some_and(|g| g.unique))
        .count();
    rec.equal("source_unique_count", unique as f64, 0.0, start);

    let counts: Vec<usize> = (2..=cfg.n_sources).collect();
    let rows = par::try_map(&counts, |&n_src| {
        let subset = &datasets[..n_src];
        let mut out = Vec::new();
        for method in [EstimatorMethod::MultiKernelCorrection, EstimatorMethod::BilinearAls] {
            let start = Instant::now();
            let est = match method {
                EstimatorMethod::MultiKernelCorrection => {
                    learn_lest_multi_kernel(subset, REACTOR_N, 2, &tol, MULTI_KERNEL_MAX_ITER)
                }
                _ => learn_lest_multi_bilinear(
                    subset,
                    REACTOR_N,
                    2,
                    &tol,
                    MULTI_ALS_MAX_ITER,
                    cfg.seed.derive(1000 + n_src as u64),
                ),
            };
            match est {
                Ok(est) => {
                    let err = subspace_error(&k_ref, &est)?;
                    out.push((multi_metric(method, n_src), err, start));
                    let obj = est.diagnostics.objective.unwrap_or(f64::NAN);
                    out.push((format!("objective/{}/N={n_src:02}", method.tag()), obj, start));
                }
                // too few sources for an (n+m)-dimensional row space
                Err(Error::InvalidInput(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    })?;
    for (metric, value, start) in rows.into_iter().flatten() {
        let is_final = metric.starts_with("subspace_error") && metric.ends_with(&format!("N={:02}", cfg.n_sources));
        if is_final {
            rec.at_most(metric, value, MULTI_FINAL_THRESHOLD, start);
        } else {
            rec.info(metric, value, start);
        }
    }
    Ok(rec.out)
}

/// Draw counts of the property sweeps.
pub const RANK_LAW_DRAWS: usize = 200;
pub const DIMENSION_SEEDS: usize = 100;
pub const SEPARATION_DRAWS: usize = 100;
pub const TRANSFER_DRAWS: usize = 50;
pub const COST_SEEDS: usize = 50;
pub const COST_HORIZON: usize = 2000;
pub const DIMENSION_HORIZON: usize = 60;

pub fn run_property_sweeps(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    expect_scenario(
        cfg,
        &[
            Scenario::RankLaw,
            Scenario::Dimension,
            Scenario::EnsembleTransfer,
            Scenario::CostClosedloop,
        ],
    )?;
    let mut rec = Recorder::new(cfg.scenario, cfg.seed);
    match cfg.scenario {
        Scenario::RankLaw => {
            let start = Instant::now();
            let seeds: Vec<RngSeed> = (0..RANK_LAW_DRAWS as u64).map(|k| cfg.seed.derive(k)).collect();
            let ok = par::try_map(&seeds, |&s| rank_law_draw(s, &cfg.tolerances))?;
            let rate = ok.iter().filter(|&&b| b).count() as f64 / ok.len() as f64;
            rec.at_least("rank_law_pass_rate", rate, 0.95, start);
        }
        Scenario::Dimension => {
            let start = Instant::now();
            let rate = dimension_recovery_rate(cfg.seed, DIMENSION_SEEDS, &cfg.tolerances)?;
            rec.at_least("dimension_recovery_rate", rate, 0.95, start);
        }
        Scenario::EnsembleTransfer => {
            let start = Instant::now();
            let sep = separation_sweep(cfg.seed, SEPARATION_DRAWS)?;
            rec.at_least("separation_identity_rate", sep.identity_rate, 1.0, start);
            rec.info("separation_identity_rate_single_input", sep.identity_rate_single, start);
            rec.at_least("separation_rank_rate", sep.rank_rate, 1.0, start);
            rec.at_most("row_gain_max_rel_error", sep.row_gain_max_rel_error, 1e-8, start);
            let start = Instant::now();
            let rate = ensemble_transfer_rate(cfg.seed, TRANSFER_DRAWS, &cfg.tolerances)?;
            rec.at_least("ensemble_transfer_success_rate", rate, 0.95, start);
        }
        Scenario::CostClosedloop => {
            let start = Instant::now();
            let gap = closed_loop_cost_gap(cfg, COST_SEEDS, COST_HORIZON)?;
            rec.at_most("static_vs_dynamic_cost_rel_gap", gap, 0.02, start);
        }
        _ => unreachable!("checked above"),
    }
    Ok(rec.out)
}

fn expect_scenario(cfg: &ExperimentConfig, allowed: &[Scenario]) -> Result<()> {
    cfg.validate()?;
    if allowed.contains(&cfg.scenario) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "scenario {} is not handled here",
            cfg.scenario
        )))
    }
}

/// One (system, compensator, seed) draw of the rank law: every `(r, c)` on a
/// grid must give `rank H_{r,c} = min{(m+l) r, c, n + l r}`.
pub fn rank_law_draw(seed: RngSeed, tol: &Tolerance) -> Result<bool> {
    let mut rng = seed.derive(0).rng();
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=2);
    let l = rng.random_range(1..=2);
    let draw = draw_plant(seed.derive(1), n, m, l)?;
    // odd draws use a detuned (non-optimal) stabilizing compensator
    let comp = if rng.random_bool(0.5) {
        detuned_compensator(&draw, 0.5)?.unwrap_or_else(|| draw.comp.clone())
    } else {
        draw.comp.clone()
    };
    let horizon = 40;
    let traj = expert_trajectory(&draw.sys, &comp, horizon, seed.derive(2))?;
    for r in 1..=n + 2 {
        let c_max = DataMatrixPair::max_columns(&traj, r, 0);
        let mut cs = vec![1, 2, n, (m + l) * r, n + l * r, c_max];
        cs.retain(|&c| c >= 1 && c <= c_max);
        cs.sort_unstable();
        cs.dedup();
        for c in cs {
            let h = DataMatrixPair::build_hankel(&traj, r, c, 0)?;
            if numerical_rank(&h, tol)? != expected_rank(r, c, n, m, l) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn dimension_recovery_rate(seed: RngSeed, seeds: usize, tol: &Tolerance) -> Result<f64> {
    let sys = reactor_system(false);
    let comp = build_compensator(&sys, &reactor_target_task(false))?;
    let list: Vec<RngSeed> = (0..seeds as u64).map(|k| seed.derive(k)).collect();
    let hits = par::try_map(&list, |&s| {
        let traj = expert_trajectory(&sys, &comp, DIMENSION_HORIZON, s)?;
        Ok(matches!(estimate_dimension(&traj, 8, tol), Ok(d) if d.n == REACTOR_N))
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / seeds as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct SeparationSweep {
    /// Share of draws with `||K L_est - K_LQG|| <= 1e-8 ||K_LQG||`.
    pub identity_rate: f64,
    /// The same share restricted to single-input draws.
    pub identity_rate_single: f64,
    /// Share of draws with `rank L_est = n + m`.
    pub rank_rate: f64,
    /// Largest relative deviation of the row-wise gains from the stacked gain (two-input draws).
    pub row_gain_max_rel_error: f64,
}

pub fn separation_sweep(seed: RngSeed, draws: usize) -> Result<SeparationSweep> {
    let tol = Tolerance::default();
    let list: Vec<RngSeed> = (0..draws as u64).map(|k| seed.derive(k)).collect();
    let rows = par::try_map(&list, |&s| {
        let mut rng = s.derive(0).rng();
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=2);
        let l = rng.random_range(1..=2);
        let draw = draw_plant(s.derive(1), n, m, l)?;
        let k_lqg = static_lqg_gain(&draw.comp, &tol)?;
        let sep = separation_decomposition(&draw.comp, &tol)?;
        let identity = rel_error(&sep.gain(), &k_lqg) <= 1e-8;
        let rank_ok = numerical_rank(&sep.l_est, &tol)? == n + m;
        let mut lemma2 = 0.0_f64;
        if m > 1 {
            for i in 0..m {
                let row = static_gain_row_lemma2(&draw.comp, i, &tol)?;
                let want = k_lqg.rows(i, 1).into_owned();
                lemma2 = lemma2.max(rel_error(&row, &want));
            }
        }
        Ok((m, identity, rank_ok, lemma2))
    })?;
    let count = |f: fn(&(usize, bool, bool, f64)) -> bool| rows.iter().filter(|r| f(r)).count() as f64;
    let singles = count(|r| r.0 == 1);
    Ok(SeparationSweep {
        identity_rate: count(|r| r.1) / draws as f64,
        identity_rate_single: if singles > 0.0 {
            count(|r| r.0 == 1 && r.1) / singles
        } else {
            1.0
        },
        rank_rate: count(|r| r.2) / draws as f64,
        row_gain_max_rel_error: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}

/// Single-input random plants, `N = n + 1` sources with random diagonal `Q_i`:
/// share of draws where the transferred target gain matches the model gain.
pub fn ensemble_transfer_rate(seed: RngSeed, draws: usize, tol: &Tolerance) -> Result<f64> {
    let list: Vec<RngSeed> = (0..draws as u64).map(|k| seed.derive(k)).collect();
    let hits = par::try_map(&list, |&s| ensemble_transfer_draw(s, tol))?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / draws as f64)
}

pub fn ensemble_transfer_draw(seed: RngSeed, tol: &Tolerance) -> Result<bool> {
    let mut rng = seed.derive(0).rng();
    let n = rng.random_range(1..=5);
    let l = rng.random_range(1..=2);
    let draw = draw_plant(seed.derive(1), n, 1, l)?;
    let tasks: Vec<LqgTask> = (0..=n)
        .map(|i| draw_task(&mut rng, n, 1, &format!("source-{i}")))
        .collect::<Result<_>>()?;
    let horizon = imitation_min_horizon(n, l);
    let datasets = source_datasets(&draw.sys, &tasks, horizon, seed.derive(2))?;
    let est = match learn_lest_single_input(&datasets, n, tol) {
        Ok(e) => e,
        Err(Error::DiversityViolation { .. } | Error::InconsistentData { .. }) => return Ok(false),
        Err(e) => return Err(e),
    };
    let k_model = static_lqg_gain(&draw.comp, &Tolerance::default())?;
    let traj = expert_trajectory(&draw.sys, &draw.comp, target_min_horizon(n, 1), seed.derive(3))?;
    match learn_target_gain(&est, &traj, n, tol) {
        Ok(res) => Ok(rel_error(&res.k_target, &k_model) <= 1e-6),
        Err(Error::Persistency(_) | Error::InconsistentData { .. } | Error::NumericalFailure(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Relative gap between the Monte-Carlo costs of the learned static window
/// law and the dynamic compensator, on common noise sequences.
pub fn closed_loop_cost_gap(cfg: &ExperimentConfig, seeds: usize, horizon: usize) -> Result<f64> {
    let sys = reactor_system(false);
    let task = reactor_target_task(false);
    let comp = build_compensator(&sys, &task)?;
    let expert = expert_trajectory(&sys, &comp, cfg.t_source, cfg.seed.derive(TARGET_STREAM))?;
    let learned = learn_klqg(&expert, REACTOR_N, &cfg.tolerances)?;
    let list: Vec<RngSeed> = (0..seeds as u64).map(|k| cfg.seed.derive(100 + k)).collect();
    let dynamic = lqg_cost_estimate(&sys, &comp, &task, horizon, &list)?;
    let fixed = static_gain_cost_estimate(&sys, &learned.k, REACTOR_N, &comp, &task, horizon, &list)?;
    Ok((fixed - dynamic).abs() / dynamic)
}

/// Runs the configured scenario; records are ordered by `(seed, metric)`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let mut out = match cfg.scenario {
        Scenario::ReactorSingle => run_reactor_single(cfg)?,
        Scenario::ReactorMulti => run_reactor_multi(cfg)?,
        _ => run_property_sweeps(cfg)?,
    };
    sort_records(&mut out);
    Ok(out)
}

pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| (a.seed, &a.metric).cmp(&(b.seed, &b.metric)));
}

pub fn all_pass(records: &[ResultRecord]) -> bool {
    records.iter().all(|r| r.pass)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_csv<W: std::io::Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "seed", "metric", "value", "threshold", "pass"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.scenario.tag().to_string(),
            r.seed.to_string(),
            r.metric.clone(),
            format!("{:.16e}", r.value),
            r.threshold.map(|t| format!("{t:e}")).unwrap_or_default(),
            r.pass.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub all_pass: bool,
    pub records: Vec<ResultRecord>,
}

impl Summary {
    pub fn new(records: Vec<ResultRecord>) -> Self {
        let passed = records.iter().filter(|r| r.pass).count();
        Self {
            total: records.len(),
            passed,
            failed: records.len() - passed,
            all_pass: passed == records.len(),
            records,
        }
    }
}

/// Path of the JSON summary written next to a CSV result file.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `path` (CSV) and its JSON summary.
pub fn write_outputs(records: &[ResultRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(records, std::fs::File::create(path)?)?;
    let summary = Summary::new(records.to_vec());
    std::fs::write(summary_path(path), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
