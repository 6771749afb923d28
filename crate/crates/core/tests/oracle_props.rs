use approx::assert_relative_eq;
use lqg_transfer::data::DataMatrixPair;
use lqg_transfer::ensemble::draw_plant;
use lqg_transfer::experiments::{expert_trajectory, reactor_system, reactor_target_task};
use lqg_transfer::linalg::{numerical_rank, spectral_radius, Matrix, Tolerance};
use lqg_transfer::lti::{simulate_closed_loop, simulate_static_gain, InitialState};
use lqg_transfer::oracle::{
    build_compensator, check_assumption1, dare_residual, kalman_gain, lqr_gain, separation_decomposition, solve_dare,
    static_gain_row_lemma2, static_lqg_gain, DareOptions, LqgTask,
};
use lqg_transfer::{LinearSystem, RngSeed};
use proptest::prelude::*;

fn scalar(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

fn scalar_system(a: f64, b: f64, c: f64, w: f64, v: f64) -> LinearSystem {
    LinearSystem::new(scalar(a), scalar(b), scalar(c), scalar(w), scalar(v)).unwrap()
}

/// Positive root of `b^2 p^2 + (r(1 - a^2) - q b^2) p - q r = 0`.
fn scalar_dare(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let lin = r * (1.0 - a * a) - q * b * b;
    (-lin + (lin * lin + 4.0 * b * b * q * r).sqrt()) / (2.0 * b * b)
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_dare_matches_closed_form(a in -2.0..2.0f64, b in 0.2..3.0f64, q in 0.1..5.0f64, r in 0.1..5.0f64) {
        let p = solve_dare(&scalar(a), &scalar(b), &scalar(q), &scalar(r), &DareOptions::default()).unwrap();
        let want = scalar_dare(a, b, q, r);
        prop_assert!((p[(0, 0)] - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn random_plant_dare_residuals(seed in any::<u64>()) {
        let d = draw_plant(RngSeed(seed), 4, 2, 2).unwrap();
        let p = solve_dare(&d.sys.a, &d.sys.b, &d.task.q, &d.task.r, &DareOptions::default()).unwrap();
        prop_assert!(dare_residual(&d.sys.a, &d.sys.b, &d.task.q, &d.task.r, &p) <= 1e-10);
        let s = solve_dare(&d.sys.a.transpose(), &d.sys.c.transpose(), &d.sys.w, &d.sys.v, &DareOptions::default()).unwrap();
        prop_assert!(dare_residual(&d.sys.a.transpose(), &d.sys.c.transpose(), &d.sys.w, &d.sys.v, &s) <= 1e-10);
        prop_assert!(spectral_radius(&d.comp.closed_loop_matrix(&d.sys)) < 1.0);
    }

    #[test]
    fn single_input_gain_factorizes(seed in any::<u64>(), n in 1usize..6, l in 1usize..3) {
        let tol = Tolerance::default();
        let d = draw_plant(RngSeed(seed), n, 1, l).unwrap();
        let k = static_lqg_gain(&d.comp, &tol).unwrap();
        let sep = separation_decomposition(&d.comp, &tol).unwrap();
        prop_assert!(rel(&sep.gain(), &k) <= 1e-8);
        prop_assert_eq!(numerical_rank(&sep.l_est, &tol).unwrap(), n + 1);
    }

    #[test]
    fn row_wise_gains_match_stacked_gain(seed in any::<u64>(), n in 1usize..5) {
        let tol = Tolerance::default();
        let d = draw_plant(RngSeed(seed), n, 2, 1).unwrap();
        let k = static_lqg_gain(&d.comp, &tol).unwrap();
        for i in 0..2 {
            let row = static_gain_row_lemma2(&d.comp, i, &tol).unwrap();
            let want = k.rows(i, 1).into_owned();
            prop_assert!(rel(&row, &want) <= 1e-6);
        }
    }

    #[test]
    fn static_gain_reproduces_expert_inputs(seed in any::<u64>(), n in 1usize..5, m in 1usize..3, l in 1usize..3) {
        let tol = Tolerance::default();
        let d = draw_plant(RngSeed(seed), n, m, l).unwrap();
        let k = static_lqg_gain(&d.comp, &tol).unwrap();
        let traj = expert_trajectory(&d.sys, &d.comp, 3 * n * (m + l) + n, RngSeed(seed).derive(9)).unwrap();
        let pair = DataMatrixPair::build(&traj, n, DataMatrixPair::max_columns(&traj, n, 0), 0).unwrap();
        let resid = (&pair.ubar - &k * &pair.h).norm() / pair.ubar.norm().max(1.0);
        prop_assert!(resid <= 1e-8, "residual {}", resid);
    }
}

#[test]
fn lqr_gain_sign_convention() {
    let sys = scalar_system(2.0, 1.0, 1.0, 1.0, 1.0);
    let task = LqgTask::new(scalar(1.0), scalar(1.0), "unit").unwrap();
    let k = lqr_gain(&sys, &task).unwrap()[(0, 0)];
    let p = scalar_dare(2.0, 1.0, 1.0, 1.0);
    assert_relative_eq!(k, -p * 2.0 / (1.0 + p), epsilon = 1e-10);
    assert!((2.0 + k).abs() < 1.0);
}

#[test]
fn kalman_gain_scalar_closed_form() {
    let (a, c, w, v) = (0.9, 2.0, 0.5, 0.3);
    let sys = scalar_system(a, 1.0, c, w, v);
    let s = scalar_dare(a, c, w, v);
    let want = s * c / (c * c * s + v);
    assert_relative_eq!(kalman_gain(&sys).unwrap()[(0, 0)], want, epsilon = 1e-10);
}

#[test]
fn reactor_compensator_is_admissible() {
    let tol = Tolerance::default();
    for two_input in [false, true] {
        let sys = reactor_system(two_input);
        let comp = build_compensator(&sys, &reactor_target_task(two_input)).unwrap();
        assert!(check_assumption1(&comp, &tol).unwrap());
        assert!(spectral_radius(&comp.closed_loop_matrix(&sys)) < 1.0);
    }
}

#[test]
fn simulation_is_deterministic() {
    let d = draw_plant(RngSeed(3), 3, 1, 2).unwrap();
    let a = simulate_closed_loop(&d.sys, &d.comp, 50, RngSeed(8), &InitialState::default()).unwrap();
    let b = simulate_closed_loop(&d.sys, &d.comp, 50, RngSeed(8), &InitialState::default()).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.states, b.states);
    let c = simulate_closed_loop(&d.sys, &d.comp, 50, RngSeed(9), &InitialState::default()).unwrap();
    assert_ne!(a.trajectory, c.trajectory);
}

#[test]
fn static_window_law_tracks_dynamic_compensator() {
    let tol = Tolerance::default();
    let d = draw_plant(RngSeed(21), 3, 1, 1).unwrap();
    let k = static_lqg_gain(&d.comp, &tol).unwrap();
    let dynamic = simulate_closed_loop(&d.sys, &d.comp, 80, RngSeed(5), &InitialState::default()).unwrap();
    let fixed = simulate_static_gain(&d.sys, &k, 3, &d.comp, 80, RngSeed(5)).unwrap();
    let gap = (&dynamic.trajectory.inputs - &fixed.trajectory.inputs).norm();
    assert!(gap <= 1e-8 * dynamic.trajectory.inputs.norm(), "gap {gap}");
}

#[test]
fn burn_in_shifts_start_time() {
    let d = draw_plant(RngSeed(4), 2, 1, 1).unwrap();
    let init = InitialState {
        burn_in: 7,
        ..InitialState::default()
    };
    let run = simulate_closed_loop(&d.sys, &d.comp, 10, RngSeed(1), &init).unwrap();
    assert_eq!(run.trajectory.start_time, 7);
    assert_eq!(run.trajectory.horizon(), 10);
}
