use capmimo::em::CVec3;
use capmimo::optimizer::{self, update_w, OptState, Problem};
use capmimo::rate::{mse_all, sum_rate, surrogate, user_rates};
use capmimo::scenario::{Scenario, ScenarioConfig};
use capmimo::verify::{kkt_residual, single_user_capacity, svd_capacity_oracle};
use capmimo::Complex64;

const BUNDLED: &str = include_str!("../configs/paper_iv.toml");

fn bundled_scenario() -> Scenario {
    Scenario::build(&ScenarioConfig::from_toml(BUNDLED).unwrap()).unwrap()
}

fn solve(scenario: &Scenario, seed: u64) -> (Problem, OptState) {
    let problem = scenario.problem();
    let state = optimizer::run(&problem, &scenario.settings(seed)).unwrap();
    (problem, state)
}

#[test]
fn trace_is_monotone() {
    let scenario = bundled_scenario();
    for seed in 0..4 {
        let (_, state) = solve(&scenario, seed);
        assert!(state.converged);
        for pair in state.trace.windows(2) {
            assert!(pair[1].surrogate >= pair[0].surrogate - 1e-9, "seed {seed}: {pair:?}");
        }
    }
}

#[test]
fn final_state_is_a_fixed_point() {
    let scenario = bundled_scenario();
    let (problem, state) = solve(&scenario, 7);
    let r_sum = sum_rate(&problem.omega, &state.w, problem.noise_var).unwrap();
    let r_sur = surrogate(&state.rho, &state.psi, &state.w, &problem.omega, problem.noise_var).unwrap();
    assert!((r_sum - r_sur).abs() <= 1e-9, "{r_sum} vs {r_sur}");
    let per_user: f64 = user_rates(&problem.omega, &state.w, problem.noise_var)
        .unwrap()
        .iter()
        .sum();
    assert!((per_user - r_sum).abs() <= 1e-9);
}

#[test]
fn combiners_are_stationary() {
    // central differences of the surrogate along random combiner directions
    let scenario = bundled_scenario();
    let (problem, state) = solve(&scenario, 2);
    let f = |psi: &[CVec3]| surrogate(&state.rho, psi, &state.w, &problem.omega, problem.noise_var).unwrap();
    let base = f(&state.psi);
    for k in 0..problem.num_users() {
        let scale = state.psi[k].norm();
        for dir in [
            CVec3::new(
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.5),
                Complex64::new(-0.3, 0.2),
            ),
            CVec3::new(
                Complex64::new(0.0, -1.0),
                Complex64::new(0.7, 0.0),
                Complex64::new(0.1, 0.9),
            ),
        ] {
            let h = 1e-4 * scale;
            let mut plus = state.psi.clone();
            let mut minus = state.psi.clone();
            plus[k] += dir * Complex64::from(h);
            minus[k] -= dir * Complex64::from(h);
            let (fp, fm) = (f(&plus), f(&minus));
            let slope = (fp - fm) / (2.0 * h);
            assert!(slope.abs() * scale <= 1e-6, "user {k}: slope {slope}");
            assert!(fp <= base + 1e-12 && fm <= base + 1e-12);
        }
    }
}

#[test]
fn weights_are_stationary() {
    let scenario = bundled_scenario();
    let (problem, state) = solve(&scenario, 3);
    let mse = mse_all(&state.psi, &problem.omega, &state.w, problem.noise_var).unwrap();
    for k in 0..problem.num_users() {
        assert!((state.rho[k] * mse[k] - 1.0).abs() <= 1e-12);
        let h = 1e-5 * state.rho[k];
        let f = |delta: f64| {
            let mut rho = state.rho.clone();
            rho[k] += delta;
            surrogate(&rho, &state.psi, &state.w, &problem.omega, problem.noise_var).unwrap()
        };
        let slope = (f(h) - f(-h)) / (2.0 * h);
        assert!(slope.abs() * state.rho[k] <= 1e-6, "user {k}: slope {slope}");
    }
}

#[test]
fn pattern_update_satisfies_kkt() {
    let scenario = bundled_scenario();
    let (problem, state) = solve(&scenario, 4);
    let update = update_w(&state, &problem, 1e-12).unwrap();
    let kkt = kkt_residual(&update.w, &update.h, &state.rho, update.zeta, problem.power).unwrap();
    assert!(kkt.holds(), "{kkt:?}");
    assert!(update.zeta > 0.0);
    assert!(kkt.slackness.abs() <= 1e-12);
}

#[test]
fn single_user_reaches_capacity() {
    let scenario = bundled_scenario();
    for user in [0, 4, 7] {
        let (optimized, oracle) = single_user_capacity(&scenario, user).unwrap();
        assert!(
            (optimized - oracle).abs() <= 1e-4 * oracle,
            "user {user}: {optimized} vs {oracle}"
        );
        assert!(optimized <= oracle * (1.0 + 1e-12));
    }
}

#[test]
fn pdm_beats_random_start_and_respects_capacity() {
    let scenario = bundled_scenario();
    let (problem, state) = solve(&scenario, 11);
    let start = optimizer::init_state(problem.num_users(), problem.omega.num_indices(), problem.power, 11);
    let r0 = sum_rate(&problem.omega, &start.w, problem.noise_var).unwrap();
    let r = sum_rate(&problem.omega, &state.w, problem.noise_var).unwrap();
    assert!(r > r0);
    // sum of single-user capacities at full power bounds the sum-rate
    let bound: f64 = (0..problem.num_users())
        .map(|k| svd_capacity_oracle(problem.omega.user(k), problem.noise_var, problem.power).unwrap())
        .sum();
    assert!(r <= bound);
    assert!((state.w.power() - problem.power).abs() <= 1e-9 * problem.power);
}
