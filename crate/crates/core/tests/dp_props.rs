use isd_core::dp::{bellman_backup, extract_stopping_set, solve, BeliefGrid, ValueFunction};
use isd_core::quadrature::GaussHermite;
use isd_core::{GaussianPair, TransitionModel};
use proptest::prelude::*;

fn from_values(values: Vec<f64>) -> ValueFunction {
    ValueFunction {
        values,
        converged: false,
        iterations: 0,
        sup_norm_residual: f64::INFINITY,
    }
}

fn predicted_normal(rho: f64, a: f64, p: f64) -> f64 {
    (1.0 - rho) * (1.0 - p) + (1.0 - a) * p
}

#[test]
fn backup_of_stop_cost_is_closed_form() {
    // E[1 - X̂⁺ | p] is the predicted normal mass, so one backup of 1 - p is
    // min(c p + P(next normal), 1 - p) exactly.
    let grid = BeliefGrid::uniform(101).unwrap();
    let gh = GaussHermite::new(32).unwrap();
    for (rho, a, s2, c) in [
        (0.01, 0.99, 5.0, 0.02),
        (0.3, 0.6, 0.5, 0.1),
        (0.05, 1.0, 2.0, 0.0),
    ] {
        let model = TransitionModel::new(rho, a).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, s2).unwrap();
        let v0 = from_values(grid.points().iter().map(|p| 1.0 - p).collect());
        let v1 = bellman_backup(&v0, &grid, &model, &obs, c, &gh).unwrap();
        for (p, v) in grid.points().iter().zip(&v1.values) {
            let expect = (c * p + predicted_normal(rho, a, *p)).min(1.0 - p);
            assert!((v - expect).abs() < 1e-12, "p={p}: {v} vs {expect}");
        }
    }
}

/// Expected next-step value by trapezoid integration over a wide window.
fn trapezoid_continuation(
    grid: &BeliefGrid,
    values: &[f64],
    model: (f64, f64),
    obs: &GaussianPair,
    p: f64,
) -> f64 {
    let (rho, a) = model;
    let pred2 = rho * (1.0 - p) + a * p;
    let pred1 = 1.0 - pred2;
    let sd = obs.sigma2().sqrt();
    let lo = obs.mu1().min(obs.mu2()) - 14.0 * sd;
    let hi = obs.mu1().max(obs.mu2()) + 14.0 * sd;
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let f = |y: f64| {
        let d1 = (-(y - obs.mu1()).powi(2) / (2.0 * obs.sigma2())).exp();
        let d2 = (-(y - obs.mu2()).powi(2) / (2.0 * obs.sigma2())).exp();
        let norm = (2.0 * std::f64::consts::PI * obs.sigma2()).sqrt();
        let m = (pred1 * d1 + pred2 * d2) / norm;
        let post = pred2 * d2 / (pred1 * d1 + pred2 * d2);
        m * grid.interpolate(values, post)
    };
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

#[test]
fn backup_matches_trapezoid_oracle() {
    let grid = BeliefGrid::uniform(2001).unwrap();
    let gh = GaussHermite::new(64).unwrap();
    let (rho, a, c) = (0.01, 0.99, 0.02);
    let model = TransitionModel::new(rho, a).unwrap();
    let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
    // A smooth concave test function below the stop cost.
    let values: Vec<f64> = grid
        .points()
        .iter()
        .map(|p| 0.6 * (1.0 - p) * (1.0 + p).sqrt())
        .collect();
    let next = bellman_backup(&from_values(values.clone()), &grid, &model, &obs, c, &gh).unwrap();
    for &i in &[0usize, 250, 700, 1000, 1500, 1999] {
        let p = grid.points()[i];
        let cont = c * p + trapezoid_continuation(&grid, &values, (rho, a), &obs, p);
        let expect = cont.min(1.0 - p);
        assert!(
            (next.values[i] - expect).abs() < 2e-6,
            "p={p}: {} vs {expect}",
            next.values[i]
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn value_function_structure(
        rho in 0.001..0.3f64,
        a in 0.5..=1.0f64,
        s2 in 0.3..8.0f64,
        c in 0.001..0.2f64,
    ) {
        let grid = BeliefGrid::uniform(201).unwrap();
        let gh = GaussHermite::new(48).unwrap();
        let model = TransitionModel::new(rho, a).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, s2).unwrap();
        let vf = solve(&grid, &model, &obs, c, 1e-10, 200_000, &gh).unwrap();
        prop_assert!(vf.values.last().unwrap().abs() < 1e-12);
        prop_assert!(vf.max_second_difference() <= 1e-8);
        for (p, v) in grid.points().iter().zip(&vf.values) {
            prop_assert!(*v >= -1e-12 && *v <= 1.0 - p + 1e-12);
        }
        let set = extract_stopping_set(&vf, &grid, 1e-6).unwrap();
        prop_assert!(set.threshold > 0.0 && set.threshold <= 1.0);
    }

    #[test]
    fn higher_penalty_lowers_threshold(rho in 0.001..0.1f64, a in 0.8..=1.0f64) {
        let grid = BeliefGrid::uniform(401).unwrap();
        let gh = GaussHermite::new(48).unwrap();
        let model = TransitionModel::new(rho, a).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 2.0).unwrap();
        let lo = solve(&grid, &model, &obs, 0.005, 1e-10, 200_000, &gh).unwrap();
        let hi = solve(&grid, &model, &obs, 0.05, 1e-10, 200_000, &gh).unwrap();
        let h_lo = extract_stopping_set(&lo, &grid, 1e-6).unwrap().threshold;
        let h_hi = extract_stopping_set(&hi, &grid, 1e-6).unwrap().threshold;
        prop_assert!(h_hi <= h_lo, "c=0.05 gives {h_hi}, c=0.005 gives {h_lo}");
    }
}
