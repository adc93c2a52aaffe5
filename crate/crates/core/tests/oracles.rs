#![allow(clippy::needless_range_loop)]

mod common;

use common::{brute_force, smoothed_occupation, Instance};
use isd_core::hmm::{enumerate_posterior, run_filter, DEFAULT_ENUMERATION_CAP};
use isd_core::occupation::{enumerate_occupation, run_occupation, OccupationFilter};
use isd_core::{Belief, GaussianPair, TransitionModel};

fn library_parts(inst: &Instance) -> (TransitionModel, GaussianPair, Belief) {
    (
        TransitionModel::new(inst.rho, inst.a).unwrap(),
        GaussianPair::new(inst.mu[0], inst.mu[1], inst.sigma2).unwrap(),
        Belief::new(inst.prior.to_vec()).unwrap(),
    )
}

#[test]
fn filter_matches_path_walk_on_random_instances() {
    for seed in 0..1000 {
        let inst = Instance::random(seed, 10);
        let (model, obs, prior) = library_parts(&inst);
        let exact = brute_force(&inst);
        let steps = run_filter(&inst.ys, &model, &obs, &prior).unwrap();
        for (k, (step, post)) in steps.iter().zip(&exact.posterior).enumerate() {
            for x in 0..2 {
                let err = (step.belief.get(x) - post[x]).abs();
                assert!(err < 1e-10, "seed {seed} k {} state {x}: {err:e}", k + 1);
            }
        }
    }
}

#[test]
fn occupation_matches_path_walk_and_smoother() {
    for seed in 0..1000 {
        let inst = Instance::random(10_000 + seed, 10);
        let (model, obs, prior) = library_parts(&inst);
        let exact = brute_force(&inst);
        for target in 0..2 {
            let est = run_occupation(&inst.ys, &model, &obs, &prior, target).unwrap();
            for (k0, e) in est.iter().enumerate() {
                let k = k0 + 1;
                for x in 0..2 {
                    let err = (e.joint[x] - exact.joint[k0][target][x]).abs();
                    assert!(err < 1e-10, "seed {seed} k {k} target {target}: {err:e}");
                }
                let smooth = smoothed_occupation(&inst, k)[target];
                assert!(
                    (e.scalar - smooth).abs() < 1e-9,
                    "seed {seed} k {k}: filter {} smoother {smooth}",
                    e.scalar
                );
            }
        }
        let mut f = OccupationFilter::new(&model, &obs, &prior).unwrap();
        for (k0, y) in inst.ys.iter().enumerate() {
            f.step(y).unwrap();
            let total = f.occupation(0) + f.occupation(1);
            assert!((total - (k0 + 1) as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn library_enumerators_agree_with_path_walk() {
    for seed in 0..200 {
        let inst = Instance::random(20_000 + seed, 8);
        let (model, obs, prior) = library_parts(&inst);
        let exact = brute_force(&inst);
        let last = inst.ys.len() - 1;
        let post =
            enumerate_posterior(&inst.ys, &model, &obs, &prior, DEFAULT_ENUMERATION_CAP).unwrap();
        for x in 0..2 {
            assert!((post.get(x) - exact.posterior[last][x]).abs() < 1e-10);
        }
        let (joint, scalar) =
            enumerate_occupation(&inst.ys, &model, &obs, &prior, 1, DEFAULT_ENUMERATION_CAP)
                .unwrap();
        for x in 0..2 {
            assert!((joint[x] - exact.joint[last][1][x]).abs() < 1e-10);
        }
        assert!((scalar - exact.joint[last][1].iter().sum::<f64>()).abs() < 1e-10);
    }
}
