//! Occupation-time filter: the conditional mean of the number of steps the
//! hidden chain has spent in each state, advanced in lockstep with the
//! posterior filter.
//!
//! For target state `i` the joint estimate `Ô^{i,X}_k = E[O^i_k X_k | y_1..y_k]`
//! follows
//!
//! ```text
//! Ô^{i,X}_k = N_k B(y_k) A (Ô^{i,X}_{k-1} + X̂^i_{k-1} e_i),   Ô^{i,X}_0 = 0
//! Ô^i_k     = <1, Ô^{i,X}_k>
//! ```
//!
//! where `N_k` is the same normaliser the posterior update uses. Keeping both
//! recursions in one object guarantees they share it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{correct, for_each_path};
use crate::signal::{Belief, ObservationModel, Transition};

/// Expected occupation of `target` after `k` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationEstimate {
    /// `E[O^target_k X_k | y]`, one entry per current state.
    pub joint: Vec<f64>,
    /// `E[O^target_k | y]`.
    pub scalar: f64,
    pub target: usize,
    pub k: usize,
}

/// Average error rate between two differently initialised occupation filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateDiagnostic {
    pub k: usize,
    pub rate: f64,
}

/// Vector norm used for the error-rate diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateNorm {
    #[default]
    Max,
    L1,
}

impl RateNorm {
    fn apply(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            RateNorm::Max => diffs.fold(0.0, f64::max),
            RateNorm::L1 => diffs.sum(),
        }
    }
}

/// Posterior filter plus the occupation filters for every target state.
#[derive(Debug, Clone)]
pub struct OccupationFilter<'m, T, O> {
    trans: &'m T,
    obs: &'m O,
    belief: Vec<f64>,
    /// `joint[i]` is `Ô^{i,X}` for target state `i`.
    joint: Vec<Vec<f64>>,
    k: usize,
    predicted: Vec<f64>,
    lik: Vec<f64>,
    carry: Vec<f64>,
}

impl<'m, T: Transition, O: ObservationModel> OccupationFilter<'m, T, O> {
    pub fn new(trans: &'m T, obs: &'m O, initial: &Belief) -> Result<Self> {
        let n = trans.num_states();
        if obs.num_states() != n || initial.len() != n {
            return Err(Error::invalid("initial_belief", "state count mismatch"));
        }
        Ok(Self {
            trans,
            obs,
            belief: initial.as_slice().to_vec(),
            joint: vec![vec![0.0; n]; n],
            k: 0,
            predicted: vec![0.0; n],
            lik: vec![0.0; n],
            carry: vec![0.0; n],
        })
    }

    /// Consumes the next measurement; returns the log-normaliser.
    pub fn step(&mut self, y: &O::Obs) -> Result<f64> {
        let n = self.belief.len();
        self.trans.predict(&self.belief, &mut self.predicted);
        let (s, log_norm) = correct(self.obs, y, &self.predicted, &mut self.lik, self.k + 1)?;
        for target in 0..n {
            let joint = &mut self.joint[target];
            joint[target] += self.belief[target];
            self.trans.predict(joint, &mut self.carry);
            for ((j, l), c) in joint.iter_mut().zip(&self.lik).zip(&self.carry) {
                *j = l * c / s;
            }
        }
        for ((b, l), p) in self.belief.iter_mut().zip(&self.lik).zip(&self.predicted) {
            *b = l * p / s;
        }
        self.k += 1;
        Ok(log_norm)
    }

    /// Restarts from `belief` with zero elapsed occupation.
    pub fn reset(&mut self, belief: &Belief) {
        self.belief.copy_from_slice(belief.as_slice());
        for j in &mut self.joint {
            j.fill(0.0);
        }
        self.k = 0;
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn joint(&self, target: usize) -> &[f64] {
        &self.joint[target]
    }

    pub fn occupation(&self, target: usize) -> f64 {
        self.joint[target].iter().sum()
    }

    /// Steps since construction or the last reset.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn estimate(&self, target: usize) -> OccupationEstimate {
        OccupationEstimate {
            joint: self.joint[target].clone(),
            scalar: self.occupation(target),
            target,
            k: self.k,
        }
    }
}

fn check_target(n: usize, target: usize) -> Result<()> {
    if target >= n {
        return Err(Error::invalid(
            "target",
            format!("state index {target} out of range for {n} states"),
        ));
    }
    Ok(())
}

/// One joint update `N_k B(y) A (prev_joint + prev_belief[target] e_target)`.
pub fn occupation_step<T: Transition, O: ObservationModel>(
    prev_joint: &[f64],
    prev_belief: &Belief,
    y: &O::Obs,
    trans: &T,
    obs: &O,
    target: usize,
) -> Result<Vec<f64>> {
    let n = trans.num_states();
    check_target(n, target)?;
    if prev_joint.len() != n || prev_joint.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "prev_joint",
            "must be finite with one entry per state",
        ));
    }
    let mut predicted = vec![0.0; n];
    let mut lik = vec![0.0; n];
    trans.predict(prev_belief.as_slice(), &mut predicted);
    let (s, _) = correct(obs, y, &predicted, &mut lik, 1)?;
    let mut carry = prev_joint.to_vec();
    carry[target] += prev_belief.get(target);
    let mut out = vec![0.0; n];
    trans.predict(&carry, &mut out);
    for (o, l) in out.iter_mut().zip(&lik) {
        *o *= l / s;
    }
    Ok(out)
}

/// Occupation estimates for `target` after each measurement.
pub fn run_occupation<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
    target: usize,
) -> Result<Vec<OccupationEstimate>>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    check_target(trans.num_states(), target)?;
    if observations.is_empty() {
        return Err(Error::invalid("observations", "sequence is empty"));
    }
    let mut f = OccupationFilter::new(trans, obs, initial)?;
    observations
        .iter()
        .map(|y| {
            f.step(y)?;
            Ok(f.estimate(target))
        })
        .collect()
}

/// Exact `(E[O^target_K X_K | y], E[O^target_K | y])` by path enumeration.
pub fn enumerate_occupation<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
    target: usize,
    cap: usize,
) -> Result<(Vec<f64>, f64)>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    let n = trans.num_states();
    check_target(n, target)?;
    let mut weighted = vec![0.0; n];
    let mut total = 0.0;
    for_each_path(observations, trans, obs, initial, cap, |path, w| {
        let last = path.len() - 1;
        let occupancy = path[..last].iter().filter(|x| **x == target).count() as f64;
        weighted[path[last]] += occupancy * w;
        total += w;
    })?;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateLikelihood {
            k: observations.len(),
        });
    }
    let joint: Vec<f64> = weighted.into_iter().map(|v| v / total).collect();
    let scalar = joint.iter().sum();
    Ok((joint, scalar))
}

/// `|Ô^{i,X}_k(init_a) - Ô^{i,X}_k(init_b)| / k` at every step.
pub fn stability_probe<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    init_a: &Belief,
    init_b: &Belief,
    target: usize,
    norm: RateNorm,
) -> Result<Vec<ErrorRateDiagnostic>>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    check_target(trans.num_states(), target)?;
    let mut fa = OccupationFilter::new(trans, obs, init_a)?;
    let mut fb = OccupationFilter::new(trans, obs, init_b)?;
    observations
        .iter()
        .map(|y| {
            fa.step(y)?;
            fb.step(y)?;
            let k = fa.k();
            Ok(ErrorRateDiagnostic {
                k,
                rate: norm.apply(fa.joint(target), fb.joint(target)) / k as f64,
            })
        })
        .collect()
}

/// Smallest `H` with `rate_k <= delta + H / k` over the given trace.
pub fn fit_rate_constant(trace: &[ErrorRateDiagnostic], delta: f64) -> f64 {
    trace
        .iter()
        .map(|d| d.k as f64 * (d.rate - delta).max(0.0))
        .fold(0.0, f64::max)
}

/// Posterior and occupation state at one time index (k = 0 is the prior).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorStep {
    pub k: usize,
    pub belief: Belief,
    /// Zero at k = 0.
    pub log_normalizer: f64,
    /// `joint[i]` is `Ô^{i,X}_k`.
    pub joint: Vec<Vec<f64>>,
}

impl DetectorStep {
    pub fn occupation(&self, target: usize) -> f64 {
        self.joint[target].iter().sum()
    }
}

/// Full lockstep trace, including the prior at k = 0.
pub fn trace_detector<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
) -> Result<Vec<DetectorStep>>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    let mut f = OccupationFilter::new(trans, obs, initial)?;
    let snapshot = |f: &OccupationFilter<'_, T, O>, log_normalizer| DetectorStep {
        k: f.k(),
        belief: Belief::from_normalized(f.belief().to_vec()),
        log_normalizer,
        joint: f.joint.clone(),
    };
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(snapshot(&f, 0.0));
    for y in observations {
        let ln = f.step(y)?;
        out.push(snapshot(&f, ln));
    }
    Ok(out)
}

/// CSV rows `k, occ_e1, occ_e2, joint_<i>_e<j>...` for a two-state trace.
pub fn write_occupation_csv<W: Write>(steps: &[DetectorStep], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = steps.first().map_or(2, |s| s.belief.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("occ_e{i}")));
    for i in 1..=n {
        header.extend((1..=n).map(|j| format!("joint_{i}_e{j}")));
    }
    w.write_record(&header)?;
    for s in steps {
        let mut row = vec![s.k.to_string()];
        row.extend((0..n).map(|i| s.occupation(i).to_string()));
        for j in &s.joint {
            row.extend(j.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stability_csv<W: Write>(trace: &[ErrorRateDiagnostic], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "rate"])?;
    for d in trace {
        w.write_record([d.k.to_string(), d.rate.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{simulate_trajectory, GaussianPair, State, TransitionModel};

    fn reference_model() -> (TransitionModel, GaussianPair) {
        (
            TransitionModel::new(0.01, 0.99).unwrap(),
            GaussianPair::new(1.0, 2.0, 5.0).unwrap(),
        )
    }

    #[test]
    fn first_step_from_normal_point_mass_has_no_anomalous_time() {
        let (model, obs) = reference_model();
        let out = occupation_step(
            &[0.0, 0.0],
            &Belief::point_mass(2, 0),
            &1.7,
            &model,
            &obs,
            1,
        )
        .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        let out = occupation_step(
            &[0.0, 0.0],
            &Belief::point_mass(2, 0),
            &1.7,
            &model,
            &obs,
            0,
        )
        .unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn partition_of_elapsed_time() {
        let (model, obs) = reference_model();
        let t = simulate_trajectory(&model, &obs, &Belief::uniform(2), 300, 8).unwrap();
        let o1 = run_occupation(&t.observations, &model, &obs, &Belief::uniform(2), 0).unwrap();
        let o2 = run_occupation(&t.observations, &model, &obs, &Belief::uniform(2), 1).unwrap();
        for (a, b) in o1.iter().zip(&o2) {
            assert!((a.scalar + b.scalar - a.k as f64).abs() < 1e-9);
            assert!(b.scalar >= 0.0 && b.scalar <= b.k as f64);
            assert!((b.scalar - b.joint.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn unreachable_target_accumulates_nothing() {
        let model = TransitionModel::new(0.0, 0.5).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let ys: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).cos() * 4.0).collect();
        let est = run_occupation(&ys, &model, &obs, &Belief::point_mass(2, 0), 1).unwrap();
        assert!(est.iter().all(|e| e.scalar == 0.0));
    }

    #[test]
    fn perfect_observations_count_exactly() {
        let model = TransitionModel::new(0.05, 0.9).unwrap();
        let obs = GaussianPair::new(0.0, 10.0, 1e-6).unwrap();
        let t = simulate_trajectory(&model, &obs, &Belief::point_mass(2, 0), 400, 17).unwrap();
        let est =
            run_occupation(&t.observations, &model, &obs, &Belief::point_mass(2, 0), 1).unwrap();
        for e in &est {
            let truth = t.anomalous_count(0, e.k) as f64;
            assert!(
                (e.scalar - truth).abs() < 1e-9,
                "k={} {} vs {}",
                e.k,
                e.scalar,
                truth
            );
        }
        assert!(t.states.contains(&State::Anomalous));
    }

    #[test]
    fn enumeration_single_step() {
        let (model, obs) = reference_model();
        let (joint, scalar) =
            enumerate_occupation(&[0.2], &model, &obs, &Belief::point_mass(2, 0), 0, 12).unwrap();
        assert!((scalar - 1.0).abs() < 1e-15);
        assert_eq!(joint.len(), 2);
    }

    #[test]
    fn identical_initialisations_have_zero_rate() {
        let (model, obs) = reference_model();
        let t = simulate_trajectory(&model, &obs, &Belief::uniform(2), 200, 2).unwrap();
        let init = Belief::new(vec![0.3, 0.7]).unwrap();
        let trace = stability_probe(
            &t.observations,
            &model,
            &obs,
            &init,
            &init,
            1,
            RateNorm::Max,
        )
        .unwrap();
        assert!(trace.iter().all(|d| d.rate == 0.0));
        assert_eq!(fit_rate_constant(&trace, 0.05), 0.0);
    }

    #[test]
    fn reset_zeroes_occupation() {
        let (model, obs) = reference_model();
        let mut f = OccupationFilter::new(&model, &obs, &Belief::uniform(2)).unwrap();
        for y in [1.0, 2.0, 3.0] {
            f.step(&y).unwrap();
        }
        assert!(f.occupation(1) > 0.0);
        f.reset(&Belief::uniform(2));
        assert_eq!(f.k(), 0);
        assert_eq!(f.occupation(0) + f.occupation(1), 0.0);
    }

    #[test]
    fn occupation_csv_columns() {
        let (model, obs) = reference_model();
        let trace = trace_detector(&[1.0, 2.5], &model, &obs, &Belief::uniform(2)).unwrap();
        let mut buf = Vec::new();
        write_occupation_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "k,occ_e1,occ_e2,joint_1_e1,joint_1_e2,joint_2_e1,joint_2_e2"
        );
        assert_eq!(text.lines().count(), 4);
    }
}
