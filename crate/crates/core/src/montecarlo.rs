//! Monte-Carlo evaluation: delay / false-alarm sweeps over thresholds and
//! noise levels, and cost estimates for threshold rules.
//!
//! Trial `t` always draws its trajectory from seed `seed_base + t`, so one
//! trial's outcome does not depend on which thread ran it or in what order.
//! Per-trial outcomes are collected in trial order and reduced sequentially,
//! which makes every result bit-for-bit reproducible.
//!
//! Counting protocol for a trial of `horizon` steps: the detector raises
//! alarms, restarts after each one (see [`ResetPolicy`]) and keeps scanning
//! until the horizon. Alarms raised while the chain is normal are false.
//! The trial's delay is the realised anomalous occupation since the last
//! restart at its first correct alarm; trials with no correct alarm
//! contribute no delay and are counted as censored.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{simulate_trajectory, Belief, GaussianPair, State, TransitionModel};
use crate::stopping::{
    classic_cost, evaluate_cost, mean_stderr, run_with_resets, state_form_cost, CostReport,
    CostSample, ResetPolicy, StoppingRule,
};

/// Which transition model the detector's filter assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleVariant {
    /// The true intermittent model.
    Isd,
    /// Absorbing anomalous state (`a = 1`), applied to intermittent data.
    Sbd,
}

impl RuleVariant {
    pub fn filter_model(self, data_model: &TransitionModel) -> TransitionModel {
        match self {
            RuleVariant::Isd => *data_model,
            RuleVariant::Sbd => data_model.absorbing(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleVariant::Isd => "isd",
            RuleVariant::Sbd => "sbd",
        }
    }
}

/// Thresholds swept when none are given.
pub const DEFAULT_THRESHOLDS: [f64; 7] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub rho: f64,
    pub a: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Noise variances to sweep; one block of rows per entry.
    pub sigma2: Vec<f64>,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub reset_policy: ResetPolicy,
    #[serde(default = "default_variants")]
    pub variants: Vec<RuleVariant>,
    /// Prior of both the simulated chain and the detector; stationary law
    /// of the data model when absent.
    #[serde(default)]
    pub initial_belief: Option<Vec<f64>>,
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}

fn default_horizon() -> usize {
    2000
}

fn default_variants() -> Vec<RuleVariant> {
    vec![RuleVariant::Isd]
}

impl ExperimentSpec {
    /// Intermittent chain with the given noise sweep and defaults elsewhere.
    pub fn new(rho: f64, a: f64, mu1: f64, mu2: f64, sigma2: Vec<f64>, trials: usize) -> Self {
        Self {
            rho,
            a,
            mu1,
            mu2,
            sigma2,
            thresholds: default_thresholds(),
            horizon: default_horizon(),
            trials,
            seed_base: 0,
            reset_policy: ResetPolicy::default(),
            variants: default_variants(),
            initial_belief: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data_model()?;
        for (i, s) in self.sigma2.iter().enumerate() {
            GaussianPair::new(self.mu1, self.mu2, *s)
                .map_err(|e| Error::invalid(format!("sigma2[{i}]"), e.to_string()))?;
        }
        if self.sigma2.is_empty() {
            return Err(Error::invalid("sigma2", "needs at least one value"));
        }
        if self.thresholds.is_empty() {
            return Err(Error::invalid("thresholds", "needs at least one value"));
        }
        for (i, h) in self.thresholds.iter().enumerate() {
            if !(0.0..=1.0).contains(h) {
                return Err(Error::invalid(
                    format!("thresholds[{i}]"),
                    format!("must be in [0, 1], got {h}"),
                ));
            }
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid(
                "variants",
                "needs at least one rule variant",
            ));
        }
        self.initial()?;
        Ok(())
    }

    pub fn data_model(&self) -> Result<TransitionModel> {
        TransitionModel::new(self.rho, self.a)
    }

    pub fn initial(&self) -> Result<Belief> {
        match &self.initial_belief {
            Some(p) => {
                Belief::new(p.clone()).map_err(|e| Error::invalid("initial_belief", e.to_string()))
            }
            None => self.data_model()?.stationary(),
        }
    }
}

/// What one trial produced for one (variant, threshold) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrialOutcome {
    alarms: usize,
    false_alarms: usize,
    /// (realised occupation, occupation estimate, episode delay) at the first
    /// correct alarm.
    first_detection: Option<(f64, f64, f64)>,
    correct_alarms: usize,
    /// Realised occupation summed over every correct alarm.
    delay_sum: f64,
}

/// Aggregated statistics for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: RuleVariant,
    pub sigma2: f64,
    pub threshold: f64,
    pub trials: usize,
    /// Trials that produced a correct alarm (delay samples).
    pub delay_samples: usize,
    pub mean_delay: Option<f64>,
    pub stderr_delay: Option<f64>,
    pub mean_occupation_estimate: Option<f64>,
    pub stderr_occupation_estimate: Option<f64>,
    /// Paired standard error of (delay − occupation estimate).
    pub stderr_delay_gap: Option<f64>,
    /// Run-length delay `τ − (start of the anomalous run)`, for comparison.
    pub mean_episode_delay: Option<f64>,
    /// Correct alarms over all trials; every one is a delay sample for the
    /// per-alarm statistics below.
    pub correct_alarms: usize,
    /// Mean realised occupation at a correct alarm, pooled over all alarms.
    pub mean_alarm_delay: Option<f64>,
    /// Trial-clustered standard error of `mean_alarm_delay`.
    pub stderr_alarm_delay: Option<f64>,
    pub mean_false_alarms: f64,
    pub stderr_false_alarms: f64,
    pub false_alarms_per_1000_steps: f64,
    pub total_alarms: usize,
    pub total_false_alarms: usize,
    /// Fraction of all alarms raised in the normal state.
    pub empirical_pfa: Option<f64>,
    /// Binomial standard error of `empirical_pfa`.
    pub pfa_stderr: Option<f64>,
    pub pfa_bound: f64,
    /// Trials without any correct alarm before the horizon.
    pub censored_count: usize,
    /// Trials without any alarm at all.
    pub silent_count: usize,
}

impl SweepRow {
    pub fn delay_gap(&self) -> Option<f64> {
        Some(self.mean_delay? - self.mean_occupation_estimate?)
    }

    fn aggregate(
        variant: RuleVariant,
        sigma2: f64,
        threshold: f64,
        horizon: usize,
        outcomes: &[TrialOutcome],
    ) -> Self {
        let trials = outcomes.len();
        let detections: Vec<(f64, f64, f64)> =
            outcomes.iter().filter_map(|o| o.first_detection).collect();
        let opt = |v: f64| (!v.is_nan()).then_some(v);
        let (md, sd) = mean_stderr(detections.iter().map(|d| d.0));
        let (mo, so) = mean_stderr(detections.iter().map(|d| d.1));
        let (_, sg) = mean_stderr(detections.iter().map(|d| d.0 - d.1));
        let (me, _) = mean_stderr(detections.iter().map(|d| d.2));
        let (mf, sf) = mean_stderr(outcomes.iter().map(|o| o.false_alarms as f64));
        let (ma, sa) = pooled_ratio(outcomes);
        let total_alarms: usize = outcomes.iter().map(|o| o.alarms).sum();
        let total_false_alarms: usize = outcomes.iter().map(|o| o.false_alarms).sum();
        let (pfa, pfa_se) = if total_alarms > 0 {
            let p = total_false_alarms as f64 / total_alarms as f64;
            (Some(p), Some((p * (1.0 - p) / total_alarms as f64).sqrt()))
        } else {
            (None, None)
        };
        Self {
            variant,
            sigma2,
            threshold,
            trials,
            delay_samples: detections.len(),
            mean_delay: opt(md),
            stderr_delay: opt(sd),
            mean_occupation_estimate: opt(mo),
            stderr_occupation_estimate: opt(so),
            stderr_delay_gap: opt(sg),
            mean_episode_delay: opt(me),
            correct_alarms: outcomes.iter().map(|o| o.correct_alarms).sum(),
            mean_alarm_delay: ma,
            stderr_alarm_delay: sa,
            mean_false_alarms: mf,
            stderr_false_alarms: sf,
            false_alarms_per_1000_steps: 1000.0 * mf / horizon as f64,
            total_alarms,
            total_false_alarms,
            empirical_pfa: pfa,
            pfa_stderr: pfa_se,
            pfa_bound: 1.0 - threshold,
            censored_count: trials - detections.len(),
            silent_count: outcomes.iter().filter(|o| o.alarms == 0).count(),
        }
    }
}

/// Ratio estimator `Σ delay / Σ count` with its delta-method standard error,
/// treating trials (not alarms) as the independent units.
fn pooled_ratio(outcomes: &[TrialOutcome]) -> (Option<f64>, Option<f64>) {
    let n: usize = outcomes.iter().map(|o| o.correct_alarms).sum();
    if n == 0 {
        return (None, None);
    }
    let ratio = outcomes.iter().map(|o| o.delay_sum).sum::<f64>() / n as f64;
    let t = outcomes.len() as f64;
    if outcomes.len() < 2 {
        return (Some(ratio), Some(0.0));
    }
    let ss: f64 = outcomes
        .iter()
        .map(|o| (o.delay_sum - ratio * o.correct_alarms as f64).powi(2))
        .sum();
    (Some(ratio), Some((ss * t / (t - 1.0)).sqrt() / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn rows_for(&self, variant: RuleVariant, sigma2: f64) -> Vec<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.sigma2 == sigma2)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "variant",
            "sigma2",
            "threshold",
            "trials",
            "delay_samples",
            "mean_delay",
            "stderr_delay",
            "mean_occupation_estimate",
            "stderr_occupation_estimate",
            "stderr_delay_gap",
            "mean_episode_delay",
            "correct_alarms",
            "mean_alarm_delay",
            "stderr_alarm_delay",
            "mean_false_alarms",
            "stderr_false_alarms",
            "false_alarms_per_1000_steps",
            "total_alarms",
            "total_false_alarms",
            "empirical_pfa",
            "pfa_stderr",
            "pfa_bound",
            "censored_count",
            "silent_count",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.variant.name().to_string(),
                r.sigma2.to_string(),
                r.threshold.to_string(),
                r.trials.to_string(),
                r.delay_samples.to_string(),
                opt(r.mean_delay),
                opt(r.stderr_delay),
                opt(r.mean_occupation_estimate),
                opt(r.stderr_occupation_estimate),
                opt(r.stderr_delay_gap),
                opt(r.mean_episode_delay),
                r.correct_alarms.to_string(),
                opt(r.mean_alarm_delay),
                opt(r.stderr_alarm_delay),
                r.mean_false_alarms.to_string(),
                r.stderr_false_alarms.to_string(),
                r.false_alarms_per_1000_steps.to_string(),
                r.total_alarms.to_string(),
                r.total_false_alarms.to_string(),
                opt(r.empirical_pfa),
                opt(r.pfa_stderr),
                r.pfa_bound.to_string(),
                r.censored_count.to_string(),
                r.silent_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every (sigma², variant, threshold) sweep point over the same
/// per-trial trajectories.
pub fn run_trials(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let data_model = spec.data_model()?;
    let initial = spec.initial()?;
    let rules: Vec<StoppingRule> = spec
        .thresholds
        .iter()
        .map(|h| StoppingRule::new(*h))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &sigma2 in &spec.sigma2 {
        let obs = GaussianPair::new(spec.mu1, spec.mu2, sigma2)?;
        let run_one = |t: u64| -> Result<Vec<TrialOutcome>> {
            let seed = spec.seed_base.wrapping_add(t);
            let trajectory = simulate_trajectory(&data_model, &obs, &initial, spec.horizon, seed)?;
            let mut out = Vec::with_capacity(spec.variants.len() * rules.len());
            for variant in &spec.variants {
                let filter_model = variant.filter_model(&data_model);
                for rule in &rules {
                    let alarms = run_with_resets(
                        &trajectory,
                        &filter_model,
                        &obs,
                        rule,
                        &initial,
                        spec.reset_policy,
                    )?;
                    let first_detection = alarms.iter().find(|a| !a.is_false_alarm).map(|a| {
                        (
                            a.realized_occupation,
                            a.occupation_estimate_at_alarm,
                            a.episode_delay.unwrap_or(0) as f64,
                        )
                    });
                    let false_alarms = alarms.iter().filter(|a| a.is_false_alarm).count();
                    out.push(TrialOutcome {
                        alarms: alarms.len(),
                        false_alarms,
                        first_detection,
                        correct_alarms: alarms.len() - false_alarms,
                        delay_sum: alarms
                            .iter()
                            .filter(|a| !a.is_false_alarm)
                            .map(|a| a.realized_occupation)
                            .sum(),
                    });
                }
            }
            Ok(out)
        };
        // outcomes[trial][variant * rules.len() + rule]
        let outcomes: Vec<Vec<TrialOutcome>> = (0..spec.trials as u64)
            .into_par_iter()
            .map(|t| {
                run_one(t).map_err(|e| Error::Trial {
                    trial: t,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        for (vi, variant) in spec.variants.iter().enumerate() {
            for (ri, rule) in rules.iter().enumerate() {
                let column: Vec<TrialOutcome> = outcomes
                    .iter()
                    .map(|per_trial| per_trial[vi * rules.len() + ri])
                    .collect();
                rows.push(SweepRow::aggregate(
                    *variant,
                    sigma2,
                    rule.threshold(),
                    spec.horizon,
                    &column,
                ));
            }
        }
    }
    Ok(SweepResult { rows })
}

/// Delay estimation against noise level: one threshold, a sigma² sweep.
pub fn occupation_study(spec: &ExperimentSpec) -> Result<SweepResult> {
    if spec.thresholds.len() != 1 {
        return Err(Error::invalid(
            "thresholds",
            "occupation study uses exactly one threshold",
        ));
    }
    run_trials(spec)
}

/// Operating-characteristic sweep with its monotonicity and PFA checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocReport {
    pub result: SweepResult,
    /// False alarms per run nonincreasing in the threshold, within 3σ.
    pub false_alarms_monotone: bool,
    /// Empirical PFA ≤ 1 − h + 3σ at every ISD row with alarms. The bound
    /// needs the filter's model to be the data model, so mismatched SBD rows
    /// are left out; `pfa_violations` lists every row that exceeds it.
    pub pfa_within_bound: bool,
    /// (variant, sigma², threshold) of every row above its bound.
    pub pfa_violations: Vec<(RuleVariant, f64, f64)>,
}

pub fn soc_sweep(spec: &ExperimentSpec) -> Result<SocReport> {
    if spec.thresholds.len() < 2 {
        return Err(Error::invalid(
            "thresholds",
            "SOC sweep needs at least two thresholds",
        ));
    }
    let mut sorted = spec.clone();
    sorted.thresholds.sort_by(f64::total_cmp);
    let result = run_trials(&sorted)?;
    let mut monotone = true;
    for &variant in &sorted.variants {
        for &sigma2 in &sorted.sigma2 {
            let rows = result.rows_for(variant, sigma2);
            for w in rows.windows(2) {
                let slack = 3.0 * w[0].stderr_false_alarms.hypot(w[1].stderr_false_alarms);
                if w[1].mean_false_alarms > w[0].mean_false_alarms + slack {
                    monotone = false;
                }
            }
        }
    }
    let pfa_violations: Vec<_> = result
        .rows
        .iter()
        .filter(|r| match (r.empirical_pfa, r.pfa_stderr) {
            (Some(p), Some(se)) => p > r.pfa_bound + 3.0 * se,
            _ => false,
        })
        .map(|r| (r.variant, r.sigma2, r.threshold))
        .collect();
    let pfa_ok = !pfa_violations.iter().any(|v| v.0 == RuleVariant::Isd);
    Ok(SocReport {
        result,
        false_alarms_monotone: monotone,
        pfa_within_bound: pfa_ok,
        pfa_violations,
    })
}

/// Single-alarm cost study of threshold rules on a shared set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CostExperiment {
    pub data_model: TransitionModel,
    pub filter_model: TransitionModel,
    pub obs: GaussianPair,
    pub initial: Belief,
    pub c: f64,
    pub horizon: usize,
    pub trials: usize,
    pub seed_base: u64,
}

/// Per-trial costs for every swept threshold (`None` where no alarm fired).
#[derive(Debug, Clone, PartialEq)]
pub struct CostSweep {
    pub thresholds: Vec<f64>,
    pub c: f64,
    /// `samples[threshold][trial]`.
    pub samples: Vec<Vec<Option<CostSample>>>,
    /// `c (τ − ν)⁺ + 1{τ < ν}` per trial, same layout.
    pub classic: Vec<Vec<Option<f64>>>,
    /// Stopping times, same layout.
    pub stopping_times: Vec<Vec<Option<usize>>>,
}

impl CostSweep {
    pub fn report(&self, i: usize) -> Result<CostReport> {
        evaluate_cost(&self.samples[i], self.c)
    }

    /// Mean and standard error of the per-trial state-form cost difference
    /// between thresholds `i` and `j`, over trials where both stopped.
    pub fn paired_difference(&self, i: usize, j: usize) -> (f64, f64) {
        mean_stderr(
            self.samples[i]
                .iter()
                .zip(&self.samples[j])
                .filter_map(|(a, b)| Some(a.as_ref()?.state_form - b.as_ref()?.state_form)),
        )
    }

    /// Index of the threshold with the smallest mean state-form cost.
    pub fn argmin(&self) -> Result<usize> {
        let mut best = None;
        for i in 0..self.thresholds.len() {
            let cost = self.report(i)?.cost_state_form;
            if best.is_none_or(|(_, b)| cost < b) {
                best = Some((i, cost));
            }
        }
        best.map(|(i, _)| i).ok_or(Error::EmptyTrialSet)
    }
}

impl CostExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c", "must be nonnegative"));
        }
        Ok(())
    }

    /// Runs the filter once per trial and records the first crossing of
    /// every threshold.
    pub fn run(&self, thresholds: &[f64]) -> Result<CostSweep> {
        self.validate()?;
        let rules: Vec<StoppingRule> = thresholds
            .iter()
            .map(|h| StoppingRule::new(*h))
            .collect::<Result<_>>()?;
        type PerTrial = Vec<Option<(CostSample, f64, usize)>>;
        let per_trial: Vec<PerTrial> = (0..self.trials as u64)
            .into_par_iter()
            .map(|t| {
                let seed = self.seed_base.wrapping_add(t);
                let traj = simulate_trajectory(
                    &self.data_model,
                    &self.obs,
                    &self.initial,
                    self.horizon,
                    seed,
                )?;
                let mut filter =
                    crate::hmm::HmmFilter::new(&self.filter_model, &self.obs, &self.initial)?;
                let mut out: PerTrial = vec![None; rules.len()];
                let mut cme_sum = 0.0;
                let mut pending = rules.len();
                for k in 0..=traj.len() {
                    if k > 0 {
                        filter.step(&traj.observations[k - 1])?;
                    }
                    let belief = filter.belief();
                    for (slot, rule) in out.iter_mut().zip(&rules) {
                        if slot.is_none() && rule.stops(belief) {
                            let sample = CostSample {
                                state_form: state_form_cost(&traj, k, self.c),
                                cme_form: self.c * cme_sum + belief[State::Normal.index()],
                            };
                            *slot = Some((sample, classic_cost(&traj, k, self.c), k));
                            pending -= 1;
                        }
                    }
                    if pending == 0 {
                        break;
                    }
                    cme_sum += belief[State::Anomalous.index()];
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let column = |i: usize| per_trial.iter().map(move |t| t[i]);
        Ok(CostSweep {
            thresholds: thresholds.to_vec(),
            c: self.c,
            samples: (0..rules.len())
                .map(|i| column(i).map(|o| o.map(|x| x.0)).collect())
                .collect(),
            classic: (0..rules.len())
                .map(|i| column(i).map(|o| o.map(|x| x.1)).collect())
                .collect(),
            stopping_times: (0..rules.len())
                .map(|i| column(i).map(|o| o.map(|x| x.2)).collect())
                .collect(),
        })
    }
}
