//! Threshold stopping rules on the posterior, alarm accounting with
//! detector resets, and the two equivalent forms of the detection cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::occupation::{DetectorStep, OccupationFilter};
use crate::signal::{Belief, GaussianPair, State, Trajectory, TransitionModel};

/// Which scalar of the belief vector is compared to the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Posterior mass of one state (anomalous state for the core model).
    StateMass(usize),
    /// One minus the posterior mass of one state (the not-visible state for
    /// the image model).
    ComplementOf(usize),
}

impl Statistic {
    pub fn evaluate(self, belief: &[f64]) -> f64 {
        match self {
            Statistic::StateMass(i) => belief[i],
            Statistic::ComplementOf(i) => 1.0 - belief[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    threshold: f64,
    statistic: Statistic,
}

impl StoppingRule {
    /// Rule on the anomalous-state posterior of the core model.
    pub fn new(threshold: f64) -> Result<Self> {
        Self::with_statistic(threshold, Statistic::StateMass(State::Anomalous.index()))
    }

    pub fn with_statistic(threshold: f64, statistic: Statistic) -> Result<Self> {
        check_probability("threshold", threshold)?;
        Ok(Self {
            threshold,
            statistic,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn statistic(&self) -> Statistic {
        self.statistic
    }

    pub fn stops(&self, belief: &[f64]) -> bool {
        self.statistic.evaluate(belief) >= self.threshold
    }
}

pub fn should_stop(rule: &StoppingRule, belief: &Belief) -> bool {
    rule.stops(belief.as_slice())
}

/// Upper bound `1 - h` on the probability of being normal at the alarm.
pub fn pfa_bound(rule: &StoppingRule) -> f64 {
    1.0 - rule.threshold
}

/// Belief the detector restarts from after an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    #[default]
    ResetToInitial,
    ResetToStationary,
}

impl ResetPolicy {
    pub fn resolve(self, initial: &Belief, filter_model: &TransitionModel) -> Result<Belief> {
        match self {
            ResetPolicy::ResetToInitial => Ok(initial.clone()),
            ResetPolicy::ResetToStationary => filter_model.stationary(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub alarm_time: usize,
    pub true_state_at_alarm: State,
    pub is_false_alarm: bool,
    /// `Ô²_τ`, counted from the last detector restart.
    pub occupation_estimate_at_alarm: f64,
    /// Steps in the anomalous state on `[segment_start, τ)`.
    pub realized_occupation: f64,
    /// `τ` minus the start of the anomalous run containing `τ`; `None` for
    /// false alarms.
    pub episode_delay: Option<usize>,
    /// Time of the last detector restart (0 for the first alarm).
    pub segment_start: usize,
}

impl AlarmRecord {
    fn new(
        trajectory: &Trajectory,
        alarm_time: usize,
        segment_start: usize,
        occupation_estimate: f64,
    ) -> Self {
        let state = trajectory.states[alarm_time];
        let episode_delay = (state == State::Anomalous).then(|| {
            let run = trajectory.states[..=alarm_time]
                .iter()
                .rev()
                .take_while(|s| **s == State::Anomalous)
                .count();
            run - 1
        });
        Self {
            alarm_time,
            true_state_at_alarm: state,
            is_false_alarm: state == State::Normal,
            occupation_estimate_at_alarm: occupation_estimate,
            realized_occupation: trajectory.anomalous_count(segment_start, alarm_time) as f64,
            episode_delay,
            segment_start,
        }
    }
}

/// Earliest step whose posterior satisfies the rule, classified against the
/// true path. `trace` starts with the prior at k = 0.
pub fn first_alarm(
    trace: &[DetectorStep],
    rule: &StoppingRule,
    trajectory: &Trajectory,
) -> Option<AlarmRecord> {
    let anomalous = State::Anomalous.index();
    trace
        .iter()
        .find(|s| rule.stops(s.belief.as_slice()))
        .map(|s| AlarmRecord::new(trajectory, s.k, 0, s.occupation(anomalous)))
}

/// Scans the whole trajectory; after each alarm the posterior restarts from
/// the reset belief and the occupation filter from zero, and scanning goes on.
pub fn run_with_resets(
    trajectory: &Trajectory,
    filter_model: &TransitionModel,
    obs: &GaussianPair,
    rule: &StoppingRule,
    initial: &Belief,
    policy: ResetPolicy,
) -> Result<Vec<AlarmRecord>> {
    let reset = policy.resolve(initial, filter_model)?;
    let anomalous = State::Anomalous.index();
    let mut f = OccupationFilter::new(filter_model, obs, initial)?;
    let mut alarms = Vec::new();
    let mut segment_start = 0;
    for k in 0..=trajectory.len() {
        if k > 0 {
            f.step(&trajectory.observations[k - 1])
                .map_err(|e| match e {
                    Error::DegenerateLikelihood { .. } => Error::DegenerateLikelihood { k },
                    other => other,
                })?;
        }
        if rule.stops(f.belief()) {
            alarms.push(AlarmRecord::new(
                trajectory,
                k,
                segment_start,
                f.occupation(anomalous),
            ));
            f.reset(&reset);
            segment_start = k;
        }
    }
    Ok(alarms)
}

/// Per-trial realisation of both cost forms at stopping time `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    /// `c Σ_{l<τ} <X_l, e2> + <X_τ, e1>`.
    pub state_form: f64,
    /// `c Σ_{l<τ} X̂²_l + X̂¹_τ`.
    pub cme_form: f64,
}

impl CostSample {
    pub fn from_trace(trajectory: &Trajectory, trace: &[DetectorStep], tau: usize, c: f64) -> Self {
        let cme_sum: f64 = trace[..tau].iter().map(|s| s.belief.anomalous()).sum();
        Self {
            state_form: state_form_cost(trajectory, tau, c),
            cme_form: c * cme_sum + trace[tau].belief.get(0),
        }
    }
}

pub fn state_form_cost(trajectory: &Trajectory, tau: usize, c: f64) -> f64 {
    let normal_at_stop = if trajectory.states[tau] == State::Normal {
        1.0
    } else {
        0.0
    };
    c * trajectory.anomalous_count(0, tau) as f64 + normal_at_stop
}

/// `c (τ - ν)⁺ + 1{τ < ν}` with `ν` the first entry into the anomalous
/// state (`ν = ∞` if never). Equals [`state_form_cost`] when that state
/// is absorbing.
pub fn classic_cost(trajectory: &Trajectory, tau: usize, c: f64) -> f64 {
    let nu = trajectory
        .states
        .iter()
        .position(|s| *s == State::Anomalous);
    match nu {
        Some(nu) if nu <= tau => c * (tau - nu) as f64,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost_state_form: f64,
    pub cost_cme_form: f64,
    pub stderr_state_form: f64,
    pub stderr_cme_form: f64,
    /// Standard error of the per-trial difference of the two forms.
    pub stderr_paired_difference: f64,
    pub penalty_c: f64,
    pub trials: usize,
    /// Trials without an alarm before the horizon, excluded from the means.
    pub censored: usize,
}

impl CostReport {
    pub fn combined_stderr(&self) -> f64 {
        self.stderr_state_form.hypot(self.stderr_cme_form)
    }
}

/// Averages per-trial costs; trials without an alarm are passed as `None`.
pub fn evaluate_cost(samples: &[Option<CostSample>], c: f64) -> Result<CostReport> {
    let defined: Vec<CostSample> = samples.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::EmptyTrialSet);
    }
    let (state_mean, state_se) = mean_stderr(defined.iter().map(|s| s.state_form));
    let (cme_mean, cme_se) = mean_stderr(defined.iter().map(|s| s.cme_form));
    let (_, diff_se) = mean_stderr(defined.iter().map(|s| s.state_form - s.cme_form));
    Ok(CostReport {
        cost_state_form: state_mean,
        cost_cme_form: cme_mean,
        stderr_state_form: state_se,
        stderr_cme_form: cme_se,
        stderr_paired_difference: diff_se,
        penalty_c: c,
        trials: defined.len(),
        censored: samples.len() - defined.len(),
    })
}

/// Sample mean and standard error (sample std / √n); zero error for n < 2.
pub fn mean_stderr(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Classic change-point posterior recursion for an absorbing change:
/// `p̃ = p + (1 - p) ρ`, `p⁺ = L p̃ / (L p̃ + 1 - p̃)` with `L = f²/f¹`.
/// Returns the statistic for k = 0..=K.
pub fn shiryaev_statistics(
    observations: &[f64],
    rho: f64,
    obs: &GaussianPair,
    p0: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(observations.len() + 1);
    let mut p = p0;
    out.push(p);
    for &y in observations {
        let prior = p + (1.0 - p) * rho;
        let lr = obs.likelihood_ratio(y);
        p = lr * prior / (lr * prior + 1.0 - prior);
        out.push(p);
    }
    out
}

/// Alarm log rows `trial_id, alarm_time, is_false_alarm, realized_occupation,
/// occupation_estimate`.
pub fn write_alarm_csv<'a, W: Write>(
    rows: impl IntoIterator<Item = (u64, &'a AlarmRecord)>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trial_id",
        "alarm_time",
        "is_false_alarm",
        "realized_occupation",
        "occupation_estimate",
        "episode_delay",
    ])?;
    for (trial, a) in rows {
        w.write_record([
            trial.to_string(),
            a.alarm_time.to_string(),
            a.is_false_alarm.to_string(),
            a.realized_occupation.to_string(),
            a.occupation_estimate_at_alarm.to_string(),
            a.episode_delay.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
