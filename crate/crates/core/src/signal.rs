//! The hidden two-state intermittent signal, its measurement model and
//! trajectory simulation.
//!
//! States are indexed from zero internally (`0` = normal, `1` = anomalous);
//! exported files use the labels `1` and `2`.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};

/// Seedable, platform-independent generator used by every stochastic routine.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Regime of the core two-state signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Normal,
    Anomalous,
}

impl State {
    pub fn index(self) -> usize {
        match self {
            State::Normal => 0,
            State::Anomalous => 1,
        }
    }

    /// One-based label used in exported files.
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            State::Normal
        } else {
            State::Anomalous
        }
    }

    pub fn other(self) -> Self {
        match self {
            State::Normal => State::Anomalous,
            State::Anomalous => State::Normal,
        }
    }
}

/// Column-stochastic transition structure of a finite hidden chain.
///
/// `prob(to, from)` is P(next = `to` | current = `from`).
pub trait Transition {
    fn num_states(&self) -> usize;

    fn prob(&self, to: usize, from: usize) -> f64;

    /// One-step prediction `out = A · belief`.
    fn predict(&self, belief: &[f64], out: &mut [f64]) {
        let n = self.num_states();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.prob(i, j) * belief[j]).sum();
        }
    }
}

/// Per-state measurement model. Only ratios across states matter to the
/// filter, so implementations may drop any factor common to all states.
pub trait ObservationModel {
    type Obs: ?Sized;

    fn num_states(&self) -> usize;

    /// Writes the (possibly unnormalised) log-likelihood of `y` under each state.
    fn log_likelihoods(&self, y: &Self::Obs, out: &mut [f64]);
}

/// Two-state chain with switch-on probability `rho` and anomalous
/// self-transition probability `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    rho: f64,
    a: f64,
}

impl TransitionModel {
    pub fn new(rho: f64, a: f64) -> Result<Self> {
        check_probability("rho", rho)?;
        check_probability("a", a)?;
        Ok(Self { rho, a })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Same switch-on probability with the anomalous state made absorbing.
    pub fn absorbing(&self) -> Self {
        Self {
            rho: self.rho,
            a: 1.0,
        }
    }

    /// `m[i][j]` = P(next = i | current = j).
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.rho, 1.0 - self.a], [self.rho, self.a]]
    }

    /// Stationary law `(1 - a, rho) / (1 - a + rho)`. Undefined when both
    /// `rho = 0` and `a = 1`.
    pub fn stationary(&self) -> Result<Belief> {
        let denom = 1.0 - self.a + self.rho;
        if denom <= 0.0 {
            return Err(Error::invalid(
                "initial_belief",
                "stationary distribution undefined for rho = 0, a = 1; give an explicit initial belief",
            ));
        }
        Belief::new(vec![(1.0 - self.a) / denom, self.rho / denom])
    }

    pub fn next_state<R: Rng + ?Sized>(&self, current: State, rng: &mut R) -> State {
        let p_anomalous = match current {
            State::Normal => self.rho,
            State::Anomalous => self.a,
        };
        if rng.random::<f64>() < p_anomalous {
            State::Anomalous
        } else {
            State::Normal
        }
    }
}

/// The matrix with entries `[[1 - rho, 1 - a], [rho, a]]`.
pub fn build_transition_matrix(model: &TransitionModel) -> [[f64; 2]; 2] {
    model.matrix()
}

impl Transition for TransitionModel {
    fn num_states(&self) -> usize {
        2
    }

    fn prob(&self, to: usize, from: usize) -> f64 {
        self.matrix()[to][from]
    }

    fn predict(&self, belief: &[f64], out: &mut [f64]) {
        out[0] = (1.0 - self.rho) * belief[0] + (1.0 - self.a) * belief[1];
        out[1] = self.rho * belief[0] + self.a * belief[1];
    }
}

/// Probability vector over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

const BELIEF_SUM_TOL: f64 = 1e-9;

impl Belief {
    /// Validates nonnegativity and unit mass (to 1e-9), then renormalises exactly.
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("belief", "empty probability vector"));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "belief",
                format!("entries must be finite and nonnegative, got {p:?}"),
            ));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(Error::invalid(
                "belief",
                format!("entries must sum to 1, got {total}"),
            ));
        }
        Ok(Self(p.into_iter().map(|v| v / total).collect()))
    }

    pub fn point_mass(n: usize, state: usize) -> Self {
        let mut p = vec![0.0; n];
        p[state] = 1.0;
        Self(p)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Two-state belief with anomalous mass `p2`.
    pub fn two_state(p2: f64) -> Result<Self> {
        check_probability("belief", p2)?;
        Ok(Self(vec![1.0 - p2, p2]))
    }

    /// Wraps an already normalised vector produced by a filter update.
    pub(crate) fn from_normalized(p: Vec<f64>) -> Self {
        Self(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn anomalous(&self) -> f64 {
        self.0[1]
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Belief::new(p)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.0
    }
}

/// Gaussian measurements with a state-dependent mean and shared variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    mu1: f64,
    mu2: f64,
    sigma2: f64,
}

impl GaussianPair {
    pub fn new(mu1: f64, mu2: f64, sigma2: f64) -> Result<Self> {
        if !mu1.is_finite() {
            return Err(Error::invalid("mu1", "must be finite"));
        }
        if !mu2.is_finite() {
            return Err(Error::invalid("mu2", "must be finite"));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(
                "sigma2",
                format!("must be positive and finite, got {sigma2}"),
            ));
        }
        Ok(Self { mu1, mu2, sigma2 })
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mean(&self, state: State) -> f64 {
        match state {
            State::Normal => self.mu1,
            State::Anomalous => self.mu2,
        }
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(self.mu1, self.mu2, sigma2)
    }

    pub fn log_density(&self, state: State, y: f64) -> f64 {
        let d = y - self.mean(state);
        -0.5 * (2.0 * std::f64::consts::PI * self.sigma2).ln() - d * d / (2.0 * self.sigma2)
    }

    pub fn density(&self, state: State, y: f64) -> f64 {
        let d = y - self.mean(state);
        (-d * d / (2.0 * self.sigma2)).exp() / (2.0 * std::f64::consts::PI * self.sigma2).sqrt()
    }

    /// f²(y) / f¹(y).
    pub fn likelihood_ratio(&self, y: f64) -> f64 {
        (self.log_density(State::Anomalous, y) - self.log_density(State::Normal, y)).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: State, rng: &mut R) -> f64 {
        Normal::new(self.mean(state), self.sigma2.sqrt())
            .expect("validated variance")
            .sample(rng)
    }
}

/// Gaussian density of `y` under `state`.
pub fn density(obs: &GaussianPair, state: State, y: f64) -> f64 {
    obs.density(state, y)
}

impl ObservationModel for GaussianPair {
    type Obs = f64;

    fn num_states(&self) -> usize {
        2
    }

    fn log_likelihoods(&self, y: &f64, out: &mut [f64]) {
        out[0] = self.log_density(State::Normal, *y);
        out[1] = self.log_density(State::Anomalous, *y);
    }
}

/// A realised hidden path `X_0..X_K` with measurements `y_1..y_K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub observations: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of measurements `K`.
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of steps in `[from, to)` spent in the anomalous state.
    pub fn anomalous_count(&self, from: usize, to: usize) -> usize {
        self.states[from..to]
            .iter()
            .filter(|s| **s == State::Anomalous)
            .count()
    }

    /// Rows `k, state, observation` for k = 1..=K.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "state", "observation"])?;
        for (i, y) in self.observations.iter().enumerate() {
            let k = i + 1;
            w.write_record([
                k.to_string(),
                self.states[k].label().to_string(),
                y.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sample_initial<R: Rng + ?Sized>(initial: &Belief, rng: &mut R) -> State {
    if rng.random::<f64>() < initial.anomalous() {
        State::Anomalous
    } else {
        State::Normal
    }
}

/// Samples `X_0` from `initial`, then `length` Markov transitions and one
/// measurement per transition. Deterministic in `seed`.
pub fn simulate_trajectory(
    model: &TransitionModel,
    obs: &GaussianPair,
    initial: &Belief,
    length: usize,
    seed: u64,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::invalid("length", "must be at least 1"));
    }
    if initial.len() != 2 {
        return Err(Error::invalid(
            "initial_belief",
            "core model needs a two-state belief",
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut states = Vec::with_capacity(length + 1);
    let mut observations = Vec::with_capacity(length);
    let mut x = sample_initial(initial, &mut rng);
    states.push(x);
    for _ in 0..length {
        x = model.next_state(x, &mut rng);
        states.push(x);
        observations.push(obs.sample(x, &mut rng));
    }
    Ok(Trajectory {
        states,
        observations,
        seed,
    })
}

/// Hand-crafted path: starts normal and toggles state at each listed time.
/// Only the measurements are random.
pub fn scripted_trajectory(
    switches: &[usize],
    length: usize,
    obs: &GaussianPair,
    seed: u64,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::invalid("length", "must be at least 1"));
    }
    if switches.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("switches", "must be strictly increasing"));
    }
    let mut rng = rng_from_seed(seed);
    let mut states = Vec::with_capacity(length + 1);
    let mut observations = Vec::with_capacity(length);
    let mut x = State::Normal;
    let mut next_switch = switches.iter().peekable();
    for k in 0..=length {
        while next_switch.peek().is_some_and(|&&s| s == k) {
            x = x.other();
            next_switch.next();
        }
        states.push(x);
        if k > 0 {
            observations.push(obs.sample(x, &mut rng));
        }
    }
    Ok(Trajectory {
        states,
        observations,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_examples() {
        let m = TransitionModel::new(0.01, 0.99).unwrap().matrix();
        let expected = [[0.99, 0.01], [0.01, 0.99]];
        for (row, exp) in m.iter().zip(&expected) {
            for (v, e) in row.iter().zip(exp) {
                assert!((v - e).abs() < 1e-15);
            }
        }
        for (a, b) in m[0].iter().zip(&m[1]) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
        let m = TransitionModel::new(0.0, 1.0).unwrap().matrix();
        assert_eq!(m, [[1.0, 0.0], [0.0, 1.0]]);
        let m = TransitionModel::new(1.0, 0.0).unwrap().matrix();
        assert_eq!(m, [[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        assert!(matches!(
            TransitionModel::new(1.5, 0.5),
            Err(Error::InvalidParameter { ref field, .. }) if field == "rho"
        ));
        assert!(TransitionModel::new(0.5, -0.1).is_err());
        assert!(TransitionModel::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn density_at_mean() {
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 5.0).sqrt();
        assert!((density(&obs, State::Normal, 1.0) - peak).abs() < 1e-15);
        assert!((density(&obs, State::Anomalous, 2.0) - peak).abs() < 1e-15);
        assert!((obs.likelihood_ratio(1.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_is_finite_far_out() {
        let obs = GaussianPair::new(0.0, 10.0, 1e-6).unwrap();
        for y in [-1e6, -3.0, 0.0, 5.0, 1e6] {
            let d = obs.density(State::Normal, y);
            assert!(d.is_finite() && d >= 0.0);
        }
        assert!(GaussianPair::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn no_transitions_possible() {
        let model = TransitionModel::new(0.0, 1.0).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t = simulate_trajectory(&model, &obs, &Belief::point_mass(2, 0), 500, 3).unwrap();
        assert!(t.states.iter().all(|s| *s == State::Normal));
        assert_eq!(t.states.len(), t.observations.len() + 1);
    }

    #[test]
    fn forced_switch_then_absorbing() {
        let model = TransitionModel::new(1.0, 1.0).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t = simulate_trajectory(&model, &obs, &Belief::point_mass(2, 0), 50, 9).unwrap();
        assert_eq!(t.states[0], State::Normal);
        assert!(t.states[1..].iter().all(|s| *s == State::Anomalous));
    }

    #[test]
    fn empirical_transition_frequencies() {
        let model = TransitionModel::new(0.01, 0.99).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t =
            simulate_trajectory(&model, &obs, &model.stationary().unwrap(), 100_000, 11).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for w in t.states.windows(2) {
            counts[w[1].index()][w[0].index()] += 1;
        }
        let m = model.matrix();
        for from in 0..2 {
            let n = (counts[0][from] + counts[1][from]) as f64;
            let p_hat = counts[1][from] as f64 / n;
            let p = m[1][from];
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((p_hat - p).abs() <= 3.0 * se, "from {from}: {p_hat} vs {p}");
        }
    }

    #[test]
    fn stationary_marginal() {
        let model = TransitionModel::new(0.2, 0.7).unwrap();
        let pi = model.stationary().unwrap();
        assert!((pi.anomalous() - 0.2 / 0.5).abs() < 1e-15);
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t = simulate_trajectory(&model, &obs, &Belief::point_mass(2, 0), 200_000, 5).unwrap();
        let frac = t.anomalous_count(0, t.states.len()) as f64 / t.states.len() as f64;
        // Autocorrelated chain: inflate the iid standard error by the mixing factor.
        let lambda = 1.0 - model.rho() - (1.0 - model.a());
        let var = pi.anomalous() * (1.0 - pi.anomalous()) * (1.0 + lambda) / (1.0 - lambda);
        let se = (var / t.states.len() as f64).sqrt();
        assert!((frac - pi.anomalous()).abs() < 4.0 * se);
        assert!(TransitionModel::new(0.0, 1.0)
            .unwrap()
            .stationary()
            .is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let model = TransitionModel::new(0.01, 0.99).unwrap();
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let init = model.stationary().unwrap();
        let a = simulate_trajectory(&model, &obs, &init, 1000, 42).unwrap();
        let b = simulate_trajectory(&model, &obs, &init, 1000, 42).unwrap();
        let c = simulate_trajectory(&model, &obs, &init, 1000, 43).unwrap();
        assert_eq!(a, b);
        assert!(a
            .observations
            .iter()
            .zip(&b.observations)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn scripted_switches() {
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t = scripted_trajectory(&[3, 5], 7, &obs, 1).unwrap();
        let labels: Vec<u8> = t.states.iter().map(|s| s.label()).collect();
        assert_eq!(labels, vec![1, 1, 1, 2, 2, 1, 1, 1]);
        assert!(scripted_trajectory(&[5, 3], 7, &obs, 1).is_err());
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.5]).is_ok());
        assert!(Belief::new(vec![0.6, 0.6]).is_err());
        assert!(Belief::new(vec![-0.1, 1.1]).is_err());
        let b = Belief::new(vec![0.3, 0.7 + 1e-12]).unwrap();
        assert!((b.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_export() {
        let obs = GaussianPair::new(1.0, 2.0, 5.0).unwrap();
        let t = scripted_trajectory(&[2], 3, &obs, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,state,observation");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("2,2,"));
    }
}
