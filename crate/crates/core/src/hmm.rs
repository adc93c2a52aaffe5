//! Recursive conditional-mean (posterior) filter for a finite hidden chain,
//! together with a brute-force path-enumeration oracle.

use std::io::Write;

use crate::error::{Error, Result};
use crate::signal::{Belief, ObservationModel, Transition};

/// Default maximum sequence length accepted by the enumeration oracles.
pub const DEFAULT_ENUMERATION_CAP: usize = 12;

/// Posterior after the `k`-th measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub belief: Belief,
    /// `log <1, B(y_k) A X̂_{k-1}>`, i.e. the log of the predictive density of
    /// `y_k` (up to any factor the observation model drops).
    pub log_normalizer: f64,
    pub k: usize,
}

/// Measurement update against an already predicted vector.
///
/// Fills `scaled_lik` with `exp(l_i - max_l)` and returns the normaliser
/// `s = Σ scaled_lik_i · predicted_i` together with `log <1, B A X̂>`.
/// Scaling by the largest log-likelihood keeps far-tail observations
/// from underflowing every state at once.
pub(crate) fn correct<O: ObservationModel>(
    obs: &O,
    y: &O::Obs,
    predicted: &[f64],
    scaled_lik: &mut [f64],
    k: usize,
) -> Result<(f64, f64)> {
    obs.log_likelihoods(y, scaled_lik);
    let max = scaled_lik
        .iter()
        .zip(predicted)
        .filter(|(_, p)| **p > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateLikelihood { k });
    }
    let mut s = 0.0;
    for (l, p) in scaled_lik.iter_mut().zip(predicted) {
        *l = (*l - max).exp();
        s += *l * p;
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateLikelihood { k });
    }
    Ok((s, max + s.ln()))
}

/// Stateful filter that advances in place; no allocation per step.
#[derive(Debug, Clone)]
pub struct HmmFilter<'m, T, O> {
    trans: &'m T,
    obs: &'m O,
    belief: Vec<f64>,
    predicted: Vec<f64>,
    lik: Vec<f64>,
    k: usize,
    log_likelihood: f64,
}

impl<'m, T: Transition, O: ObservationModel> HmmFilter<'m, T, O> {
    pub fn new(trans: &'m T, obs: &'m O, initial: &Belief) -> Result<Self> {
        let n = trans.num_states();
        if obs.num_states() != n || initial.len() != n {
            return Err(Error::invalid(
                "initial_belief",
                format!(
                    "state count mismatch: transition {n}, observation {}, belief {}",
                    obs.num_states(),
                    initial.len()
                ),
            ));
        }
        Ok(Self {
            trans,
            obs,
            belief: initial.as_slice().to_vec(),
            predicted: vec![0.0; n],
            lik: vec![0.0; n],
            k: 0,
            log_likelihood: 0.0,
        })
    }

    /// Consumes `y_{k+1}`; returns its log-normaliser.
    pub fn step(&mut self, y: &O::Obs) -> Result<f64> {
        self.trans.predict(&self.belief, &mut self.predicted);
        let (s, log_norm) = correct(self.obs, y, &self.predicted, &mut self.lik, self.k + 1)?;
        for ((b, l), p) in self.belief.iter_mut().zip(&self.lik).zip(&self.predicted) {
            *b = l * p / s;
        }
        self.k += 1;
        self.log_likelihood += log_norm;
        Ok(log_norm)
    }

    pub fn reset(&mut self, belief: &Belief) {
        self.belief.copy_from_slice(belief.as_slice());
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sum of log-normalisers so far.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

/// One update `normalize(B(y) A prev)`.
pub fn filter_step<T: Transition, O: ObservationModel>(
    prev: &Belief,
    y: &O::Obs,
    trans: &T,
    obs: &O,
) -> Result<FilterStep> {
    let mut f = HmmFilter::new(trans, obs, prev)?;
    let log_normalizer = f.step(y)?;
    Ok(FilterStep {
        belief: Belief::from_normalized(f.belief.clone()),
        log_normalizer,
        k: 1,
    })
}

/// Folds [`filter_step`] over the measurements, one output per measurement.
pub fn run_filter<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
) -> Result<Vec<FilterStep>>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    if observations.is_empty() {
        return Err(Error::invalid("observations", "sequence is empty"));
    }
    let mut f = HmmFilter::new(trans, obs, initial)?;
    observations
        .iter()
        .map(|y| {
            let log_normalizer = f.step(y)?;
            Ok(FilterStep {
                belief: Belief::from_normalized(f.belief.clone()),
                log_normalizer,
                k: f.k,
            })
        })
        .collect()
}

/// Filter trace as CSV rows `k, belief_e1, belief_e2, log_normalizer`.
pub fn write_trace_csv<W: Write>(steps: &[FilterStep], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "belief_e1", "belief_e2", "log_normalizer"])?;
    for s in steps {
        w.write_record([
            s.k.to_string(),
            s.belief.get(0).to_string(),
            s.belief.get(1).to_string(),
            s.log_normalizer.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Visits every hidden path `x_0..x_K` with its joint weight
/// `π(x_0) Π A(x_l | x_{l-1}) b_{x_l}(y_l)`.
pub(crate) fn for_each_path<T, O, Y, F>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
    cap: usize,
    mut visit: F,
) -> Result<()>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
    F: FnMut(&[usize], f64),
{
    let len = observations.len();
    if len > cap {
        return Err(Error::CapExceeded { len, cap });
    }
    let n = trans.num_states();
    let lik: Vec<Vec<f64>> = observations
        .iter()
        .map(|y| {
            let mut l = vec![0.0; n];
            obs.log_likelihoods(y, &mut l);
            l.into_iter().map(f64::exp).collect()
        })
        .collect();
    let total = n.pow(len as u32 + 1);
    let mut path = vec![0usize; len + 1];
    for code in 0..total {
        let mut c = code;
        for x in path.iter_mut() {
            *x = c % n;
            c /= n;
        }
        let mut w = initial.get(path[0]);
        for l in 1..=len {
            w *= trans.prob(path[l], path[l - 1]) * lik[l - 1][path[l]];
        }
        visit(&path, w);
    }
    Ok(())
}

/// Exact posterior of `X_K` by summing over all hidden paths.
pub fn enumerate_posterior<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
    cap: usize,
) -> Result<Belief>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    let n = trans.num_states();
    let mut mass = vec![0.0; n];
    for_each_path(observations, trans, obs, initial, cap, |path, w| {
        mass[path[path.len() - 1]] += w;
    })?;
    let total: f64 = mass.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::DegenerateLikelihood {
            k: observations.len(),
        });
    }
    Ok(Belief::from_normalized(
        mass.into_iter().map(|m| m / total).collect(),
    ))
}

/// Exact log marginal likelihood `log p(y_1..y_K)` by path enumeration.
pub fn enumerate_log_likelihood<T, O, Y>(
    observations: &[Y],
    trans: &T,
    obs: &O,
    initial: &Belief,
    cap: usize,
) -> Result<f64>
where
    T: Transition,
    O: ObservationModel<Obs = Y>,
{
    let mut total = 0.0;
    for_each_path(observations, trans, obs, initial, cap, |_, w| total += w)?;
    Ok(total.ln())
}
