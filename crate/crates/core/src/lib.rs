//! Bayesian quickest detection of an intermittent anomaly.
//!
//! A hidden two-state Markov chain switches between a normal and an
//! anomalous regime, possibly many times. The toolkit filters the posterior
//! of the anomalous regime, stops when it crosses a threshold, estimates how
//! long the chain had been anomalous before the alarm, computes the optimal
//! threshold by value iteration, and evaluates all of it by Monte-Carlo.
//! The [`aircraft`] module applies the same rule to emergence detection of a
//! dim target on an image grid.

pub mod aircraft;
pub mod dp;
pub mod error;
pub mod hmm;
pub mod montecarlo;
pub mod occupation;
pub mod quadrature;
pub mod signal;
pub mod stopping;

pub use error::{Error, Result};
pub use signal::{Belief, GaussianPair, State, Trajectory, TransitionModel};
pub use stopping::{AlarmRecord, ResetPolicy, StoppingRule};
