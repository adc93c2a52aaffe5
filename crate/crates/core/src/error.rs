use thiserror::Error;

/// Errors produced anywhere in the detection toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or configuration parameter violates its invariant.
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// Every state's (predicted mass × likelihood) vanished at step `k`.
    #[error("degenerate likelihood at step {k}: observation outside the model's support")]
    DegenerateLikelihood { k: usize },

    /// Exhaustive enumeration was requested for a sequence longer than the cap.
    #[error("enumeration over {len} observations exceeds cap {cap}")]
    CapExceeded { len: usize, cap: usize },

    #[error("no trials with a defined stopping time")]
    EmptyTrialSet,

    #[error("quadrature integrates the predictive density to {total} at belief {p}")]
    QuadratureFailure { p: f64, total: f64 },

    #[error("value iteration did not converge: residual {residual} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    /// The stop region of a value function is not of the form [h, 1] on the grid.
    #[error(
        "stopping set is not an interval: continuation at p={p} above stop point {first_stop}"
    )]
    NotAnInterval { first_stop: f64, p: f64 },

    #[error("invalid transition patch: mass {mass} (must sum to 1)")]
    InvalidPatch { mass: f64 },

    #[error("emergence schedule out of bounds: {0}")]
    ScheduleOutOfBounds(String),

    /// Filter failure inside a Monte-Carlo trial.
    #[error("trial {trial}: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed raster: {0}")]
    Raster(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_probability(field: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::invalid(
            field,
            format!("must be a probability in [0, 1], got {value}"),
        ));
    }
    Ok(())
}
