use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("argument outside the domain of {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("{what} has a pole at {at}")]
    Pole { what: &'static str, at: f64 },

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("ML-VAMP diverged at iteration {iteration}")]
    Divergence {
        iteration: usize,
        history: Vec<f64>,
    },

    #[error("degenerate averaged derivative {alpha} at layer {layer}, iteration {iteration}")]
    Degeneracy {
        layer: usize,
        iteration: usize,
        alpha: f64,
    },

    #[error("state evolution did not reach a fixed point in {iterations} iterations")]
    FixedPoint { iterations: usize, changes: Vec<f64> },

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("Monte Carlo estimate {mc} disagrees with closed form {closed} (stderr {stderr:e})")]
    McDisagreement { mc: f64, closed: f64, stderr: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("malformed dataset file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and positive",
        })
    }
}

pub(crate) fn check_nonnegative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and nonnegative",
        })
    }
}

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}
