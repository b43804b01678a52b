use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular metric at {at:?} (condition number {condition:.3e})")]
    SingularMetric { at: Vec<f64>, condition: f64 },

    #[error("integration failed at parameter {at}: {reason}")]
    Integration {
        at: f64,
        reason: String,
        last_state: Vec<f64>,
    },

    #[error("ray not certified as escaping before s_max = {s_max} (trapped or undecided)")]
    Trapped { s_max: f64 },

    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("front-face extrapolation did not converge (estimate {estimate:.3e} > tolerance {tol:.3e})")]
    Extrapolation { estimate: f64, tol: f64 },

    #[error("geodesic length {length} is outside the injectivity bound {bound}")]
    OutOfInjectivity { length: f64, bound: f64 },

    #[error("time step {dt} is too coarse; try dt <= {suggested}")]
    Stability { dt: f64, suggested: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_)
            | Error::Config(_)
            | Error::Io(_)
            | Error::OutOfInjectivity { .. }
            | Error::Stability { .. } => 2,
            _ => 3,
        }
    }

    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::SingularMetric { .. } => "singular_metric",
            Error::Integration { .. } => "integration",
            Error::Trapped { .. } => "trapped",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Extrapolation { .. } => "extrapolation",
            Error::OutOfInjectivity { .. } => "out_of_injectivity",
            Error::Stability { .. } => "stability",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
