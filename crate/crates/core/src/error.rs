use thiserror::Error;

/// Errors raised while building or solving a vortex problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid metric: {0}")]
    Metric(String),

    #[error("point t = {t} lies outside the tabulated strip [{t_min}, {t_max}]")]
    OutOfRange { t: f64, t_min: f64, t_max: f64 },

    #[error("t = {t} is inside the compact core |t| < t_flat = {t_flat}")]
    NotInEnd { t: f64, t_flat: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("field shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite value {value} sampled at node ({i_t}, {i_theta})")]
    NonFinite {
        i_t: usize,
        i_theta: usize,
        value: f64,
    },

    #[error("vortex configuration rejected: {0}")]
    Vortex(String),

    #[error("diverged state: max u = {max_u:.3e} exceeds exponential range")]
    Diverged { max_u: f64 },

    #[error("solver failed after {iterations} Newton steps: {reason} (last residual {residual:.3e})")]
    SolverFailed {
        iterations: usize,
        residual: f64,
        reason: String,
    },

    #[error("solution not converged")]
    NotConverged,

    #[error("decay fit window: {0}")]
    Window(String),

    #[error("isometry not grid-compatible: {0}")]
    Isometry(String),

    #[error("convergence study: {0}")]
    Study(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
