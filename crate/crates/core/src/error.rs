use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} = {value} is outside the admissible range {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("grid cannot resolve the measurement segment: {0}")]
    Unresolved(String),

    #[error("coefficient a(t={t}, u={u}) = {value} violates the lower bound a_lo = {a_lo}")]
    NotElliptic { t: f64, u: f64, value: f64, a_lo: f64 },

    #[error("nonlinear iteration diverged at step {step} (t = {time}); residual history {history:?}")]
    NonlinearDivergence {
        step: usize,
        time: f64,
        history: Vec<f64>,
    },

    #[error("linear solver failed: {0}")]
    LinearSolver(String),

    #[error("test function violates a precondition: {0}")]
    TestFunction(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Config(String),
}
