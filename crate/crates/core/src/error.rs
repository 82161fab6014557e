use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{block} block is singular at omega = {omega} rad/s (rcond = {rcond:.3e})")]
    SingularSubsystem {
        block: &'static str,
        omega: f64,
        rcond: f64,
    },

    #[error("required-force denominator a_R^T A_R^-1 D_a vanishes")]
    ZeroDivisor,

    #[error("Q(omega) vanishes: the structure needs no feedback at this frequency")]
    ZeroQ,

    #[error("{branch:?} branch with k = {k} gives a negative delay ({tau} s)")]
    NotRealizable { branch: crate::tuning::Branch, k: i64, tau: f64 },

    #[error("spectrum: {0}")]
    Spectrum(String),

    #[error("simulation step dt = {dt} s violates {reason}")]
    StepSize { dt: f64, reason: String },

    #[error("simulation state became non-finite at t = {time} s")]
    NonFinite { time: f64 },

    #[error("simulation window: {0}")]
    Window(String),

    #[error("design problem: {0}")]
    Design(String),

    #[error("no feasible design: {0}")]
    Infeasible(String),
}

impl Error {
    /// True for errors caused by malformed input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_) | Error::StepSize { .. } | Error::Window(_) | Error::Design(_)
        )
    }
}
