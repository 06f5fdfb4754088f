use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {left} vs {right} points")]
    GridMismatch { left: usize, right: usize },

    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-periodic flux: integral {integral:e} exceeds {tolerance:e}")]
    NonPeriodicFlux { integral: f64, tolerance: f64 },

    #[error("insufficient leader mass for feedforward: M_L = {leader_mass}, M_FF = {feedforward_mass}")]
    InsufficientLeaderMass { leader_mass: f64, feedforward_mass: f64 },

    #[error("target density must be strictly positive (min {min})")]
    NonPositiveTarget { min: f64 },

    #[error("CFL violation: dt = {dt:e}, largest stable step {suggested:e}")]
    Cfl { dt: f64, suggested: f64 },

    #[error("simulation diverged at t = {t}: {what}")]
    Diverged {
        t: f64,
        what: String,
        snapshot: Box<crate::metrics::FieldSnapshot>,
    },

    #[error("invariant violated at t = {t}: {what}")]
    Invariant { t: f64, what: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
