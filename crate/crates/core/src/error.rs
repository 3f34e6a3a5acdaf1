use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input: wrong shapes, zero sizes, non-finite coordinates.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A parameter lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constant of the log-Sobolev pipeline is outside its valid regime.
    #[error("invalid regime: {constant} = {value}")]
    Regime { constant: &'static str, value: f64 },

    #[error("non-finite energy at particle {particle}")]
    NonFiniteEnergy { particle: usize },

    #[error("assembled Hessian is asymmetric (defect {defect:e}); inconsistent model derivatives")]
    AsymmetricHessian { defect: f64 },

    #[error("Gibbs measure is not normalizable: {0}")]
    NotNormalizable(String),

    #[error("covariance is singular or not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },

    #[error("simulation diverged at t = {time} in replica {replica}")]
    Diverged { time: f64, replica: usize },

    #[error("MALA step-size tuning failed: acceptance rate {acceptance}")]
    Tuning { acceptance: f64 },

    #[error("inconclusive estimate for {what}: standard error {stderr:e} vs magnitude {magnitude:e}")]
    Inconclusive {
        what: String,
        stderr: f64,
        magnitude: f64,
    },

    #[error("ill-conditioned dictionary Gram matrix (condition number {condition:e})")]
    Dictionary { condition: f64 },

    #[error("prefactor integral diverges: {0}")]
    DivergentIntegral(String),
}
