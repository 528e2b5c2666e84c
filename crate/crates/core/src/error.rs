use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the physical formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid pulse schedule or integrator configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The moderate-population fixed-point solver did not converge.
    #[error("solver failed after {iterations} iterations (last residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    /// Least-squares fit did not converge; carries the best objective reached.
    #[error("fit did not converge after {iterations} iterations (best cost {best_cost:.6e})")]
    Convergence {
        iterations: usize,
        best_cost: f64,
        best_params: Vec<f64>,
    },

    /// Top Fock level population exceeded the leakage threshold.
    #[error("Fock truncation leakage {leakage:.3e} at n_fock = {n_fock}; increase n_fock")]
    Leakage { n_fock: usize, leakage: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
