use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A size, rate or tolerance argument is outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Enumeration or evaluation would exceed a configured cap.
    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    /// The process has no active cluster: no further event can be sampled.
    #[error("process stopped: no active cluster")]
    Stopped,

    /// Time stepping became unstable for the requested step size.
    #[error("integrator step-size error: {0}")]
    StepSize(String),

    /// Eigensolve did not converge within the iteration cap.
    #[error("eigensolve did not converge: residual_pi={residual_pi:.3e}, residual_h={residual_h:.3e}")]
    NonConvergence { residual_pi: f64, residual_h: f64 },

    /// A truncated tail bound is too large for the requested tolerance.
    #[error("tail bound {bound:.3e} exceeds tolerance {tol:.3e}; increase the cap")]
    TailBound { bound: f64, tol: f64 },

    /// A pathwise domination invariant failed; carries a minimal reproducer.
    #[error("coupling domination violated ({what}) at label '{label}' with seed {seed}: {params}")]
    DominationViolated {
        what: String,
        label: String,
        seed: u64,
        params: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
