use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which flavour of the process is being run.
///
/// * `Standard` — isolation clock on every vertex (rate `theta * n` for a
///   cluster of `n` vertices).
/// * `ModifiedEdgeIsolation` — isolation clock on every open edge (rate
///   `theta * (n - 1)`); this is the variant that admits the monotone
///   coupling machinery in [`crate::coupling`].
/// * `GrowthOnly` — pure Yule growth, `theta = gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Standard,
    ModifiedEdgeIsolation,
    GrowthOnly,
}

impl Variant {
    /// Isolation rate of a single active cluster of size `n`.
    pub fn isolation_rate(self, theta: f64, n: u32) -> f64 {
        match self {
            Variant::Standard => theta * n as f64,
            Variant::ModifiedEdgeIsolation => theta * (n.saturating_sub(1)) as f64,
            Variant::GrowthOnly => 0.0,
        }
    }
}

/// Simulation parameters: the rate triple plus the process variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
    pub variant: Variant,
}

impl Params {
    /// Validated constructor. Standard and modified variants require all
    /// three rates strictly positive; growth-only forces `theta = gamma = 0`.
    pub fn new(beta: f64, theta: f64, gamma: f64, variant: Variant) -> Result<Self> {
        let finite = beta.is_finite() && theta.is_finite() && gamma.is_finite();
        if !finite {
            return Err(Error::InvalidArgument("rates must be finite".into()));
        }
        match variant {
            Variant::Standard | Variant::ModifiedEdgeIsolation => {
                if beta <= 0.0 || theta <= 0.0 || gamma <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "rates must be strictly positive, got ({beta}, {theta}, {gamma})"
                    )));
                }
            }
            Variant::GrowthOnly => {
                if beta <= 0.0 {
                    return Err(Error::InvalidArgument("beta must be strictly positive".into()));
                }
                if theta != 0.0 || gamma != 0.0 {
                    return Err(Error::InvalidArgument(
                        "growth-only variant forces theta = gamma = 0".into(),
                    ));
                }
            }
        }
        Ok(Self { beta, theta, gamma, variant })
    }

    pub fn standard(beta: f64, theta: f64, gamma: f64) -> Result<Self> {
        Self::new(beta, theta, gamma, Variant::Standard)
    }

    pub fn modified(beta: f64, theta: f64, gamma: f64) -> Result<Self> {
        Self::new(beta, theta, gamma, Variant::ModifiedEdgeIsolation)
    }

    pub fn growth_only(beta: f64) -> Result<Self> {
        Self::new(beta, 0.0, 0.0, Variant::GrowthOnly)
    }

    /// Total event rate of one active cluster of size `n`.
    pub fn cluster_rate(&self, n: u32) -> f64 {
        let n_f = n as f64;
        let edges = (n.saturating_sub(1)) as f64;
        self.beta * n_f + self.variant.isolation_rate(self.theta, n) + self.gamma * edges
    }

    /// The rate triple, with the variant dropped (spectral analysis keyes
    /// the variant separately).
    pub fn rates(&self) -> RateTriple {
        RateTriple { beta: self.beta, theta: self.theta, gamma: self.gamma }
    }
}

/// A bare rate triple for the first-moment analysis.
///
/// Unlike [`Params`], `theta = 0` or `gamma = 0` are accepted here: the
/// generator is still well defined and the degenerate rates are useful for
/// analysis-only runs (e.g. pure Yule benchmarks).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTriple {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl RateTriple {
    pub fn new(beta: f64, theta: f64, gamma: f64) -> Result<Self> {
        if !(beta.is_finite() && theta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument("rates must be finite".into()));
        }
        if beta <= 0.0 || theta < 0.0 || gamma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "need beta > 0, theta >= 0, gamma >= 0, got ({beta}, {theta}, {gamma})"
            )));
        }
        Ok(Self { beta, theta, gamma })
    }

    pub fn scaled(&self, rho: f64) -> Self {
        Self { beta: self.beta * rho, theta: self.theta * rho, gamma: self.gamma * rho }
    }
}
