//! Growth-fragmentation-isolation (GFI) branching dynamics on random
//! recursive trees.
//!
//! The crate has three layers:
//!
//! * exact event-driven simulators — [`forest`] keeps full tree shapes and
//!   the cluster genealogy, [`sizes`] keeps only the size histograms and is
//!   the fast path for Monte Carlo at scale;
//! * deterministic first-moment numerics in [`spectral`] — truncated
//!   generator matrices, semigroup evolution, Perron eigenelements, the
//!   Malthusian exponent and the critical fragmentation rate;
//! * statistical confrontation of the two in [`estimators`], [`coupling`]
//!   and [`verification`].
//!
//! The spectral layer is generic over the scalar type through
//! [`spectral::Scalar`]; the simulators and statistics work in `f64`
//! (event times are exponential variates drawn from an `f64` generator).
//! Concrete `f64` aliases for the spectral types live at the crate root.

pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod events;
pub mod export;
pub mod forest;
pub mod params;
pub mod rrt;
pub mod seeds;
pub mod sizes;
pub mod spectral;
pub mod stats;
pub mod testfn;
pub mod verification;

pub use error::Error;
pub use params::{Params, RateTriple, Variant};
pub use rrt::{RecursiveTree, SplitOutcome};

/// A `Result` with the crate error type.
pub type Result<T> = std::result::Result<T, Error>;

/// Truncated first-moment generator over `f64` entries.
pub type Generator = spectral::Generator<f64>;
/// Perron eigenelements `(lambda, pi, h)` over `f64`.
pub type PerronTriple = spectral::PerronTriple<f64>;
/// Lyapunov drift witness over `f64`.
pub type LyapunovWitness = spectral::LyapunovWitness<f64>;
