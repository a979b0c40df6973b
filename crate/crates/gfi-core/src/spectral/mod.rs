//! First-moment analysis of the size process: truncated generator
//! matrices, semigroup evolution by Runge-Kutta time stepping, Perron
//! eigenelements, the Malthusian exponent, phase surfaces and the
//! second-moment (many-to-two) quadrature.
//!
//! Everything here is generic over the scalar type through [`Scalar`];
//! `f64` aliases live at the crate root.

mod evolve;
mod lyapunov;
mod moments;
mod perron;
mod phase;

pub use evolve::{default_dt, evolve, evolve_function, EvolveCache};
pub use lyapunov::{lyapunov_witness, LyapunovWitness};
pub use moments::{mean_inactive_count, second_moment};
pub use perron::{malthusian_exponent, perron_triple, MalthusianResult, PerronDiagnostics, PerronOptions, PerronTriple};
pub use phase::{critical_gamma, phase_surface, CriticalGamma, PhaseCell, PhaseSurface};

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::params::RateTriple;
use crate::{Error, Result};

/// Scalar type the spectral layer is generic over (`f32`, `f64`, ...).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + fmt::Debug + fmt::Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + fmt::Debug + fmt::Display + Send + Sync + 'static
{
}

pub(crate) fn s<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 representable in scalar type")
}

pub(crate) fn su<F: Scalar>(n: usize) -> F {
    F::from_usize(n).expect("usize representable in scalar type")
}

/// Which first-moment generator is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorVariant {
    /// Per-vertex isolation at rate `theta n`.
    Standard,
    /// Per-edge isolation at rate `theta (n-1)`; equals the standard
    /// generator plus `theta` times the identity.
    ModifiedEdgeIsolation,
    /// Fragmentation by vertex removal; equals the standard generator
    /// minus `gamma` times the identity.
    VertexRemoval,
}

impl GeneratorVariant {
    /// Diagonal offset relative to the standard generator.
    fn diagonal_shift<F: Scalar>(self, rates: RateTriple) -> F {
        match self {
            GeneratorVariant::Standard => F::zero(),
            GeneratorVariant::ModifiedEdgeIsolation => s(rates.theta),
            GeneratorVariant::VertexRemoval => -s::<F>(rates.gamma),
        }
    }
}

/// Truncated first-moment generator on sizes `{1..N}`.
///
/// The action on a function `f` is
///
/// ```text
/// (L f)(n) = beta n (f(n+1) - f(n)) - theta n f(n)
///          + sum_{j=1}^{n-1} gamma n / (j (j+1)) (f(j) + f(n-j) - f(n))
/// ```
///
/// truncated so that the growth flux `beta N` out of state `N` is dropped
/// (the outflow stays on the diagonal, the target lies outside), which
/// keeps the operator sub-conservative. Entries are never materialized as
/// a dense matrix here; both actions run in `O(N^2)` time and `O(N)`
/// space. Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct Generator<F> {
    n: usize,
    beta: F,
    gamma: F,
    variant: GeneratorVariant,
    rates: RateTriple,
    /// `1 / (j (j+1))` for `j = 1..=n`.
    kernel: Vec<F>,
    /// Diagonal entries including the variant shift.
    diag: Vec<F>,
}

/// Build the truncated generator; `N >= 2` required.
pub fn build_generator<F: Scalar>(
    rates: RateTriple,
    n: usize,
    variant: GeneratorVariant,
) -> Result<Generator<F>> {
    Generator::new(rates, n, variant)
}

impl<F: Scalar> Generator<F> {
    pub fn new(rates: RateTriple, n: usize, variant: GeneratorVariant) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("truncation must be >= 2, got {n}")));
        }
        RateTriple::new(rates.beta, rates.theta, rates.gamma)?;
        let beta: F = s(rates.beta);
        let theta: F = s(rates.theta);
        let gamma: F = s(rates.gamma);
        let kernel: Vec<F> =
            (1..=n).map(|j| F::one() / (su::<F>(j) * su::<F>(j + 1))).collect();
        let shift = variant.diagonal_shift::<F>(rates);
        let diag: Vec<F> = (1..=n)
            .map(|m| {
                let mf = su::<F>(m);
                let edges = su::<F>(m - 1);
                -(beta + theta) * mf - gamma * edges + shift
            })
            .collect();
        Ok(Self { n, beta, gamma, variant, rates, kernel, diag })
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> GeneratorVariant {
        self.variant
    }

    pub fn rates(&self) -> RateTriple {
        self.rates
    }

    /// Largest absolute diagonal entry, a proxy for the spectral radius.
    pub fn max_abs_diagonal(&self) -> F {
        self.diag.iter().fold(F::zero(), |acc, d| acc.max(d.abs()))
    }

    /// Matrix entry `L[row][col]` with 1-based states.
    pub fn entry(&self, row: usize, col: usize) -> F {
        debug_assert!(row >= 1 && row <= self.n && col >= 1 && col <= self.n);
        if col == row {
            self.diag[row - 1]
        } else if col == row + 1 {
            self.beta * su(row)
        } else if col < row {
            let j = col;
            let k = row - col;
            self.gamma * su::<F>(row) * (self.kernel[j - 1] + self.kernel[k - 1])
        } else {
            F::zero()
        }
    }

    /// Right action `L f` on a function vector indexed by size - 1.
    pub fn apply_right(&self, f: &[F]) -> Vec<F> {
        debug_assert_eq!(f.len(), self.n);
        let mut out = vec![F::zero(); self.n];
        // Prefix sums of f(j) / (j (j+1)).
        let mut prefix = F::zero();
        for n in 1..=self.n {
            let mut v = self.diag[n - 1] * f[n - 1];
            if n < self.n {
                v = v + self.beta * su::<F>(n) * f[n];
            }
            if n >= 2 {
                let mut conv = F::zero();
                for j in 1..n {
                    conv = conv + self.kernel[j - 1] * f[n - j - 1];
                }
                v = v + self.gamma * su::<F>(n) * (prefix + conv);
            }
            prefix = prefix + self.kernel[n - 1] * f[n - 1];
            out[n - 1] = v;
        }
        out
    }

    /// Left (adjoint) action `mu L` on a measure vector.
    pub fn apply_left(&self, mu: &[F]) -> Vec<F> {
        debug_assert_eq!(mu.len(), self.n);
        let mut out = vec![F::zero(); self.n];
        // Suffix sums of gamma n mu(n).
        let mut suffix = vec![F::zero(); self.n + 1];
        for n in (1..=self.n).rev() {
            suffix[n - 1] = suffix[n] + self.gamma * su::<F>(n) * mu[n - 1];
        }
        for m in 1..=self.n {
            let mut v = self.diag[m - 1] * mu[m - 1];
            if m >= 2 {
                v = v + self.beta * su::<F>(m - 1) * mu[m - 2];
            }
            // Fragmentation gains from every larger size.
            let mut conv = F::zero();
            for j in 1..=(self.n - m) {
                conv = conv + self.kernel[j - 1] * self.gamma * su::<F>(m + j) * mu[m + j - 1];
            }
            v = v + self.kernel[m - 1] * suffix[m] + conv;
            out[m - 1] = v;
        }
        out
    }

    /// Dense row-major materialization of `L^T - sigma I` (upper
    /// Hessenberg), used by the inverse-iteration refinement.
    pub(crate) fn transpose_shifted_dense(&self, sigma: F) -> Vec<F> {
        let n = self.n;
        let mut a = vec![F::zero(); n * n];
        for row in 1..=n {
            a[(row - 1) * n + (row - 1)] = self.diag[row - 1] - sigma;
            // Growth superdiagonal of L becomes the subdiagonal here.
            if row < n {
                a[row * n + (row - 1)] = self.beta * su::<F>(row);
            }
            // Fragmentation entries L[row][col] for col < row land in the
            // strict upper triangle.
            for col in 1..row {
                let k = row - col;
                a[(col - 1) * n + (row - 1)] =
                    self.gamma * su::<F>(row) * (self.kernel[col - 1] + self.kernel[k - 1]);
            }
        }
        a
    }
}

/// Size-biased version of a probability vector: `nu(n) ~ n pi(n)`.
pub fn size_biased<F: Scalar>(pi: &[F]) -> Result<Vec<F>> {
    let total: F = pi.iter().enumerate().map(|(i, &p)| su::<F>(i + 1) * p).sum();
    if total <= F::zero() {
        return Err(Error::InvalidArgument("size-biasing needs a non-zero measure".into()));
    }
    Ok(pi.iter().enumerate().map(|(i, &p)| su::<F>(i + 1) * p / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rates(beta: f64, theta: f64, gamma: f64) -> RateTriple {
        RateTriple { beta, theta, gamma }
    }

    #[test]
    fn standard_rows_match_closed_form() {
        let g: Generator<f64> =
            build_generator(rates(1.0, 2.0, 3.0), 8, GeneratorVariant::Standard).unwrap();
        // Row 1: +beta to column 2, diagonal -(beta + theta).
        assert_eq!(g.entry(1, 2), 1.0);
        assert_eq!(g.entry(1, 1), -3.0);
        // Row 2: +2 beta to column 3, +2 gamma to column 1,
        // diagonal -(2 beta + 2 theta + gamma).
        assert_eq!(g.entry(2, 3), 2.0);
        assert_eq!(g.entry(2, 1), 2.0 * 3.0);
        assert_eq!(g.entry(2, 2), -(2.0 + 4.0 + 3.0));
        // Fragmentation gain accumulates both child positions.
        // Row 4, col 2: gamma*4*(1/(2*3) + 1/(2*3)).
        assert!((g.entry(4, 2) - 3.0 * 4.0 * (2.0 / 6.0)).abs() < 1e-12);
        assert!(build_generator::<f64>(rates(1.0, 1.0, 1.0), 1, GeneratorVariant::Standard)
            .is_err());
    }

    #[test]
    fn variant_identity_shifts() {
        let n = 12;
        let base: Generator<f64> =
            build_generator(rates(1.3, 0.7, 2.1), n, GeneratorVariant::Standard).unwrap();
        let modified: Generator<f64> =
            build_generator(rates(1.3, 0.7, 2.1), n, GeneratorVariant::ModifiedEdgeIsolation)
                .unwrap();
        let vertex: Generator<f64> =
            build_generator(rates(1.3, 0.7, 2.1), n, GeneratorVariant::VertexRemoval).unwrap();
        for row in 1..=n {
            for col in 1..=n {
                let b = base.entry(row, col);
                let shift = if row == col { 1.0 } else { 0.0 };
                // Per-edge isolation removes one theta per cluster:
                // modified = standard + theta * Id.
                assert!((modified.entry(row, col) - (b + 0.7 * shift)).abs() < 1e-12);
                // Vertex removal adds one gamma per cluster:
                // vertex = standard - gamma * Id.
                assert!((vertex.entry(row, col) - (b - 2.1 * shift)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn actions_match_entry_matrix() {
        let n = 24;
        let g: Generator<f64> =
            build_generator(rates(0.9, 1.1, 1.7), n, GeneratorVariant::Standard).unwrap();
        let f: Vec<f64> = (1..=n).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let right = g.apply_right(&f);
        let left = g.apply_left(&f);
        for i in 1..=n {
            let mut r = 0.0;
            let mut l = 0.0;
            for j in 1..=n {
                r += g.entry(i, j) * f[j - 1];
                l += f[j - 1] * g.entry(j, i);
            }
            assert!((right[i - 1] - r).abs() < 1e-9, "right row {i}");
            assert!((left[i - 1] - l).abs() < 1e-9, "left col {i}");
        }
    }

    #[test]
    fn constant_function_action() {
        // L 1(n) = (gamma - theta) n - gamma for n < N.
        let n = 32;
        let g: Generator<f64> =
            build_generator(rates(1.0, 0.5, 2.0), n, GeneratorVariant::Standard).unwrap();
        let ones = vec![1.0; n];
        let out = g.apply_right(&ones);
        for m in 1..n {
            let expect = (2.0 - 0.5) * m as f64 - 2.0;
            assert!((out[m - 1] - expect).abs() < 1e-10, "m={m}");
        }
        // Boundary row misses the growth gain beta N.
        let expect_last = (2.0 - 0.5) * n as f64 - 2.0 - 1.0 * n as f64;
        assert!((out[n - 1] - expect_last).abs() < 1e-10);
    }

    #[test]
    fn adjoint_column_sums_reproduce_outflow() {
        // Column sums of L equal the net mass production rate of each
        // state: growth conserves clusters, fragmentation adds one,
        // isolation removes one, so sum_m L[n][m] = gamma (n-1) - theta n
        // for interior n.
        let n = 16;
        let g: Generator<f64> =
            build_generator(rates(1.0, 2.0, 3.0), n, GeneratorVariant::Standard).unwrap();
        for row in 1..n {
            let total: f64 = (1..=n).map(|col| g.entry(row, col)).sum();
            let expect = 3.0 * (row as f64 - 1.0) - 2.0 * row as f64;
            assert!((total - expect).abs() < 1e-10, "row {row}: {total} vs {expect}");
        }
    }

    #[test]
    fn size_biased_examples() {
        let pi = vec![1.0, 0.0];
        assert_eq!(size_biased(&pi).unwrap(), vec![1.0, 0.0]);
        let pi = vec![0.5, 0.5];
        let sb = size_biased(&pi).unwrap();
        assert!((sb[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((sb[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((sb.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(size_biased(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn generic_scalar_f32_agrees_with_f64() {
        let g32: Generator<f32> =
            build_generator(rates(1.0, 1.0, 1.0), 8, GeneratorVariant::Standard).unwrap();
        let g64: Generator<f64> =
            build_generator(rates(1.0, 1.0, 1.0), 8, GeneratorVariant::Standard).unwrap();
        for row in 1..=8 {
            for col in 1..=8 {
                assert!((g32.entry(row, col) as f64 - g64.entry(row, col)).abs() < 1e-5);
            }
        }
    }
}
