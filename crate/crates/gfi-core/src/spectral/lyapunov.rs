//! Lyapunov drift witness: the bounded function `psi` with
//! `b psi <= L psi <= xi psi` and the polynomial envelope
//! `L V <= a V + zeta psi` for `V(n) = n^p`, evaluated with the exact
//! (untruncated) generator action on the closed forms.
//!
//! `psi(n) = A - (A - B) q^{n-1}` with `(A, B, q)` chosen so that the
//! leading drift coefficient `C_q^{A,B} gamma - theta` vanishes:
//! `C_q^{A,B} = 1 - (1 - B/A) S(q)` where
//! `S(q) = sum_j q^{j-1}/(j(j+1)) = (1 + (1/q - 1) ln(1-q)) / q`.

use serde::Serialize;

use super::{s, Scalar};
use crate::params::RateTriple;
use crate::{Error, Result};

/// Witness data: the function values, its defining parameters, and the
/// tightest drift constants found on `{1..N}`.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovWitness<F> {
    /// `psi` on `{1..N}`.
    pub psi: Vec<F>,
    /// Limit value `A = lim psi`.
    pub level_limit: f64,
    /// Start value `B = psi(1)`.
    pub level_start: f64,
    pub q: f64,
    /// Monomial exponent of the envelope `V`.
    pub p: f64,
    /// Envelope drift: `L V <= a V + zeta psi`.
    pub drift_a: f64,
    pub zeta: f64,
    /// Two-sided bound: `b psi <= L psi <= xi psi`.
    pub drift_b: f64,
    pub xi: f64,
    /// All three inequalities re-checked numerically on `{1..N}`.
    pub verified: bool,
}

/// `S(q)`, increasing from 1/2 to 1 on `(0, 1)`. The closed form
/// `(1 + (1/q - 1) ln(1-q)) / q` cancels catastrophically for small `q`,
/// so the series is summed directly below `q = 0.99`.
fn kernel_series(q: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0);
    if q > 0.99 {
        return (1.0 + (1.0 / q - 1.0) * (1.0 - q).ln()) / q;
    }
    let mut total = 0.0;
    let mut power = 1.0;
    for j in 1..1_000_000u64 {
        let term = power / (j * (j + 1)) as f64;
        total += term;
        if term < 1e-18 {
            break;
        }
        power *= q;
    }
    total
}

fn solve_kernel_series(target: f64) -> Result<f64> {
    if !(target > 0.5 && target < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel series target {target} outside (1/2, 1)"
        )));
    }
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kernel_series(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact generator action on an arbitrary closed-form function, without
/// truncating the growth term.
fn apply_generator_exact(rates: RateTriple, f: &dyn Fn(u32) -> f64, n: u32) -> f64 {
    let nf = n as f64;
    let mut v = rates.beta * nf * (f(n + 1) - f(n)) - rates.theta * nf * f(n);
    let mut frag = 0.0;
    for j in 1..n {
        let jf = j as f64;
        frag += (f(j) + f(n - j) - f(n)) / (jf * (jf + 1.0));
    }
    v += rates.gamma * nf * frag;
    v
}

/// Construct and verify the witness on `{1..N}` for the envelope
/// exponent `p >= 1`.
pub fn lyapunov_witness<F: Scalar>(
    rates: RateTriple,
    n: usize,
    p: f64,
) -> Result<LyapunovWitness<F>> {
    if n < 2 {
        return Err(Error::InvalidArgument("witness needs N >= 2".into()));
    }
    if p < 1.0 {
        return Err(Error::InvalidArgument("envelope exponent must satisfy p >= 1".into()));
    }
    let RateTriple { beta, theta, gamma } = rates;
    if gamma <= 0.0 || theta <= 0.0 {
        return Err(Error::InvalidArgument(
            "the drift construction needs theta > 0 and gamma > 0".into(),
        ));
    }

    // Choose (A, B, q) so C_q^{A,B} = theta / gamma, by cases on the sign
    // of gamma - theta.
    let (level_limit, level_start, q) = if (gamma - theta).abs() < 1e-14 {
        (1.0, 1.0, 0.5)
    } else if gamma > theta {
        // Need S(q) in (1 - theta/gamma, 1); aim at the midpoint.
        let target = 1.0 - 0.5 * theta / gamma;
        let q = solve_kernel_series(target.max(0.5 + 1e-9))?;
        let ratio = 1.0 - (1.0 - theta / gamma) / kernel_series(q);
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level solve failed: attempted (A, B, q) = (1, {ratio}, {q})"
            )));
        }
        (1.0, ratio, q)
    } else {
        let q = 0.5;
        let series = kernel_series(q);
        let a_level = series / (series + theta / gamma - 1.0);
        if !(a_level > 0.0 && a_level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "level solve failed: attempted (A, B, q) = ({a_level}, 1, {q})"
            )));
        }
        (a_level, 1.0, q)
    };

    let psi_f = move |m: u32| level_limit - (level_limit - level_start) * q.powi(m as i32 - 1);
    let v_f = move |m: u32| (m as f64).powf(p);

    let psi_vals: Vec<f64> = (1..=n as u32).map(psi_f).collect();
    let l_psi: Vec<f64> =
        (1..=n as u32).map(|m| apply_generator_exact(rates, &psi_f, m)).collect();
    let ratios: Vec<f64> = l_psi.iter().zip(&psi_vals).map(|(l, psi)| l / psi).collect();
    let drift_b = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let xi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let cap = (2f64.powf(p - 1.0) * p * beta - theta).min(drift_b);
    let drift_a = cap - (1e-6f64).max(0.01 * (1.0 + cap.abs()));
    let l_v: Vec<f64> = (1..=n as u32).map(|m| apply_generator_exact(rates, &v_f, m)).collect();
    let zeta = (1..=n as u32)
        .map(|m| (l_v[m as usize - 1] - drift_a * v_f(m)) / psi_f(m))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    // Re-check the three inequalities with a small float slack.
    let eps = 1e-9;
    let mut verified = drift_a < drift_b && level_start.min(level_limit) > 0.0;
    for m in 1..=n as u32 {
        let psi = psi_f(m);
        verified &= psi > 0.0 && psi <= 1.0 + eps;
        verified &= l_psi[m as usize - 1] >= drift_b * psi - eps;
        verified &= l_psi[m as usize - 1] <= xi * psi + eps;
        verified &= l_v[m as usize - 1] <= drift_a * v_f(m) + zeta * psi + eps.max(eps * v_f(m));
    }

    Ok(LyapunovWitness {
        psi: psi_vals.iter().map(|&x| s::<F>(x)).collect(),
        level_limit,
        level_start,
        q,
        p,
        drift_a,
        zeta,
        drift_b,
        xi,
        verified,
    })
}

/// Exact generator action on the constant function, used as an oracle in
/// tests: `L 1(n) = (gamma - theta) n - gamma`.
#[cfg(test)]
fn l_one(rates: RateTriple, n: u32) -> f64 {
    apply_generator_exact(rates, &|_| 1.0, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_series_range_and_monotonicity() {
        assert!((kernel_series(1e-9) - 0.5).abs() < 1e-6);
        assert!(kernel_series(1.0 - 1e-9) > 0.999);
        let mut prev = 0.0;
        for k in 1..100 {
            let v = kernel_series(k as f64 / 100.0);
            assert!(v > prev);
            prev = v;
        }
        // Direct summation oracle at q = 0.5.
        let direct: f64 = (1..200).map(|j| 0.5f64.powi(j - 1) / (j * (j + 1)) as f64).sum();
        assert!((kernel_series(0.5) - direct).abs() < 1e-12);
    }

    #[test]
    fn constant_function_oracle() {
        // Direct summation gives L1(n) = (gamma - theta) n - gamma.
        let rates = RateTriple { beta: 1.0, theta: 0.7, gamma: 1.9 };
        for n in 1..40 {
            let expect = (1.9 - 0.7) * n as f64 - 1.9;
            assert!((l_one(rates, n) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn equal_rates_case_is_flat() {
        let rates = RateTriple { beta: 1.0, theta: 1.3, gamma: 1.3 };
        let w: LyapunovWitness<f64> = lyapunov_witness(rates, 128, 1.0).unwrap();
        assert!(w.verified);
        assert!((w.level_limit - 1.0).abs() < 1e-15 && (w.level_start - 1.0).abs() < 1e-15);
        // L psi = L 1 = -theta everywhere, so b = xi = -theta.
        assert!((w.drift_b + 1.3).abs() < 1e-9);
        assert!((w.xi + 1.3).abs() < 1e-9);
        assert!(w.drift_a < w.drift_b);
    }

    #[test]
    fn unequal_rate_cases_verify() {
        for (theta, gamma) in [(0.5, 2.0), (2.0, 0.5)] {
            let rates = RateTriple { beta: 1.0, theta, gamma };
            let w: LyapunovWitness<f64> = lyapunov_witness(rates, 256, 2.0).unwrap();
            assert!(w.verified, "theta={theta}, gamma={gamma}");
            assert!(w.drift_a < w.drift_b);
            assert!(w.level_start > 0.0 && w.level_limit > 0.0);
            assert!(w.level_start.max(w.level_limit) <= 1.0);
            if gamma > theta {
                assert!(w.level_start < w.level_limit, "B < A when gamma > theta");
            } else {
                assert!(w.level_start > w.level_limit, "A < B when gamma < theta");
            }
            // The defining constraint C_q^{A,B} = theta / gamma.
            let c = 1.0 - (1.0 - w.level_start / w.level_limit) * kernel_series(w.q);
            assert!((c - theta / gamma).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_levels_force_equal_rates() {
        // C_q^{A,A} = 1 for every q, so the constraint C = theta/gamma
        // with A = B is only solvable at theta = gamma.
        for q in [0.1, 0.5, 0.9] {
            let c = 1.0 - (1.0 - 1.0) * kernel_series(q);
            assert_eq!(c, 1.0);
        }
    }
}
