//! Second moments through the many-to-two decomposition and the expected
//! inactive-cluster count, both by trapezoidal quadrature over cached
//! semigroup evaluations.

use super::evolve::EvolveCache;
use super::{s, su, Generator, Scalar};
use crate::testfn::TestFunction;
use crate::{Error, Result};

impl<F: Scalar> Generator<F> {
    /// Branching gain `G(n) = sum_{j=1}^{n-1} kappa(n, j) phi(j) phi(n-j)`
    /// with the fragmentation kernel `kappa(n, j) = gamma n / (j (j+1))`.
    pub fn pair_fragmentation_gain(&self, phi: &[F]) -> Vec<F> {
        let n = self.truncation();
        debug_assert_eq!(phi.len(), n);
        let gamma: F = s(self.rates().gamma);
        let mut out = vec![F::zero(); n];
        for m in 2..=n {
            let mut acc = F::zero();
            for j in 1..m {
                let jf = su::<F>(j);
                acc = acc + phi[j - 1] * phi[m - j - 1] / (jf * (jf + F::one()));
            }
            out[m - 1] = gamma * su::<F>(m) * acc;
        }
        out
    }
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    step * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

/// Trapezoid with a Richardson error estimate from the half-resolution
/// grid; `values` must have an even number of intervals.
fn trapezoid_with_error(values: &[f64], step: f64) -> (f64, f64) {
    let fine = trapezoid(values, step);
    let coarse_values: Vec<f64> = values.iter().step_by(2).copied().collect();
    let coarse = trapezoid(&coarse_values, 2.0 * step);
    (fine, (fine - coarse).abs() / 3.0)
}

/// `E_{delta_x}[<X_t, f>^2]` through the many-to-two identity:
///
/// ```text
/// M_t(f^2)(x) + 2 int_0^t sum_n M_s(x, n)
///     sum_{j<n} kappa(n, j) M_{t-s} f(j) M_{t-s} f(n-j) ds
/// ```
///
/// The `s`-grid is aligned with the cached evolution nodes so each
/// semigroup trajectory is computed once. A quadrature error estimate
/// above `tol` triggers one refinement, then an error.
pub fn second_moment<F: Scalar>(
    f: &TestFunction,
    t: f64,
    x: u32,
    gen: &Generator<F>,
    dt: f64,
    tol: f64,
) -> Result<f64> {
    let n = gen.truncation();
    if x == 0 || x as usize > n {
        return Err(Error::InvalidArgument(format!("initial size {x} outside 1..={n}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument("time must be nonnegative".into()));
    }
    if t == 0.0 {
        return Ok(f.eval(x).powi(2));
    }
    let fvec: Vec<F> = (1..=n as u32).map(|m| s(f.eval(m))).collect();
    let f2vec: Vec<F> = (1..=n as u32).map(|m| s(f.eval(m).powi(2))).collect();
    let mut delta = vec![F::zero(); n];
    delta[x as usize - 1] = F::one();

    let mut nodes = 96usize;
    let max_attempts = 9;
    for attempt in 0..max_attempts {
        let mu = EvolveCache::build(&delta, gen, t, dt, nodes, true)?;
        let phi = EvolveCache::build(&fvec, gen, t, dt, nodes, false)?;
        let mut integrand = Vec::with_capacity(nodes + 1);
        for i in 0..=nodes {
            let gain = gen.pair_fragmentation_gain(&phi.states[nodes - i]);
            let v: F = mu.states[i].iter().zip(&gain).map(|(&m, &g)| m * g).sum();
            integrand.push(v.to_f64().unwrap_or(f64::NAN));
        }
        let (integral, err) = trapezoid_with_error(&integrand, t / nodes as f64);
        if err <= tol || attempt == max_attempts - 1 {
            if err > tol {
                return Err(Error::StepSize(format!(
                    "quadrature error estimate {err:.3e} above tolerance {tol:.3e}"
                )));
            }
            let m_f2 = super::evolve::evolve_function(&f2vec, gen, t, dt)?;
            let first = m_f2[x as usize - 1].to_f64().unwrap_or(f64::NAN);
            return Ok(first + 2.0 * integral);
        }
        nodes *= 2;
    }
    unreachable!("refinement loop returns");
}

/// Expected inactive-cluster count from a single initial cluster of size
/// one: `E|Y_t| = theta int_0^t (M_s [x])(1) ds`.
pub fn mean_inactive_count<F: Scalar>(gen: &Generator<F>, t: f64, dt: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidArgument("time must be nonnegative".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let n = gen.truncation();
    let identity: Vec<F> = (1..=n).map(|m| su::<F>(m)).collect();
    let mut nodes = 128usize;
    let max_attempts = 9;
    for attempt in 0..max_attempts {
        let cache = EvolveCache::build(&identity, gen, t, dt, nodes, false)?;
        let values: Vec<f64> =
            cache.states.iter().map(|st| st[0].to_f64().unwrap_or(f64::NAN)).collect();
        let (integral, err) = trapezoid_with_error(&values, t / nodes as f64);
        let scale = integral.abs().max(1.0);
        if err <= 1e-7 * scale || attempt == max_attempts - 1 {
            if err > 1e-6 * scale {
                return Err(Error::StepSize(format!(
                    "quadrature error estimate {err:.3e} too large"
                )));
            }
            return Ok(gen.rates().theta * integral);
        }
        nodes *= 2;
    }
    unreachable!("refinement loop returns");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::RateTriple;
    use crate::spectral::{build_generator, default_dt, GeneratorVariant};

    fn gen(beta: f64, theta: f64, gamma: f64, n: usize) -> Generator<f64> {
        build_generator(RateTriple { beta, theta, gamma }, n, GeneratorVariant::Standard).unwrap()
    }

    #[test]
    fn zero_function_and_zero_time() {
        let g = gen(1.0, 0.4, 4.0, 64);
        let dt = default_dt(&g);
        let ind = TestFunction::indicator(9999).unwrap(); // zero on the truncation
        let v = second_moment(&ind, 1.0, 1, &g, dt, 1e-9).unwrap();
        assert!(v.abs() < 1e-12);
        let one = TestFunction::one();
        assert_eq!(second_moment(&one, 0.0, 3, &g, dt, 1e-9).unwrap(), 1.0);
        let sq = TestFunction::monomial(2.0).unwrap();
        assert_eq!(second_moment(&sq, 0.0, 3, &g, dt, 1e-9).unwrap(), 81.0);
    }

    #[test]
    fn yule_second_moment_closed_form() {
        // Pure growth: <X_t, 1> = 1 always, so the second moment is 1.
        let g = gen(1.0, 0.0, 0.0, 128);
        let dt = default_dt(&g);
        let v = second_moment(&TestFunction::one(), 1.5, 1, &g, dt, 1e-8).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn inactive_count_zero_at_zero_and_grows() {
        let g = gen(1.0, 1.0, 1.0, 128);
        let dt = default_dt(&g);
        assert_eq!(mean_inactive_count(&g, 0.0, dt).unwrap(), 0.0);
        let early = mean_inactive_count(&g, 0.5, dt).unwrap();
        let late = mean_inactive_count(&g, 2.0, dt).unwrap();
        assert!(early > 0.0 && late > early);
    }

    #[test]
    fn supercritical_inactive_count_grows_at_malthusian_rate() {
        // log E|Y_t| / t -> lambda when lambda > 0.
        let rates = RateTriple { beta: 1.0, theta: 0.4, gamma: 4.0 };
        let g: Generator<f64> = build_generator(rates, 256, GeneratorVariant::Standard).unwrap();
        let dt = default_dt(&g);
        let opts = crate::spectral::PerronOptions::default();
        let lambda = crate::spectral::perron_triple::<f64>(
            rates,
            GeneratorVariant::Standard,
            256,
            &opts,
        )
        .unwrap()
        .lambda;
        let (t1, t2) = (10.0, 14.0);
        let y1 = mean_inactive_count(&g, t1, dt).unwrap();
        let y2 = mean_inactive_count(&g, t2, dt).unwrap();
        let slope = (y2.ln() - y1.ln()) / (t2 - t1);
        assert!((slope - lambda).abs() < 5e-3, "slope {slope} vs lambda {lambda}");
    }

    #[test]
    fn heavy_isolation_limits_to_one_inactive_cluster() {
        // With theta >> beta, gamma the initial cluster is isolated before
        // anything else happens, so E|Y_inf| -> 1.
        let g = gen(1.0, 60.0, 1.0, 64);
        let dt = default_dt(&g);
        let v = mean_inactive_count(&g, 4.0, dt).unwrap();
        assert!((v - 1.0).abs() < 0.05, "got {v}");
    }
}
