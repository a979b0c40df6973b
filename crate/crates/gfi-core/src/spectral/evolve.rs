//! Semigroup evolution by classical fourth-order Runge-Kutta stepping.
//!
//! `evolve` advances a measure through the adjoint (left) action
//! `d/dt mu = mu L`, so `mu_t = delta_n M_t` when started from a point
//! mass; `evolve_function` advances a function through the right action
//! `d/dt f = L f`, giving `M_t f`. The two are adjoint-consistent up to
//! the integrator order.

use super::{s, Generator, Scalar};
use crate::{Error, Result};

/// Step size with a safety margin inside the RK4 stability region for the
/// given truncated generator.
pub fn default_dt<F: Scalar>(gen: &Generator<F>) -> f64 {
    let rho = gen.max_abs_diagonal().to_f64().unwrap_or(1.0).max(1e-12);
    // Gershgorin bounds the spectrum by twice the largest diagonal; keep
    // |dt * z| below ~2.4 against the 2.785 real-axis limit.
    1.2 / rho
}

fn check_dt<F: Scalar>(gen: &Generator<F>, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSize(format!("dt must be positive and finite, got {dt}")));
    }
    let rho = gen.max_abs_diagonal().to_f64().unwrap_or(f64::INFINITY);
    if dt * 2.0 * rho > 2.785 {
        return Err(Error::StepSize(format!(
            "dt = {dt:.3e} outside the stability bound {:.3e} for max rate {rho:.3e}",
            2.785 / (2.0 * rho)
        )));
    }
    Ok(())
}

fn rk4_step<F: Scalar>(state: &mut [F], dt: F, apply: impl Fn(&[F]) -> Vec<F>) {
    let k1 = apply(state);
    let half = dt / s::<F>(2.0);
    let mut tmp: Vec<F> = state.iter().zip(&k1).map(|(&y, &k)| y + half * k).collect();
    let k2 = apply(&tmp);
    for ((t, &y), &k) in tmp.iter_mut().zip(state.iter()).zip(&k2) {
        *t = y + half * k;
    }
    let k3 = apply(&tmp);
    for ((t, &y), &k) in tmp.iter_mut().zip(state.iter()).zip(&k3) {
        *t = y + dt * k;
    }
    let k4 = apply(&tmp);
    let sixth = dt / s::<F>(6.0);
    for (i, y) in state.iter_mut().enumerate() {
        *y = *y + sixth * (k1[i] + s::<F>(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
}

fn detect_instability<F: Scalar>(state: &[F]) -> Result<()> {
    let mut norm = F::zero();
    let mut min = F::zero();
    for &v in state {
        if !v.is_finite() {
            return Err(Error::StepSize("state left the finite range".into()));
        }
        norm = norm + v.abs();
        min = min.min(v);
    }
    if norm.to_f64().unwrap_or(f64::INFINITY) > 1e200 {
        return Err(Error::StepSize("state norm blew up".into()));
    }
    // Exact solutions stay nonnegative; tolerate integrator-level noise.
    if min < -s::<F>(1e-7) * norm.max(F::one()) {
        return Err(Error::StepSize(format!(
            "negative mass beyond tolerance: min = {min:?} at norm {norm:?}"
        )));
    }
    Ok(())
}

fn run<F: Scalar>(
    start: &[F],
    gen: &Generator<F>,
    t: f64,
    dt: f64,
    left: bool,
    mut on_node: impl FnMut(f64, &[F]),
) -> Result<Vec<F>> {
    check_dt(gen, dt)?;
    if t < 0.0 {
        return Err(Error::InvalidArgument("evolution time must be nonnegative".into()));
    }
    let mut state = start.to_vec();
    on_node(0.0, &state);
    if t == 0.0 {
        return Ok(state);
    }
    let steps = (t / dt).ceil() as usize;
    let dt_eff = t / steps as f64;
    let dt_f = s::<F>(dt_eff);
    for step in 1..=steps {
        if left {
            rk4_step(&mut state, dt_f, |v| gen.apply_left(v));
        } else {
            rk4_step(&mut state, dt_f, |v| gen.apply_right(v));
        }
        if step % 32 == 0 || step == steps {
            detect_instability(&state)?;
        }
        on_node(step as f64 * dt_eff, &state);
    }
    Ok(state)
}

/// Advance a measure: returns `mu_0 M_t` on the truncation.
pub fn evolve<F: Scalar>(mu0: &[F], gen: &Generator<F>, t: f64, dt: f64) -> Result<Vec<F>> {
    debug_assert_eq!(mu0.len(), gen.truncation());
    run(mu0, gen, t, dt, true, |_, _| {})
}

/// Advance a function: returns `M_t f` on the truncation.
pub fn evolve_function<F: Scalar>(f: &[F], gen: &Generator<F>, t: f64, dt: f64) -> Result<Vec<F>> {
    debug_assert_eq!(f.len(), gen.truncation());
    run(f, gen, t, dt, false, |_, _| {})
}

/// Evolution with states cached on an equispaced node grid, for
/// quadratures that reuse the semigroup at many intermediate times.
pub struct EvolveCache<F> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<F>>,
}

impl<F: Scalar> EvolveCache<F> {
    /// Evolve over `[0, t]` storing `nodes + 1` equispaced states
    /// (including both endpoints). `left` picks the adjoint action.
    pub fn build(
        start: &[F],
        gen: &Generator<F>,
        t: f64,
        dt: f64,
        nodes: usize,
        left: bool,
    ) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("need at least one quadrature node".into()));
        }
        // Snap the step so every node boundary is hit exactly.
        let node_len = t / nodes as f64;
        let sub = (node_len / dt).ceil().max(1.0) as usize;
        let dt_eff = node_len / sub as f64;
        let mut times = Vec::with_capacity(nodes + 1);
        let mut states = Vec::with_capacity(nodes + 1);
        let mut pending = start.to_vec();
        times.push(0.0);
        states.push(pending.clone());
        for k in 1..=nodes {
            pending = run(&pending, gen, node_len, dt_eff, left, |_, _| {})?;
            times.push(k as f64 * node_len);
            states.push(pending.clone());
        }
        Ok(Self { times, states })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::RateTriple;
    use crate::spectral::{build_generator, GeneratorVariant};

    fn yule_gen(n: usize) -> Generator<f64> {
        build_generator(RateTriple { beta: 1.0, theta: 0.0, gamma: 0.0 }, n, GeneratorVariant::Standard)
            .unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let g = yule_gen(16);
        let mut mu = vec![0.0; 16];
        mu[0] = 1.0;
        let out = evolve(&mu, &g, 0.0, default_dt(&g)).unwrap();
        assert_eq!(out, mu);
    }

    #[test]
    fn yule_mean_grows_exponentially() {
        // <delta_1 M_t, [x]> = e^{beta t} for the pure growth process;
        // the truncation tail at N = 512 is far below the tolerance.
        let n = 512;
        let g = yule_gen(n);
        let mut mu = vec![0.0; n];
        mu[0] = 1.0;
        let t = 3.0;
        let out = evolve(&mu, &g, t, default_dt(&g)).unwrap();
        let mean: f64 = out.iter().enumerate().map(|(i, &m)| (i + 1) as f64 * m).sum();
        assert!((mean - t.exp()).abs() < 1e-5 * t.exp(), "mean {mean} vs {}", t.exp());
    }

    #[test]
    fn adjoint_consistency_at_integrator_order() {
        let n = 64;
        let g = build_generator(
            RateTriple { beta: 1.0, theta: 0.5, gamma: 1.5 },
            n,
            GeneratorVariant::Standard,
        )
        .unwrap();
        let mut mu = vec![0.0; n];
        mu[2] = 1.0; // delta_3
        let f: Vec<f64> = (1..=n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let t = 1.0;
        let err_of = |dt: f64| {
            let left = evolve(&mu, &g, t, dt).unwrap();
            let right = evolve_function(&f, &g, t, dt).unwrap();
            let via_left: f64 = left.iter().zip(&f).map(|(&m, &v)| m * v).sum();
            (via_left - right[2]).abs()
        };
        let coarse = err_of(2e-3);
        let fine = err_of(1e-3);
        assert!(coarse < 1e-8, "coarse adjoint gap {coarse}");
        // Fourth-order decay, allowing generous slack around 2^4.
        assert!(fine < coarse / 6.0 || fine < 1e-14, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn polynomial_moment_envelope_holds() {
        // <delta_n M_t, [x^p]> <= e^{(2^{p-1} p beta - theta) t} n^p.
        let n = 256;
        let g = build_generator(
            RateTriple { beta: 1.0, theta: 0.5, gamma: 1.0 },
            n,
            GeneratorVariant::Standard,
        )
        .unwrap();
        let dt = default_dt(&g);
        for (n0, p, t) in [(1u32, 1.0f64, 1.0f64), (3, 2.0, 1.5), (2, 3.0, 0.5)] {
            let mut mu = vec![0.0; n];
            mu[n0 as usize - 1] = 1.0;
            let out = evolve(&mu, &g, t, dt).unwrap();
            let moment: f64 =
                out.iter().enumerate().map(|(i, &m)| m * ((i + 1) as f64).powf(p)).sum();
            let bound = ((2f64.powf(p - 1.0) * p * 1.0 - 0.5) * t).exp() * (n0 as f64).powf(p);
            assert!(moment <= bound * (1.0 + 1e-9), "p={p}: {moment} > {bound}");
        }
    }

    #[test]
    fn rejects_unstable_step() {
        let g = yule_gen(64);
        let mu = vec![1.0 / 64.0; 64];
        assert!(matches!(evolve(&mu, &g, 1.0, 10.0), Err(Error::StepSize(_))));
    }

    #[test]
    fn cache_nodes_match_direct_evolution() {
        let n = 32;
        let g = build_generator(
            RateTriple { beta: 0.8, theta: 0.3, gamma: 1.1 },
            n,
            GeneratorVariant::Standard,
        )
        .unwrap();
        let mut mu = vec![0.0f64; n];
        mu[0] = 1.0;
        let dt = default_dt(&g);
        let cache = EvolveCache::build(&mu, &g, 2.0, dt, 8, true).unwrap();
        assert_eq!(cache.states.len(), 9);
        let direct = evolve(&mu, &g, 1.0, dt).unwrap();
        let cached = &cache.states[4];
        for i in 0..n {
            assert!((direct[i] - cached[i]).abs() < 1e-9);
        }
    }
}
