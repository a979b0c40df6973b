//! Perron eigenelements of the truncated generator.
//!
//! The truncated operator shifted by `c = max |diagonal| + 1` is an
//! irreducible nonnegative matrix with positive diagonal, so its dominant
//! eigenvalue is simple and the left/right Perron vectors are positive.
//! A coarse two-sided power iteration localizes the root (and yields a
//! spectral-gap estimate from its contraction ratio); a few inverse
//! iterations with an upper-Hessenberg LU of `L^T - sigma I` then polish
//! both vectors to near machine precision. The root is cross-validated
//! against the log-growth of `<delta_1 M_t, 1>` from the time stepper.

use serde::Serialize;

use super::evolve::default_dt;
use super::{s, su, Generator, GeneratorVariant, Scalar};
use crate::params::RateTriple;
use crate::{Error, Result};

/// Tunables for the eigensolve.
#[derive(Debug, Clone)]
pub struct PerronOptions {
    /// Target for both eigen-residuals on the truncation interior.
    pub residual_tol: f64,
    /// Truncation agreement target `|lambda_N - lambda_2N|`.
    pub lambda_tol: f64,
    /// Starting truncation for refinement sweeps.
    pub initial_n: usize,
    /// Hard cap on the truncation.
    pub max_n: usize,
    /// Tail-mass threshold that triggers auto-escalation of `N`.
    pub tail_tol: f64,
    /// Iteration cap for the coarse power phase.
    pub coarse_iters: usize,
    /// Cross-validate against the finite-difference log-slope.
    pub fdm_check: bool,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-8,
            lambda_tol: 1e-6,
            initial_n: 256,
            max_n: 4096,
            tail_tol: 1e-8,
            coarse_iters: 160,
            fdm_check: false,
        }
    }
}

/// Convergence and truncation diagnostics attached to a solve.
#[derive(Debug, Clone, Serialize)]
pub struct PerronDiagnostics {
    pub truncation: usize,
    /// `sum_{n > 3N/4} pi(n)`.
    pub tail_mass: f64,
    /// `|lambda_N - lambda_{N/2}|`.
    pub lambda_half_gap: f64,
    /// `|| pi L - lambda pi ||_1` on the interior.
    pub residual_pi: f64,
    /// `|| L h - lambda h ||_inf` on the interior.
    pub residual_h: f64,
    pub power_iterations: usize,
    pub refine_iterations: usize,
    /// Log-slope of `<delta_1 M_t, 1>` when the cross-check ran.
    pub fdm_lambda: Option<f64>,
    /// Whether the cross-check agreed within `10 * lambda_tol`.
    pub fdm_agrees: Option<bool>,
}

/// Perron root and normalized eigenvectors: `sum pi = sum pi h = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct PerronTriple<F> {
    pub lambda: F,
    pub pi: Vec<F>,
    pub h: Vec<F>,
    /// Empirical spectral-gap estimate (decay rate towards the Perron
    /// projection); zero when the coarse phase could not resolve it.
    pub gap_estimate: F,
    pub diagnostics: PerronDiagnostics,
}

impl<F: Scalar> PerronTriple<F> {
    /// `h` extended beyond the truncation by its boundary value.
    pub fn h_at(&self, size: u32) -> F {
        let idx = (size as usize).saturating_sub(1);
        *self.h.get(idx).unwrap_or_else(|| self.h.last().expect("non-empty h"))
    }

    /// Number of interior indices: the dropped growth flux leaves a
    /// boundary layer in `h` near the truncation edge, so shape
    /// statements are measured away from it (same convention as the
    /// residuals).
    pub fn interior_len(&self) -> usize {
        let n = self.h.len();
        n - (n / 8).max(2)
    }

    pub fn pi_f64(&self) -> Vec<f64> {
        self.pi.iter().map(|v| v.to_f64().unwrap_or(0.0)).collect()
    }
}

/// LU factorization of an upper-Hessenberg matrix with partial pivoting
/// restricted to adjacent rows; solves both `A x = b` and `A^T x = b`.
struct HessenbergLu<F> {
    n: usize,
    /// Row-major storage: `U` on and above the diagonal, elimination
    /// multipliers on the subdiagonal slots.
    a: Vec<F>,
    swaps: Vec<bool>,
}

impl<F: Scalar> HessenbergLu<F> {
    fn factorize(mut a: Vec<F>, n: usize) -> Self {
        let tiny = s::<F>(1e-307);
        let mut swaps = vec![false; n.saturating_sub(1)];
        for k in 0..n - 1 {
            if a[(k + 1) * n + k].abs() > a[k * n + k].abs() {
                swaps[k] = true;
                for j in k..n {
                    a.swap(k * n + j, (k + 1) * n + j);
                }
            }
            let mut pivot = a[k * n + k];
            if pivot.abs() < tiny {
                pivot = if pivot < F::zero() { -tiny } else { tiny };
                a[k * n + k] = pivot;
            }
            let m = a[(k + 1) * n + k] / pivot;
            a[(k + 1) * n + k] = m;
            for j in k + 1..n {
                a[(k + 1) * n + j] = a[(k + 1) * n + j] - m * a[k * n + j];
            }
        }
        let last = (n - 1) * n + (n - 1);
        if a[last].abs() < tiny {
            a[last] = if a[last] < F::zero() { -tiny } else { tiny };
        }
        Self { n, a, swaps }
    }

    /// Solve `A x = b` in place.
    fn solve(&self, b: &mut [F]) {
        let n = self.n;
        for k in 0..n - 1 {
            if self.swaps[k] {
                b.swap(k, k + 1);
            }
            let m = self.a[(k + 1) * n + k];
            b[k + 1] = b[k + 1] - m * b[k];
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in i + 1..n {
                acc = acc - self.a[i * n + j] * b[j];
            }
            b[i] = acc / self.a[i * n + i];
        }
    }

    /// Solve `A^T x = b` in place.
    fn solve_transpose(&self, b: &mut [F]) {
        let n = self.n;
        // U^T z = b by forward substitution (column access of U).
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc = acc - self.a[j * n + i] * b[j];
            }
            b[i] = acc / self.a[i * n + i];
        }
        // Reverse the elimination sequence transposed.
        for k in (0..n - 1).rev() {
            let m = self.a[(k + 1) * n + k];
            b[k] = b[k] - m * b[k + 1];
            if self.swaps[k] {
                b.swap(k, k + 1);
            }
        }
    }
}

fn l1_normalize<F: Scalar>(v: &mut [F]) -> F {
    let norm: F = v.iter().map(|x| x.abs()).sum();
    if norm > F::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
    norm
}

/// Interior residuals `(||pi L - lambda pi||_1, ||L h - lambda h||_inf)`.
fn residuals<F: Scalar>(gen: &Generator<F>, lambda: F, pi: &[F], h: &[F]) -> (f64, f64) {
    let n = gen.truncation();
    let buffer = (n / 8).max(2);
    let interior = n - buffer;
    let pi_l = gen.apply_left(pi);
    let l_h = gen.apply_right(h);
    let mut r1 = F::zero();
    let mut rinf = F::zero();
    for i in 0..interior {
        r1 = r1 + (pi_l[i] - lambda * pi[i]).abs();
        rinf = rinf.max((l_h[i] - lambda * h[i]).abs());
    }
    (r1.to_f64().unwrap_or(f64::NAN), rinf.to_f64().unwrap_or(f64::NAN))
}

struct SolveOutcome<F> {
    lambda: F,
    pi: Vec<F>,
    h: Vec<F>,
    gap: F,
    residual_pi: f64,
    residual_h: f64,
    power_iterations: usize,
    refine_iterations: usize,
}

/// Core eigensolve at a fixed truncation.
fn solve_at<F: Scalar>(gen: &Generator<F>, opts: &PerronOptions) -> Result<SolveOutcome<F>> {
    let n = gen.truncation();
    let c = gen.max_abs_diagonal() + F::one();
    let apply_b_right = |v: &[F]| -> Vec<F> {
        let mut out = gen.apply_right(v);
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + c * x;
        }
        out
    };
    let apply_b_left = |v: &[F]| -> Vec<F> {
        let mut out = gen.apply_left(v);
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + c * x;
        }
        out
    };

    // Coarse two-sided power phase.
    let mut v = vec![F::one() / su::<F>(n); n];
    let mut w = v.clone();
    let mut mu = F::zero();
    let mut power_iters = 0;
    for k in 0..opts.coarse_iters {
        power_iters = k + 1;
        let bv = apply_b_right(&v);
        let bw = apply_b_left(&w);
        let num: F = w.iter().zip(&bv).map(|(&a, &b)| a * b).sum();
        let den: F = w.iter().zip(&v).map(|(&a, &b)| a * b).sum();
        let mu_next = num / den;
        v = bv;
        w = bw;
        l1_normalize(&mut v);
        l1_normalize(&mut w);
        let delta = (mu_next - mu).abs().to_f64().unwrap_or(f64::NAN);
        mu = mu_next;
        let scale = mu.abs().to_f64().unwrap_or(1.0).max(1.0);
        if k > 40 && delta < 1e-9 * scale {
            break;
        }
    }

    // Inverse-iteration polish around sigma = mu - c.
    let mut sigma = mu - c;
    let mut lu = HessenbergLu::factorize(gen.transpose_shifted_dense(sigma), n);
    let mut pi = w.clone();
    let mut h = v.clone();
    let mut lambda = sigma;
    let (mut res_pi, mut res_h) = (f64::INFINITY, f64::INFINITY);
    let mut refine_iters = 0;
    let target = opts.residual_tol.min(1e-10);
    for it in 0..14 {
        refine_iters = it + 1;
        lu.solve(&mut pi);
        l1_normalize(&mut pi);
        lu.solve_transpose(&mut h);
        l1_normalize(&mut h);
        // Two-sided Rayleigh quotient on the unshifted operator.
        let lh = gen.apply_right(&h);
        let num: F = pi.iter().zip(&lh).map(|(&a, &b)| a * b).sum();
        let den: F = pi.iter().zip(&h).map(|(&a, &b)| a * b).sum();
        lambda = num / den;
        let (r1, rinf) = residuals(gen, lambda, &pi, &h);
        res_pi = r1;
        res_h = rinf;
        if r1 < target && rinf < target {
            break;
        }
        if it == 5 {
            sigma = lambda;
            lu = HessenbergLu::factorize(gen.transpose_shifted_dense(sigma), n);
        }
    }
    if !(res_pi < opts.residual_tol && res_h < opts.residual_tol) {
        return Err(Error::NonConvergence { residual_pi: res_pi, residual_h: res_h });
    }

    // Fix signs and clamp roundoff noise in the far tail.
    let flip = pi.iter().map(|&x| x).sum::<F>() < F::zero();
    if flip {
        for x in pi.iter_mut() {
            *x = -*x;
        }
    }
    if h.iter().map(|&x| x).sum::<F>() < F::zero() {
        for x in h.iter_mut() {
            *x = -*x;
        }
    }
    let floor = s::<F>(1e-300);
    let pi_max = pi.iter().fold(F::zero(), |m, &x| m.max(x.abs()));
    for x in pi.iter_mut() {
        if *x <= F::zero() {
            if x.abs() > s::<F>(1e-10) * pi_max {
                return Err(Error::NonConvergence { residual_pi: res_pi, residual_h: res_h });
            }
            *x = floor;
        }
    }
    if h.iter().any(|&x| x <= F::zero()) {
        return Err(Error::NonConvergence { residual_pi: res_pi, residual_h: res_h });
    }

    // Normalize: sum pi = 1, then sum pi h = 1.
    let pi_sum: F = pi.iter().copied().sum();
    for x in pi.iter_mut() {
        *x = *x / pi_sum;
    }
    let pih: F = pi.iter().zip(&h).map(|(&a, &b)| a * b).sum();
    for x in h.iter_mut() {
        *x = *x / pih;
    }

    let gap = estimate_gap(gen, lambda, c, &pi, &h, &apply_b_right);

    Ok(SolveOutcome {
        lambda,
        pi,
        h,
        gap,
        residual_pi: res_pi,
        residual_h: res_h,
        power_iterations: power_iters,
        refine_iterations: refine_iters,
    })
}

/// Spectral-gap estimate by power iteration on the deflated shifted
/// operator `B (I - h pi^T)`: the observed contraction approximates
/// `|mu_2|`, so the gap is `(lambda + c) - |mu_2|`. Diagnostic only.
fn estimate_gap<F: Scalar>(
    gen: &Generator<F>,
    lambda: F,
    c: F,
    pi: &[F],
    h: &[F],
    apply_b_right: &impl Fn(&[F]) -> Vec<F>,
) -> F {
    let n = gen.truncation();
    let deflate = |v: &mut Vec<F>| {
        let proj: F = pi.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
        for (x, &hh) in v.iter_mut().zip(h) {
            *x = *x - proj * hh;
        }
    };
    // A fixed pseudo-random start avoids accidental orthogonality.
    let mut v: Vec<F> = (0..n)
        .map(|i| s::<F>(0.5 + 0.5 * ((i as f64 * 12.9898).sin() * 43758.5453).fract().abs()))
        .collect();
    deflate(&mut v);
    l1_normalize(&mut v);
    let mut log_ratios = Vec::new();
    for k in 0..140 {
        let mut bv = apply_b_right(&v);
        deflate(&mut bv);
        let norm = l1_normalize(&mut bv);
        v = bv;
        if k >= 40 {
            let r = norm.to_f64().unwrap_or(f64::NAN);
            if r.is_finite() && r > 0.0 {
                log_ratios.push(r.ln());
            }
        }
    }
    if log_ratios.is_empty() {
        return F::zero();
    }
    let mean_log = log_ratios.iter().sum::<f64>() / log_ratios.len() as f64;
    let mu2 = mean_log.exp();
    let gap = (lambda + c).to_f64().unwrap_or(0.0) - mu2;
    s::<F>(gap.max(0.0))
}

fn tail_mass<F: Scalar>(pi: &[F]) -> f64 {
    let start = pi.len() * 3 / 4;
    pi[start..].iter().map(|v| v.to_f64().unwrap_or(0.0)).sum()
}

/// Aitken-accelerated log-slope of `<delta_1 M_t, 1>` over unit-time
/// blocks; the finite-difference route to the Malthusian exponent.
pub(crate) fn fdm_log_slope<F: Scalar>(gen: &Generator<F>, max_blocks: usize) -> Result<f64> {
    let n = gen.truncation();
    let mut mu = vec![F::zero(); n];
    mu[0] = F::one();
    let dt = default_dt(gen);
    let mut slopes: Vec<f64> = Vec::new();
    let mut best = f64::NAN;
    for _ in 0..max_blocks {
        mu = super::evolve::evolve(&mu, gen, 1.0, dt)?;
        let mass: F = mu.iter().copied().sum();
        let m = mass.to_f64().unwrap_or(f64::NAN);
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::StepSize("mass left the positive range".into()));
        }
        for x in mu.iter_mut() {
            *x = *x / mass;
        }
        slopes.push(m.ln());
        let k = slopes.len();
        if k >= 3 {
            let d1 = slopes[k - 2] - slopes[k - 3];
            let d2 = slopes[k - 1] - slopes[k - 2];
            let denom = d2 - d1;
            let accel = if denom.abs() > 1e-14 {
                slopes[k - 1] - d2 * d2 / denom
            } else {
                slopes[k - 1]
            };
            let settled = (accel - best).abs() < 5e-9 && d2.abs() < 1e-5;
            best = accel;
            if settled {
                return Ok(best);
            }
        }
    }
    Ok(best)
}

fn diagnostics_for<F: Scalar>(
    outcome: &SolveOutcome<F>,
    n: usize,
    lambda_half: Option<f64>,
    fdm: Option<(f64, bool)>,
) -> PerronDiagnostics {
    PerronDiagnostics {
        truncation: n,
        tail_mass: tail_mass(&outcome.pi),
        lambda_half_gap: lambda_half
            .map(|lh| (outcome.lambda.to_f64().unwrap_or(f64::NAN) - lh).abs())
            .unwrap_or(f64::NAN),
        residual_pi: outcome.residual_pi,
        residual_h: outcome.residual_h,
        power_iterations: outcome.power_iterations,
        refine_iterations: outcome.refine_iterations,
        fdm_lambda: fdm.map(|f| f.0),
        fdm_agrees: fdm.map(|f| f.1),
    }
}

/// Perron triple at truncation `n`, auto-escalating `N` until the tail
/// mass of `pi` falls below the configured tolerance.
pub fn perron_triple<F: Scalar>(
    rates: RateTriple,
    variant: GeneratorVariant,
    n: usize,
    opts: &PerronOptions,
) -> Result<PerronTriple<F>> {
    let mut n = n.max(4);
    loop {
        let gen: Generator<F> = Generator::new(rates, n, variant)?;
        let outcome = solve_at(&gen, opts)?;
        if tail_mass(&outcome.pi) >= opts.tail_tol && n < opts.max_n {
            n = (n * 2).min(opts.max_n);
            continue;
        }
        // Half-truncation root for the truncation diagnostic.
        let lambda_half = if n >= 8 {
            let gen_half: Generator<F> = Generator::new(rates, n / 2, variant)?;
            solve_at(&gen_half, opts).ok().map(|o| o.lambda.to_f64().unwrap_or(f64::NAN))
        } else {
            None
        };
        let fdm = if opts.fdm_check {
            let slope = fdm_log_slope(&gen, 240)?;
            let agree =
                (slope - outcome.lambda.to_f64().unwrap_or(f64::NAN)).abs() <= 10.0 * opts.lambda_tol;
            Some((slope, agree))
        } else {
            None
        };
        let diagnostics = diagnostics_for(&outcome, n, lambda_half, fdm);
        return Ok(PerronTriple {
            lambda: outcome.lambda,
            pi: outcome.pi,
            h: outcome.h,
            gap_estimate: outcome.gap,
            diagnostics,
        });
    }
}

/// Result of the truncation-refinement sweep for the Malthusian exponent.
#[derive(Debug, Clone, Serialize)]
pub struct MalthusianResult<F> {
    pub lambda: F,
    /// `|lambda_N - lambda_{N/2}|` at the accepted truncation.
    pub lambda_gap: f64,
    pub censored: bool,
    pub triple: PerronTriple<F>,
}

/// Malthusian exponent with truncation refinement `N -> 2N` until the
/// root moves by less than `tol`; a capped sweep returns `censored`.
pub fn malthusian_exponent<F: Scalar>(
    rates: RateTriple,
    variant: GeneratorVariant,
    tol: f64,
    opts: &PerronOptions,
) -> Result<MalthusianResult<F>> {
    let mut n = opts.initial_n.max(8);
    let gen: Generator<F> = Generator::new(rates, n, variant)?;
    let mut prev = solve_at(&gen, opts)?;
    loop {
        let n_next = n * 2;
        if n_next > opts.max_n {
            let lambda_half = prev.lambda.to_f64().unwrap_or(f64::NAN);
            let diagnostics = diagnostics_for(&prev, n, Some(lambda_half), None);
            return Ok(MalthusianResult {
                lambda: prev.lambda,
                lambda_gap: f64::NAN,
                censored: true,
                triple: PerronTriple {
                    lambda: prev.lambda,
                    pi: prev.pi,
                    h: prev.h,
                    gap_estimate: prev.gap,
                    diagnostics,
                },
            });
        }
        let gen: Generator<F> = Generator::new(rates, n_next, variant)?;
        let next = solve_at(&gen, opts)?;
        let gap = (next.lambda - prev.lambda).abs().to_f64().unwrap_or(f64::NAN);
        if gap < tol {
            let fdm = if opts.fdm_check {
                let slope = fdm_log_slope(&gen, 240)?;
                let agree =
                    (slope - next.lambda.to_f64().unwrap_or(f64::NAN)).abs() <= 10.0 * tol.max(opts.lambda_tol);
                Some((slope, agree))
            } else {
                None
            };
            let lambda_half = prev.lambda.to_f64().unwrap_or(f64::NAN);
            let diagnostics = diagnostics_for(&next, n_next, Some(lambda_half), fdm);
            return Ok(MalthusianResult {
                lambda: next.lambda,
                lambda_gap: gap,
                censored: false,
                triple: PerronTriple {
                    lambda: next.lambda,
                    pi: next.pi,
                    h: next.h,
                    gap_estimate: next.gap,
                    diagnostics,
                },
            });
        }
        prev = next;
        n = n_next;
    }
}
