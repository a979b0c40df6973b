//! Shared statistical machinery: chi-square goodness of fit, one- and
//! two-dimensional two-sample Kolmogorov-Smirnov tests, log-slope
//! regression with jackknife errors, and bootstrap confidence intervals.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::{Error, Result};

/// Mean and (unbiased) sample variance.
pub fn mean_var(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = data.iter().sum::<f64>() / n;
    if data.len() < 2 {
        return (mean, 0.0);
    }
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Standard error of the mean.
pub fn standard_error(data: &[f64]) -> f64 {
    let (_, var) = mean_var(data);
    (var / data.len() as f64).sqrt()
}

/// Pearson chi-square statistic against expected counts.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

/// Upper critical value of the chi-square distribution with `dof` degrees
/// of freedom at significance `alpha`.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    ChiSquared::new(dof as f64).expect("dof > 0").inverse_cdf(1.0 - alpha)
}

/// Goodness-of-fit chi-square test; pools nothing, so callers should keep
/// expected cell counts reasonable. Returns `(statistic, critical)`.
pub fn chi_square_test(observed: &[u64], expected: &[f64], alpha: f64) -> (f64, f64) {
    debug_assert_eq!(observed.len(), expected.len());
    let stat = chi_square_stat(observed, expected);
    let crit = chi_square_critical(observed.len().saturating_sub(1).max(1), alpha);
    (stat, crit)
}

/// Two-sample chi-square homogeneity test on category counts.
/// Cells with no observations in either sample are dropped.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64], alpha: f64) -> (f64, f64) {
    debug_assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        let row = (ca + cb) as f64;
        if row == 0.0 {
            continue;
        }
        cells += 1;
        let ea = row * na as f64 / total;
        let eb = row * nb as f64 / total;
        stat += (ca as f64 - ea).powi(2) / ea + (cb as f64 - eb).powi(2) / eb;
    }
    let crit = chi_square_critical(cells.saturating_sub(1).max(1), alpha);
    (stat, crit)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample_stat(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.total_cmp(q));
    xb.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`:
/// `sqrt(-ln(alpha/2)/2) * sqrt((n+m)/(nm))`. Conservative for
/// integer-valued samples (ties only lower the statistic).
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * (((n + m) as f64) / (n as f64 * m as f64)).sqrt()
}

/// Two-sample KS test: `(statistic, critical)` at `alpha`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> (f64, f64) {
    (ks_two_sample_stat(a, b), ks_two_sample_critical(a.len(), b.len(), alpha))
}

/// Survival-function complement of the KS limit distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
fn ks_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100u32 {
        let term = (-2.0 * (k as f64 * x).powi(2)).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Two-sample two-dimensional KS test in the Fasano-Franceschini style:
/// the statistic is the largest discrepancy of quadrant probabilities over
/// the four quadrant orientations anchored at every sample point, and the
/// p-value uses the Press et al. correlation-corrected approximation.
/// Returns `(statistic, p_value)`.
pub fn ks_two_sample_2d(a: &[(f64, f64)], b: &[(f64, f64)], _alpha: f64) -> (f64, f64) {
    let d1 = max_quadrant_discrepancy(a, a, b);
    let d2 = max_quadrant_discrepancy(b, a, b);
    let d = 0.5 * (d1 + d2);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n_eff = na * nb / (na + nb);
    let r = 0.5 * (pearson_r(a) + pearson_r(b));
    let denom = 1.0 + (1.0 - r * r).max(0.0).sqrt() * (0.25 - 0.75 / n_eff.sqrt());
    let p = ks_q(d * n_eff.sqrt() / denom);
    (d, p)
}

/// Pearson correlation of paired coordinates.
fn pearson_r(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// For every anchor point, the largest difference between the fractions of
/// `a` and `b` falling in each of the four quadrants anchored there
/// (closed on the south-west side). Sweep by x with a Fenwick tree over
/// compressed y ranks, O((|anchors| + |a| + |b|) log).
fn max_quadrant_discrepancy(anchors: &[(f64, f64)], a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut ys: Vec<f64> = a.iter().chain(b).chain(anchors).map(|p| p.1).collect();
    ys.sort_by(|p, q| p.total_cmp(q));
    ys.dedup();
    let y_rank = |y: f64| ys.partition_point(|&v| v <= y); // count of values <= y

    #[derive(Clone, Copy)]
    enum Tag {
        A(usize),
        B(usize),
        Anchor(usize),
    }
    let mut events: Vec<(f64, u8, Tag)> = Vec::with_capacity(a.len() + b.len() + anchors.len());
    for (i, &(x, _)) in a.iter().enumerate() {
        events.push((x, 0, Tag::A(i)));
    }
    for (i, &(x, _)) in b.iter().enumerate() {
        events.push((x, 0, Tag::B(i)));
    }
    for (i, &(x, _)) in anchors.iter().enumerate() {
        // Data points at the same x are inserted first: x <= anchor_x counts.
        events.push((x, 1, Tag::Anchor(i)));
    }
    events.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));

    let mut fen_a = Fenwick::new(ys.len());
    let mut fen_b = Fenwick::new(ys.len());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    // Marginal y-counts for the right-hand (x > anchor_x) quadrants.
    let mut total_a_le = vec![0f64; ys.len() + 1];
    let mut total_b_le = vec![0f64; ys.len() + 1];
    for &(_, y) in a {
        total_a_le[y_rank(y)] += 1.0;
    }
    for &(_, y) in b {
        total_b_le[y_rank(y)] += 1.0;
    }
    for i in 1..=ys.len() {
        total_a_le[i] += total_a_le[i - 1];
        total_b_le[i] += total_b_le[i - 1];
    }

    let mut d: f64 = 0.0;
    for (_, _, tag) in events {
        match tag {
            Tag::A(i) => fen_a.add(y_rank(a[i].1) - 1),
            Tag::B(i) => fen_b.add(y_rank(b[i].1) - 1),
            Tag::Anchor(i) => {
                let yr = y_rank(anchors[i].1);
                let a_sw = fen_a.prefix(yr) as f64; // x <= ax and y <= ay
                let b_sw = fen_b.prefix(yr) as f64;
                let a_w = fen_a.total() as f64; // x <= ax
                let b_w = fen_b.total() as f64;
                let a_s = total_a_le[yr]; // y <= ay
                let b_s = total_b_le[yr];
                let quads = [
                    a_sw / na - b_sw / nb,
                    (a_w - a_sw) / na - (b_w - b_sw) / nb,
                    (a_s - a_sw) / na - (b_s - b_sw) / nb,
                    ((na - a_w) - (a_s - a_sw)) / na - ((nb - b_w) - (b_s - b_sw)) / nb,
                ];
                for q in quads {
                    d = d.max(q.abs());
                }
            }
        }
    }
    d
}

/// Fenwick tree over counts; `prefix(k)` sums slots `0..k`.
struct Fenwick {
    tree: Vec<u32>,
    total: u32,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1], total: 0 }
    }

    fn add(&mut self, slot: usize) {
        self.total += 1;
        let mut i = slot + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, k: usize) -> u32 {
        let mut s = 0;
        let mut i = k.min(self.tree.len() - 1);
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    fn total(&self) -> u32 {
        self.total
    }
}

/// Ordinary least squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| (u - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Jackknife standard error of an arbitrary replica statistic: recompute
/// the statistic with each replica left out.
pub fn jackknife_se<T, F: Fn(&[&T]) -> f64>(replicas: &[T], statistic: F) -> f64 {
    let n = replicas.len();
    if n < 2 {
        return f64::NAN;
    }
    let mut leave_one_out = Vec::with_capacity(n);
    for skip in 0..n {
        let subset: Vec<&T> =
            replicas.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, r)| r).collect();
        leave_one_out.push(statistic(&subset));
    }
    let (mean, _) = mean_var(&leave_one_out);
    let ss: f64 = leave_one_out.iter().map(|v| (v - mean).powi(2)).sum();
    ((n as f64 - 1.0) / n as f64 * ss).sqrt()
}

/// Percentile bootstrap confidence interval of a replica statistic.
pub fn bootstrap_ci<T, F: Fn(&[&T]) -> f64>(
    replicas: &[T],
    statistic: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    use rand::Rng;
    if replicas.is_empty() {
        return Err(Error::InvalidArgument("bootstrap needs at least one replica".into()));
    }
    let mut rng = crate::seeds::keyed_rng(seed, 0xB007);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let subset: Vec<&T> =
            (0..replicas.len()).map(|_| &replicas[rng.gen_range(0..replicas.len())]).collect();
        values.push(statistic(&subset));
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let lo_idx = ((1.0 - level) / 2.0 * (resamples - 1) as f64).round() as usize;
    let hi_idx = ((1.0 + level) / 2.0 * (resamples - 1) as f64).round() as usize;
    Ok((values[lo_idx], values[hi_idx]))
}

/// Total-variation distance between two probability vectors indexed from 1.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let mut d = 0.0;
    for i in 0..len {
        let pi = p.get(i).copied().unwrap_or(0.0);
        let qi = q.get(i).copied().unwrap_or(0.0);
        d += (pi - qi).abs();
    }
    0.5 * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn chi_square_critical_values() {
        // Classical table entries.
        assert!((chi_square_critical(1, 0.05) - 3.841).abs() < 1e-2);
        assert!((chi_square_critical(5, 0.001) - 20.515).abs() < 1e-2);
    }

    #[test]
    fn ks_two_sample_same_distribution_passes() {
        let mut rng = crate::seeds::keyed_rng(11, 0);
        let a: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let (d, crit) = ks_two_sample(&a, &b, 0.01);
        assert!(d < crit, "d={d}, crit={crit}");
        // A shifted sample must be rejected.
        let c: Vec<f64> = a.iter().map(|x| x + 0.05).collect();
        let (d, crit) = ks_two_sample(&a, &c, 0.01);
        assert!(d > crit);
    }

    #[test]
    fn ks_2d_detects_shift_and_accepts_null() {
        let mut rng = crate::seeds::keyed_rng(13, 0);
        let a: Vec<(f64, f64)> = (0..5000).map(|_| (rng.gen(), rng.gen())).collect();
        let b: Vec<(f64, f64)> = (0..5000).map(|_| (rng.gen(), rng.gen())).collect();
        let (_, p) = ks_two_sample_2d(&a, &b, 0.01);
        assert!(p > 0.01, "null rejected with p={p}");
        let c: Vec<(f64, f64)> = a.iter().map(|&(x, y)| (x + 0.15, y)).collect();
        let (_, p) = ks_two_sample_2d(&a, &c, 0.01);
        assert!(p < 0.01, "shift not detected, p={p}");
    }

    #[test]
    fn linear_fit_recovers_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let (slope, intercept) = linear_fit(&x, &y);
        assert!((slope - 3.0).abs() < 1e-12);
        assert!((intercept + 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_variation_basics() {
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
    }
}
