//! Monte Carlo estimators confronting simulation output with the
//! spectral predictions: Malthusian slopes, limiting size profiles,
//! tree-class expectations, the additive martingale, survival-vs-limit
//! agreement, and the growth-only window bounds.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{ForestEnsemble, ReplicaEnsemble, ReplicaRecord};
use crate::events::Snapshot;
use crate::params::{Params, Variant};
use crate::rrt::{class_count, enumerate_classes, RecursiveTree};
use crate::seeds;
use crate::sizes::SizeState;
use crate::spectral::PerronTriple;
use crate::stats;
use crate::testfn::TestFunction;
use crate::{Error, Result};

/// Which observable drives the Malthusian slope regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthSeries {
    /// `log E|X_t|`, for supercritical runs.
    ActiveCount,
    /// `log E<X_t, [x]>`: total active vertices.
    ActiveVertices,
    /// `log (E|Y_{t+dt}| - E|Y_t|)`: the inactive pool only accumulates,
    /// so its increments decay or grow at the Malthusian rate, which also
    /// covers subcritical runs where the active pool dies out.
    InactiveIncrement,
}

fn mean_observable(replicas: &[&ReplicaRecord], idx: usize, series: GrowthSeries) -> f64 {
    let total: u64 = replicas
        .iter()
        .map(|r| {
            let s = &r.snapshots[idx];
            match series {
                GrowthSeries::ActiveCount => s.active_clusters(),
                GrowthSeries::ActiveVertices => s.active_vertices(),
                GrowthSeries::InactiveIncrement => s.inactive_clusters(),
            }
        })
        .sum();
    total as f64 / replicas.len() as f64
}

fn growth_slope(replicas: &[&ReplicaRecord], times: &[f64], window: (usize, usize), series: GrowthSeries) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    match series {
        GrowthSeries::ActiveCount | GrowthSeries::ActiveVertices => {
            for idx in window.0..=window.1 {
                let m = mean_observable(replicas, idx, series);
                if m > 0.0 {
                    xs.push(times[idx]);
                    ys.push(m.ln());
                }
            }
        }
        GrowthSeries::InactiveIncrement => {
            for idx in window.0..window.1 {
                let d = mean_observable(replicas, idx + 1, series)
                    - mean_observable(replicas, idx, series);
                if d > 0.0 {
                    xs.push(0.5 * (times[idx] + times[idx + 1]));
                    ys.push(d.ln());
                }
            }
        }
    }
    if xs.len() < 2 {
        return f64::NAN;
    }
    stats::linear_fit(&xs, &ys).0
}

/// Malthusian exponent estimate by log-slope regression over a late
/// observation window, with a jackknife standard error over replicas.
pub fn mc_lambda(
    ensemble: &ReplicaEnsemble,
    series: GrowthSeries,
    window: (usize, usize),
) -> Result<(f64, f64)> {
    let times = ensemble.obs_times();
    if window.0 >= window.1 || window.1 >= times.len() {
        return Err(Error::InvalidArgument("regression window needs at least two grid points".into()));
    }
    let replicas: Vec<&ReplicaRecord> = ensemble.complete_replicas().collect();
    if replicas.is_empty() {
        return Err(Error::InvalidArgument("no complete replica in the window".into()));
    }
    let slope = growth_slope(&replicas, times, window, series);
    if !slope.is_finite() {
        return Err(Error::InvalidArgument(
            "observable vanished over the window (all replicas extinct?)".into(),
        ));
    }
    let owned: Vec<&ReplicaRecord> = replicas.clone();
    let se = stats::jackknife_se(&owned, |subset| {
        let inner: Vec<&ReplicaRecord> = subset.iter().map(|r| **r).collect();
        growth_slope(&inner, times, window, series)
    });
    Ok((slope, se))
}

/// Pooled empirical size distribution of one pool over surviving
/// replicas.
fn pooled_profile(replicas: &[&ReplicaRecord], idx: usize, inactive: bool) -> Vec<f64> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for r in replicas {
        let snap = &r.snapshots[idx];
        let map = if inactive { &snap.inactive } else { &snap.active };
        for (&n, &c) in map {
            *counts.entry(n).or_insert(0) += c;
        }
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Vec::new();
    }
    let max = *counts.keys().next_back().unwrap() as usize;
    let mut profile = vec![0.0; max];
    for (&n, &c) in &counts {
        profile[n as usize - 1] = c as f64 / total as f64;
    }
    profile
}

/// Total-variation distance between a pooled empirical profile and a
/// target distribution, with a bootstrap confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileDistance {
    pub tv: f64,
    pub ci: (f64, f64),
    pub surviving: usize,
}

fn profile_distance(
    ensemble: &ReplicaEnsemble,
    target: &[f64],
    t_idx: usize,
    inactive: bool,
) -> Result<ProfileDistance> {
    let survivors: Vec<&ReplicaRecord> =
        ensemble.complete_replicas().filter(|r| r.surviving_at(t_idx)).collect();
    if survivors.is_empty() {
        return Err(Error::InvalidArgument(
            "no surviving replica at the requested time (censoring, no silent answer)".into(),
        ));
    }
    let tv = stats::total_variation(&pooled_profile(&survivors, t_idx, inactive), target);
    let ci = stats::bootstrap_ci(
        &survivors,
        |subset| {
            let inner: Vec<&ReplicaRecord> = subset.iter().map(|r| **r).collect();
            stats::total_variation(&pooled_profile(&inner, t_idx, inactive), target)
        },
        200,
        0.95,
        ensemble.spec.master_seed ^ t_idx as u64,
    )?;
    Ok(ProfileDistance { tv, ci, surviving: survivors.len() })
}

/// TV distance between the pooled surviving-replica active size profile
/// and the stationary profile `pi`.
pub fn active_profile_distance(
    ensemble: &ReplicaEnsemble,
    pi: &[f64],
    t_idx: usize,
) -> Result<ProfileDistance> {
    profile_distance(ensemble, pi, t_idx, false)
}

/// TV distance between the pooled inactive size profile and the
/// size-biased profile (callers pass `size_biased(pi)`).
pub fn inactive_profile_distance(
    ensemble: &ReplicaEnsemble,
    pi_tilde: &[f64],
    t_idx: usize,
) -> Result<ProfileDistance> {
    profile_distance(ensemble, pi_tilde, t_idx, true)
}

/// Expectation of a tree functional under the mixture "size from `nu`,
/// class uniform given size".
#[derive(Debug, Clone, Serialize)]
pub struct TreeExpectation {
    pub value: f64,
    /// Bound on the ignored tail `sum_{n > cap} nu(n) |f|`, from the
    /// functional's growth envelope.
    pub tail_bound: f64,
}

/// `E[f(T_nu)] = sum_{n <= cap} nu(n) (n-1)!^{-1} sum_{t in T_n} f(t)`,
/// with the remainder bounded by `bound_const * sum_{n > cap} nu(n) n^p`.
/// Errors when that bound exceeds `tol`.
pub fn tree_functional_expectation(
    f: &dyn Fn(&RecursiveTree) -> f64,
    growth_p: f64,
    bound_const: f64,
    nu: &[f64],
    n_cap: u32,
    tol: f64,
) -> Result<TreeExpectation> {
    let mut value = 0.0;
    for n in 1..=n_cap {
        let weight = nu.get(n as usize - 1).copied().unwrap_or(0.0);
        if weight == 0.0 {
            continue;
        }
        let classes = enumerate_classes(n)?;
        let avg: f64 = classes.iter().map(f).sum::<f64>() / class_count(n) as f64;
        value += weight * avg;
    }
    let tail_bound: f64 = nu
        .iter()
        .enumerate()
        .skip(n_cap as usize)
        .map(|(i, &w)| bound_const * w * ((i + 1) as f64).powf(growth_p))
        .sum();
    if tail_bound > tol {
        return Err(Error::TailBound { bound: tail_bound, tol });
    }
    Ok(TreeExpectation { value, tail_bound })
}

/// Comparison of an empirical per-cluster tree functional against its
/// predicted limit, for both pools, plus a conditional class-uniformity
/// chi-square.
#[derive(Debug, Clone, Serialize)]
pub struct TreeProfileReport {
    pub active_mean: f64,
    pub active_expected: f64,
    pub active_ci: (f64, f64),
    pub inactive_mean: f64,
    pub inactive_expected: f64,
    pub inactive_ci: (f64, f64),
    /// Per-size `(statistic, critical)` pairs of the pooled conditional
    /// class-uniformity chi-square at `alpha = 0.001`.
    pub uniformity: Vec<(u32, f64, f64)>,
}

fn pooled_tree_mean(
    ensemble: &ForestEnsemble,
    survivors: &[usize],
    f: &dyn Fn(&RecursiveTree) -> f64,
    t_idx: usize,
    inactive: bool,
) -> f64 {
    let mut total_f = 0.0;
    let mut total_clusters = 0u64;
    for &r in survivors {
        let counts = &ensemble.classes[r][t_idx];
        let map = if inactive { &counts.inactive } else { &counts.active };
        for (tree, &c) in map {
            total_f += c as f64 * f(tree);
        }
        let snap = &ensemble.base.replicas[r].snapshots[t_idx];
        total_clusters +=
            if inactive { snap.inactive_clusters() } else { snap.active_clusters() };
    }
    if total_clusters == 0 {
        f64::NAN
    } else {
        total_f / total_clusters as f64
    }
}

/// Empirical `(1/|pool|) sum f(cluster)` against `E[f(T_nu)]` for the
/// active (`nu = pi`) and inactive (`nu = size-biased pi`) pools, with
/// bootstrap intervals over surviving replicas.
pub fn tree_profile_check(
    ensemble: &ForestEnsemble,
    f: &dyn Fn(&RecursiveTree) -> f64,
    growth_p: f64,
    bound_const: f64,
    pi: &[f64],
    pi_tilde: &[f64],
    t_idx: usize,
    tail_tol: f64,
) -> Result<TreeProfileReport> {
    let cap = ensemble.class_cap;
    // The empirical functional only sees classes up to the cap, so
    // compare against the capped functional's expectation.
    let capped = |t: &RecursiveTree| if t.size() <= cap { f(t) } else { 0.0 };
    let active_expected =
        tree_functional_expectation(&capped, growth_p, bound_const, pi, cap, tail_tol)?.value;
    let inactive_expected =
        tree_functional_expectation(&capped, growth_p, bound_const, pi_tilde, cap, tail_tol)?.value;

    let survivors: Vec<usize> = ensemble
        .base
        .complete_replicas()
        .enumerate()
        .filter(|(_, r)| r.surviving_at(t_idx))
        .map(|(i, _)| i)
        .collect();
    if survivors.is_empty() {
        return Err(Error::InvalidArgument("no surviving replica at the requested time".into()));
    }
    let active_mean = pooled_tree_mean(ensemble, &survivors, &capped, t_idx, false);
    let inactive_mean = pooled_tree_mean(ensemble, &survivors, &capped, t_idx, true);
    let seed = ensemble.base.spec.master_seed ^ 0x7AEE;
    let active_ci = stats::bootstrap_ci(
        &survivors,
        |subset| {
            let idx: Vec<usize> = subset.iter().map(|r| **r).collect();
            pooled_tree_mean(ensemble, &idx, &capped, t_idx, false)
        },
        200,
        0.95,
        seed,
    )?;
    let inactive_ci = stats::bootstrap_ci(
        &survivors,
        |subset| {
            let idx: Vec<usize> = subset.iter().map(|r| **r).collect();
            pooled_tree_mean(ensemble, &idx, &capped, t_idx, true)
        },
        200,
        0.95,
        seed ^ 1,
    )?;

    // Conditional class uniformity: pooled over survivors and pools.
    let mut uniformity = Vec::new();
    for n in 2..=cap.min(5) {
        let classes = enumerate_classes(n)?;
        let mut observed = vec![0u64; classes.len()];
        for &r in &survivors {
            let counts = &ensemble.classes[r][t_idx];
            for map in [&counts.active, &counts.inactive] {
                for (tree, &c) in map.iter().filter(|(t, _)| t.size() == n) {
                    let pos = classes.binary_search(tree).expect("canonical class");
                    observed[pos] += c;
                }
            }
        }
        let total: u64 = observed.iter().sum();
        if total < 5 * classes.len() as u64 {
            continue; // not enough pooled mass for a meaningful test
        }
        let expected = vec![total as f64 / classes.len() as f64; classes.len()];
        let (stat, crit) = stats::chi_square_test(&observed, &expected, 0.001);
        uniformity.push((n, stat, crit));
    }

    Ok(TreeProfileReport {
        active_mean,
        active_expected,
        active_ci,
        inactive_mean,
        inactive_expected,
        inactive_ci,
        uniformity,
    })
}

/// Per-replica additive-martingale paths `t -> e^{-lambda t} <X_t, h>`.
#[derive(Debug, Clone, Serialize)]
pub struct MartingaleEstimate {
    pub times: Vec<f64>,
    /// `paths[replica][obs_idx]`.
    pub paths: Vec<Vec<f64>>,
    /// Path value at the last observation (the `W` estimate).
    pub terminal: Vec<f64>,
    pub surviving: Vec<bool>,
    /// `h(initial size)`: the common path value at time zero.
    pub start_value: f64,
}

fn weighted_h(snapshot: &Snapshot, triple: &PerronTriple<f64>) -> f64 {
    snapshot.active.iter().map(|(&n, &c)| c as f64 * triple.h_at(n)).sum()
}

/// Evaluate the martingale along every replica of a size-level ensemble.
pub fn martingale_paths(
    ensemble: &ReplicaEnsemble,
    triple: &PerronTriple<f64>,
) -> Result<MartingaleEstimate> {
    let times = ensemble.obs_times().to_vec();
    let lambda = triple.lambda;
    let mut paths = Vec::new();
    let mut terminal = Vec::new();
    let mut surviving = Vec::new();
    for r in ensemble.complete_replicas() {
        let path: Vec<f64> = r
            .snapshots
            .iter()
            .map(|s| (-lambda * s.time).exp() * weighted_h(s, triple))
            .collect();
        terminal.push(*path.last().expect("non-empty grid"));
        surviving.push(r.surviving_at(times.len() - 1));
        paths.push(path);
    }
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no complete replica".into()));
    }
    let n0 = ensemble.spec.initial.first().map(|&(n, _)| n).unwrap_or(1);
    Ok(MartingaleEstimate {
        times,
        paths,
        terminal,
        surviving,
        start_value: triple.h_at(n0),
    })
}

/// Contingency of `{W_T below threshold}` against `{extinct by T}`.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalLimitTable {
    /// `[ [small W & extinct, small W & surviving],
    ///    [large W & extinct, large W & surviving] ]`
    pub table: [[u64; 2]; 2],
    pub off_diagonal_fraction: f64,
    pub w_threshold: f64,
}

/// Survival/limit agreement: the limit variable vanishes exactly on
/// extinction, so off-diagonal mass must vanish as `T` grows. Requires a
/// supercritical exponent.
pub fn kesten_stigum_check(
    estimate: &MartingaleEstimate,
    lambda: f64,
    w_threshold: f64,
) -> Result<SurvivalLimitTable> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument(
            "survival/limit agreement needs a supercritical exponent".into(),
        ));
    }
    let mut table = [[0u64; 2]; 2];
    for (w, &alive) in estimate.terminal.iter().zip(&estimate.surviving) {
        let small = *w < w_threshold;
        table[if small { 0 } else { 1 }][if alive { 1 } else { 0 }] += 1;
    }
    let total: u64 = table.iter().flatten().sum();
    let off = table[0][1] + table[1][0];
    Ok(SurvivalLimitTable {
        table,
        off_diagonal_fraction: off as f64 / total as f64,
        w_threshold,
    })
}

/// Outcome of the growth-only conditional-moment window checks.
#[derive(Debug, Clone, Serialize)]
pub struct WindowBoundReport {
    pub windows: usize,
    pub mean_violations: usize,
    pub var_violations: usize,
    /// Largest studentized exceedance observed for the mean bound.
    pub worst_mean_z: f64,
    pub worst_var_z: f64,
}

/// Conditional mean/variance bounds for the windowed increment of
/// `<X, [x^p]_{>K}>` under pure growth:
///
/// ```text
/// E[Z | F] <= (e^{2^{p-1} p beta d} - 1 + (1 - e^{-beta d K}) K^p) <X, [x^p]>
/// var[Z | F] <= 2 beta d (4^p p + K^{2p+1}) <X, [x^{2p}]>
/// ```
///
/// Each window branches `branches` continuations from its start state to
/// estimate the conditional moments; a violation is an estimate more than
/// three standard errors above its bound.
pub fn growth_only_bound_check(
    beta: f64,
    delta: f64,
    k_threshold: u32,
    p: f64,
    hosts: u64,
    windows_per_host: usize,
    branches: u64,
    master_seed: u64,
) -> Result<WindowBoundReport> {
    let params = Params::growth_only(beta)?;
    let fp = TestFunction::monomial_above(p, k_threshold)?;
    let xp = TestFunction::monomial(p)?;
    let x2p = TestFunction::monomial(2.0 * p)?;
    let c_delta = (2f64.powf(p - 1.0) * p * beta * delta).exp() - 1.0
        + (1.0 - (-beta * delta * k_threshold as f64).exp()) * (k_threshold as f64).powf(p);
    let var_coeff = 2.0 * beta * delta * (4f64.powf(p) * p + (k_threshold as f64).powf(2.0 * p + 1.0));

    let per_host: Vec<(usize, usize, f64, f64)> = (0..hosts)
        .into_par_iter()
        .map(|host| {
            let mut rng = seeds::replica_rng(master_seed, host);
            let mut state = SizeState::single(1);
            // The drawn-but-not-yet-due event is carried across windows so
            // the host follows the exact jump-process law.
            let mut pending: Option<SizeState> = None;
            let mut mean_viol = 0usize;
            let mut var_viol = 0usize;
            let mut worst_mean_z = f64::NEG_INFINITY;
            let mut worst_var_z = f64::NEG_INFINITY;
            for w in 0..windows_per_host {
                let window_start = w as f64 * delta;
                loop {
                    let next = pending.take().unwrap_or_else(|| {
                        let mut n = state.clone();
                        crate::sizes::step(&mut n, &params, &mut rng)
                            .expect("growth-only never extinct");
                        n
                    });
                    if next.time > window_start {
                        pending = Some(next);
                        break;
                    }
                    state = next;
                }
                let start = state.clone();
                let base = start.pair_functional(&fp, crate::sizes::Pool::Active);
                let mean_bound = c_delta * start.pair_functional(&xp, crate::sizes::Pool::Active);
                let var_bound = var_coeff * start.pair_functional(&x2p, crate::sizes::Pool::Active);
                // Branch conditional continuations over the window.
                let mut zs = Vec::with_capacity(branches as usize);
                for b in 0..branches {
                    let mut branch_rng =
                        seeds::keyed_rng(master_seed ^ 0x57A7, (host << 24) ^ (w as u64) << 12 ^ b);
                    let mut st = start.clone();
                    st.time = 0.0;
                    let mut guard = 0u32;
                    loop {
                        let rate = st.total_rate(&params);
                        let wait = -(1.0 - branch_rng.gen::<f64>()).ln() / rate;
                        if st.time + wait > delta {
                            break;
                        }
                        st.time += wait;
                        // Pure growth: pick the class by size-weighted count.
                        let mut target = branch_rng.gen::<f64>() * st.active_vertices() as f64;
                        let mut grow = *st.active.keys().next().unwrap();
                        for (&n, &c) in &st.active {
                            let w = (n as u64 * c) as f64;
                            if target < w {
                                grow = n;
                                break;
                            }
                            target -= w;
                        }
                        let c = st.active.get_mut(&grow).unwrap();
                        *c -= 1;
                        if *c == 0 {
                            st.active.remove(&grow);
                        }
                        *st.active.entry(grow + 1).or_insert(0) += 1;
                        guard += 1;
                        if guard > 1_000_000 {
                            break;
                        }
                    }
                    zs.push(st.pair_functional(&fp, crate::sizes::Pool::Active) - base);
                }
                let (mean, var) = stats::mean_var(&zs);
                let se_mean = (var / zs.len() as f64).sqrt();
                let se_var = var * (2.0 / (zs.len() as f64 - 1.0)).sqrt();
                let mean_z = (mean - mean_bound) / se_mean.max(1e-300);
                let var_z = (var - var_bound) / se_var.max(1e-300);
                worst_mean_z = worst_mean_z.max(mean_z);
                worst_var_z = worst_var_z.max(var_z);
                if mean_z > 3.0 {
                    mean_viol += 1;
                }
                if var_z > 3.0 {
                    var_viol += 1;
                }
            }
            (mean_viol, var_viol, worst_mean_z, worst_var_z)
        })
        .collect();

    let mut report = WindowBoundReport {
        windows: hosts as usize * windows_per_host,
        mean_violations: 0,
        var_violations: 0,
        worst_mean_z: f64::NEG_INFINITY,
        worst_var_z: f64::NEG_INFINITY,
    };
    for (mv, vv, wm, wv) in per_host {
        report.mean_violations += mv;
        report.var_violations += vv;
        report.worst_mean_z = report.worst_mean_z.max(wm);
        report.worst_var_z = report.worst_var_z.max(wv);
    }
    Ok(report)
}

/// Monte Carlo check of the semigroup moment envelope
/// `E<X_t, [x^p]> <= e^{(2^{p-1} p beta - theta) t} n0^p`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub mc_mean: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn moment_bound_check(
    ensemble: &ReplicaEnsemble,
    p: f64,
    t_idx: usize,
) -> Result<MomentBoundReport> {
    if p < 1.0 {
        return Err(Error::InvalidArgument("moment bound needs p >= 1".into()));
    }
    let params = ensemble.spec.params;
    if params.variant == Variant::ModifiedEdgeIsolation {
        return Err(Error::InvalidArgument(
            "the moment envelope is stated for the per-vertex isolation rate".into(),
        ));
    }
    let t = *ensemble
        .obs_times()
        .get(t_idx)
        .ok_or_else(|| Error::InvalidArgument("bad observation index".into()))?;
    let n0 = ensemble
        .spec
        .initial
        .first()
        .map(|&(n, _)| n)
        .ok_or_else(|| Error::InvalidArgument("empty initial state".into()))?;
    let f = TestFunction::monomial(p)?;
    let values: Vec<f64> = ensemble
        .complete_replicas()
        .map(|r| {
            r.snapshots[t_idx]
                .active
                .iter()
                .map(|(&n, &c)| c as f64 * f.eval(n))
                .sum()
        })
        .collect();
    let (mean, _) = stats::mean_var(&values);
    let se = stats::standard_error(&values);
    let bound =
        ((2f64.powf(p - 1.0) * p * params.beta - params.theta) * t).exp() * (n0 as f64).powf(p);
    Ok(MomentBoundReport { mc_mean: mean, se, bound, pass: mean - bound <= 3.0 * se })
}

/// Monte Carlo mean and standard error of `<X_t, f>^2` at a grid index.
pub fn mc_second_moment(
    ensemble: &ReplicaEnsemble,
    f: &TestFunction,
    t_idx: usize,
) -> Result<(f64, f64)> {
    if t_idx >= ensemble.obs_times().len() {
        return Err(Error::InvalidArgument("bad observation index".into()));
    }
    let values: Vec<f64> = ensemble
        .complete_replicas()
        .map(|r| {
            let v: f64 =
                r.snapshots[t_idx].active.iter().map(|(&n, &c)| c as f64 * f.eval(n)).sum();
            v * v
        })
        .collect();
    let (mean, _) = stats::mean_var(&values);
    Ok((mean, stats::standard_error(&values)))
}
