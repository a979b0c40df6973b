//! Monotone coupling machinery for the per-edge-isolation variant.
//!
//! A cluster of that variant only dies through its edges: size 1 must
//! grow before anything else can happen, and conditionally on dying the
//! event is fragmentation with probability `gamma / (gamma + theta)`
//! independently of the size. Lifetimes are sampled *backwards*: one
//! exponential pre-waiting time is drawn at birth and rescaled after
//! every growth (an exact time change), so a single shared variate drives
//! the lifetime of the coupled pair and larger/faster clusters
//! deterministically die earlier with larger children.
//!
//! Randomness is keyed by the Ulam-Harris-Neveu label: every label owns a
//! bundle of unit-rate variates split into a shared channel (used by both
//! processes) and a private channel (used only by the slower process
//! while it catches up in size). Within a channel the order is frozen:
//! the lifetime variate first, then the pre-growth variate, then the
//! growth variates in index order; unused variates are discarded.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::forest::UhnLabel;
use crate::params::{Params, Variant};
use crate::rrt::sample_split_size;
use crate::seeds;
use crate::stats;
use crate::{Error, Result};

/// Lazily memoized sequence of unit-rate exponential variates; indexing
/// is stable regardless of consumption order.
struct VariateStream {
    rng: ChaCha8Rng,
    cache: Vec<f64>,
}

impl VariateStream {
    fn new(master: u64, key: u64) -> Self {
        Self { rng: seeds::keyed_rng(master, key), cache: Vec::new() }
    }

    /// Slot 0 is the lifetime variate, slot 1 the pre-growth variate,
    /// slot `1 + i` the `i`-th growth variate.
    fn get(&mut self, index: usize) -> f64 {
        while self.cache.len() <= index {
            let u: f64 = 1.0 - self.rng.gen::<f64>();
            self.cache.push(-u.ln());
        }
        self.cache[index]
    }
}

/// Per-label randomness: the event-type and split variates plus the two
/// exponential channels.
pub struct RandomnessBundle {
    /// Uniform on `(0, 1]`, drives both split sizes.
    pub split_uniform: f64,
    /// True for fragmentation, drawn with probability `gamma/(gamma+theta)`.
    pub is_fragmentation: bool,
    shared: VariateStream,
    private: VariateStream,
}

impl RandomnessBundle {
    /// Deterministic bundle for `(master_seed, label)`.
    pub fn for_label(master_seed: u64, label: &UhnLabel, frag_prob: f64) -> Self {
        let code = label.code();
        let mut header = seeds::keyed_rng(master_seed, code * 4);
        let split_uniform = 1.0 - header.gen::<f64>();
        let is_fragmentation = header.gen::<f64>() < frag_prob;
        Self {
            split_uniform,
            is_fragmentation,
            shared: VariateStream::new(master_seed, code * 4 + 1),
            private: VariateStream::new(master_seed, code * 4 + 2),
        }
    }
}

/// One sampled cluster lifetime.
#[derive(Debug, Clone, Serialize)]
pub struct BackwardSample {
    /// Time from birth to the fragmentation/isolation event.
    pub lifetime: f64,
    /// Times (from birth) of the growth events, in order.
    pub growth_times: Vec<f64>,
    /// Cluster size at the end of the lifetime.
    pub end_size: u32,
    /// The raw pre-waiting variate `W` (already scaled by its rate).
    pub pre_waiting: f64,
    /// The initial-growth waiting time for birth size 1.
    pub pre_growth: Option<f64>,
    /// Accepted growth waiting times `Z_i` (already scaled).
    pub growth_waits: Vec<f64>,
}

/// Closed form for the predicted lifetime after `i` growths:
/// `pre + W (m-1)/(m+i-1) + sum_j Z_j (i+1-j)/(m+i-1)` with `m` the
/// effective recursion size (birth size, bumped to 2 for singletons).
pub fn predicted_lifetime(birth_size: u32, sample: &BackwardSample, growths: usize) -> f64 {
    let m = if birth_size == 1 { 2 } else { birth_size } as f64;
    let i = growths as f64;
    let mut t = sample.pre_growth.unwrap_or(0.0);
    t += sample.pre_waiting * (m - 1.0) / (m + i - 1.0);
    for (j, z) in sample.growth_waits.iter().take(growths).enumerate() {
        t += z * (i - j as f64) / (m + i - 1.0);
    }
    t
}

/// Backward time-change sampling of one cluster's lifetime given variate
/// accessors; `xi(i)` returns the already-scaled waiting time of the
/// `i`-th growth (1-based).
fn lifetime_from_waits(
    birth_size: u32,
    decay_rate: f64,
    eta: f64,
    pre_growth: Option<f64>,
    mut growth_wait: impl FnMut(usize) -> f64,
) -> BackwardSample {
    let m = if birth_size == 1 { 2 } else { birth_size };
    let w = eta / (decay_rate * (m - 1) as f64);
    let mut tau = pre_growth.unwrap_or(0.0);
    let mut growth_times: Vec<f64> = pre_growth.iter().copied().collect();
    let mut growth_waits = Vec::new();
    let mut kappa = w;
    let mut i = 0usize;
    loop {
        let z = growth_wait(i + 1);
        if z < kappa {
            tau += z;
            growth_times.push(tau);
            growth_waits.push(z);
            let cur = (m as usize + i) as f64;
            kappa = (cur - 1.0) / cur * (kappa - z);
            i += 1;
        } else {
            return BackwardSample {
                lifetime: tau + kappa,
                growth_times,
                end_size: m + i as u32,
                pre_waiting: w,
                pre_growth,
                growth_waits,
            };
        }
    }
}

/// Sample `(lifetime, growth times, end size)` for a cluster born at size
/// `n` under rates `(beta, theta, gamma)`, consuming the bundle's shared
/// channel.
pub fn backward_lifetime(
    n: u32,
    beta: f64,
    theta: f64,
    gamma: f64,
    bundle: &mut RandomnessBundle,
) -> Result<BackwardSample> {
    if n == 0 {
        return Err(Error::InvalidArgument("cluster size starts at 1".into()));
    }
    if beta <= 0.0 || theta <= 0.0 || gamma <= 0.0 {
        return Err(Error::InvalidArgument("rates must be strictly positive".into()));
    }
    let eta = bundle.shared.get(0);
    let pre_growth = if n == 1 { Some(bundle.shared.get(1) / beta) } else { None };
    let m = if n == 1 { 2 } else { n };
    let shared = &mut bundle.shared;
    Ok(lifetime_from_waits(n, gamma + theta, eta, pre_growth, |i| {
        shared.get(1 + i) / (beta * (m as usize + i - 1) as f64)
    }))
}

/// Direct competing-clocks simulation of one cluster of the per-edge
/// isolation variant; the independent oracle for `backward_lifetime`.
pub fn direct_cluster_sample<R: Rng + ?Sized>(
    n: u32,
    beta: f64,
    theta: f64,
    gamma: f64,
    rng: &mut R,
) -> (f64, u32, bool) {
    let mut size = n;
    let mut t = 0.0;
    loop {
        let growth_rate = beta * size as f64;
        let decay_rate = (gamma + theta) * (size - 1) as f64;
        let growth_wait = -(1.0 - rng.gen::<f64>()).ln() / growth_rate;
        if size == 1 {
            t += growth_wait;
            size += 1;
            continue;
        }
        let decay_wait = -(1.0 - rng.gen::<f64>()).ln() / decay_rate;
        if growth_wait < decay_wait {
            t += growth_wait;
            size += 1;
        } else {
            t += decay_wait;
            let frag = rng.gen::<f64>() < gamma / (gamma + theta);
            return (t, size, frag);
        }
    }
}

/// Empirical check of the exponential time-change identity
/// `(Z1, (a2/a3)(Z2 - Z1)) | {Z1 <= Z2}  =d=  (Z1, Z3) | {Z1 <= Z2}`
/// by a two-sample two-dimensional KS test; returns `(statistic, p)`.
pub fn time_change_identity_check(
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if alpha1 <= 0.0 || alpha2 <= 0.0 || alpha3 <= 0.0 {
        return Err(Error::InvalidArgument("rates must be strictly positive".into()));
    }
    let mut rng = seeds::keyed_rng(seed, 0x71c);
    let exp = |rate: f64, rng: &mut ChaCha8Rng| -(1.0 - rng.gen::<f64>()).ln() / rate;
    let mut lhs = Vec::with_capacity(samples);
    let mut rhs = Vec::with_capacity(samples);
    while lhs.len() < samples {
        let z1 = exp(alpha1, &mut rng);
        let z2 = exp(alpha2, &mut rng);
        if z1 <= z2 {
            lhs.push((z1, alpha2 / alpha3 * (z2 - z1)));
        }
    }
    while rhs.len() < samples {
        let z1 = exp(alpha1, &mut rng);
        let z2 = exp(alpha2, &mut rng);
        let z3 = exp(alpha3, &mut rng);
        if z1 <= z2 {
            rhs.push((z1, z3));
        }
    }
    Ok(stats::ks_two_sample_2d(&lhs, &rhs, 0.01))
}

/// Event outcome shared by a coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CoupledEvent {
    Isolation,
    /// `(root part, detached part)` sizes per side.
    Fragmentation { slow_children: (u32, u32), fast_children: (u32, u32) },
}

/// Coupled fragmentation/isolation outcome from the shared variates: the
/// event kind is common, and when it is a split both detached sizes come
/// from the same uniform through the floor formula, which forces
/// componentwise domination of the children.
pub fn coupled_fragmentation(
    n_slow: u32,
    n_fast: u32,
    split_uniform: f64,
    is_fragmentation: bool,
) -> Result<CoupledEvent> {
    if !is_fragmentation {
        return Ok(CoupledEvent::Isolation);
    }
    if n_slow < 2 || n_fast < n_slow {
        return Err(Error::InvalidArgument(format!(
            "fragmentation needs 2 <= n_slow <= n_fast, got ({n_slow}, {n_fast})"
        )));
    }
    let j_slow = sample_split_size(n_slow, split_uniform)?;
    let j_fast = sample_split_size(n_fast, split_uniform)?;
    Ok(CoupledEvent::Fragmentation {
        slow_children: (n_slow - j_slow, j_slow),
        fast_children: (n_fast - j_fast, j_fast),
    })
}

/// One coupled branch: both sides of one label, with the pathwise
/// domination facts asserted at construction.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledClusterSample {
    pub birth_sizes: (u32, u32),
    /// `(slow, fast)`; the fast side dies first.
    pub lifetimes: (f64, f64),
    pub growth_times: (Vec<f64>, Vec<f64>),
    pub end_sizes: (u32, u32),
    pub event: CoupledEvent,
}

fn domination_error(what: &str, label: &UhnLabel, seed: u64, detail: String) -> Error {
    Error::DominationViolated { what: what.into(), label: label.to_string(), seed, params: detail }
}

/// Couple one label across two processes with common `(theta, gamma)`,
/// birth sizes `n_slow <= n_fast` and rates `beta_slow <= beta_fast`.
/// While the slow side is smaller it consumes private growth variates;
/// after catching up to `n_fast` both sides share them.
#[allow(clippy::too_many_arguments)]
pub fn coupled_branch(
    n_slow: u32,
    n_fast: u32,
    beta_slow: f64,
    beta_fast: f64,
    theta: f64,
    gamma: f64,
    bundle: &mut RandomnessBundle,
    label: &UhnLabel,
    seed: u64,
) -> Result<CoupledClusterSample> {
    if n_slow > n_fast || beta_slow > beta_fast {
        return Err(Error::InvalidArgument(format!(
            "coupling needs n_slow <= n_fast and beta_slow <= beta_fast, got ({n_slow}, {n_fast}), ({beta_slow}, {beta_fast})"
        )));
    }
    if n_slow == 0 || beta_slow <= 0.0 || theta <= 0.0 || gamma <= 0.0 {
        return Err(Error::InvalidArgument("sizes start at 1 and rates must be positive".into()));
    }
    let decay = gamma + theta;
    let eta = bundle.shared.get(0);

    // Fast side: always fully on the shared channel.
    let m_fast = if n_fast == 1 { 2 } else { n_fast };
    let fast_pre = if n_fast == 1 { Some(bundle.shared.get(1) / beta_fast) } else { None };
    let fast = {
        let shared = &mut bundle.shared;
        lifetime_from_waits(n_fast, decay, eta, fast_pre, |i| {
            shared.get(1 + i) / (beta_fast * (m_fast as usize + i - 1) as f64)
        })
    };

    // Slow side: private variates until it reaches n_fast, shared after.
    let m_slow = if n_slow == 1 { 2 } else { n_slow };
    let catch_up = (n_fast - n_slow) as usize;
    let slow_pre = if n_slow == 1 {
        let chi = if catch_up > 0 { bundle.private.get(1) } else { bundle.shared.get(1) };
        Some(chi / beta_slow)
    } else {
        None
    };
    // Growth index i (1-based) at current size m_slow + i - 1; private
    // while that size is still below n_fast.
    let private_growths = (n_fast as usize).saturating_sub(m_slow as usize);
    let slow = {
        let shared = &mut bundle.shared;
        let private = &mut bundle.private;
        lifetime_from_waits(n_slow, decay, eta, slow_pre, |i| {
            let size_before = m_slow as usize + i - 1;
            if i <= private_growths {
                private.get(1 + i) / (beta_slow * size_before as f64)
            } else {
                shared.get(1 + (i - private_growths)) / (beta_slow * size_before as f64)
            }
        })
    };
    let _ = catch_up;

    // Pathwise domination facts.
    if fast.lifetime > slow.lifetime {
        return Err(domination_error(
            "lifetime",
            label,
            seed,
            format!("slow {} < fast {}", slow.lifetime, fast.lifetime),
        ));
    }
    if fast.end_size < slow.end_size {
        return Err(domination_error(
            "end size",
            label,
            seed,
            format!("slow {} > fast {}", slow.end_size, fast.end_size),
        ));
    }
    let event = coupled_fragmentation(
        slow.end_size,
        fast.end_size,
        bundle.split_uniform,
        bundle.is_fragmentation,
    )?;
    if let CoupledEvent::Fragmentation { slow_children, fast_children } = event {
        if slow_children.0 > fast_children.0 || slow_children.1 > fast_children.1 {
            return Err(domination_error(
                "children sizes",
                label,
                seed,
                format!("slow {slow_children:?} vs fast {fast_children:?}"),
            ));
        }
    }
    Ok(CoupledClusterSample {
        birth_sizes: (n_slow, n_fast),
        lifetimes: (slow.lifetime, fast.lifetime),
        growth_times: (slow.growth_times, fast.growth_times),
        end_sizes: (slow.end_size, fast.end_size),
        event,
    })
}

/// Per-side record of one cluster in a coupled pair of processes.
#[derive(Debug, Clone, Serialize)]
pub struct SideCluster {
    pub birth_time: f64,
    pub death_time: f64,
    pub birth_size: u32,
    pub end_size: u32,
    /// `(root part, detached part)` when the lifetime ends in a split.
    pub children: Option<(u32, u32)>,
}

impl SideCluster {
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth_time <= t && t < self.death_time
    }
}

/// Stopping-line statistic for one slow-side survivor.
#[derive(Debug, Clone, Serialize)]
pub struct StoppingStat {
    pub label: String,
    /// Last time the coupled fast cluster was alive within the horizon.
    pub tau: f64,
    /// Number of fast-side clusters alive at the horizon issued from it.
    pub offspring: u64,
}

/// Full coupled pair of per-edge-isolation processes on `[0, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledPairOutcome {
    pub slow: HashMap<String, SideCluster>,
    pub fast: HashMap<String, SideCluster>,
    pub stopping: Vec<StoppingStat>,
    pub censored: bool,
}

/// Breadth-first construction of the monotone coupling of two processes
/// with `n0 <= n0_fast` and `beta <= beta_fast` over shared label-keyed
/// bundles. Labels alive in only one process consume the shared channel
/// (the equal-size branch); the other channel's variates are discarded.
#[allow(clippy::too_many_arguments)]
pub fn coupled_processes(
    n0_slow: u32,
    n0_fast: u32,
    beta_slow: f64,
    beta_fast: f64,
    theta: f64,
    gamma: f64,
    horizon: f64,
    master_seed: u64,
    label_cap: usize,
) -> Result<CoupledPairOutcome> {
    if n0_slow > n0_fast || beta_slow > beta_fast {
        return Err(Error::InvalidArgument(
            "coupled processes need n0_slow <= n0_fast and beta_slow <= beta_fast".into(),
        ));
    }
    Params::new(beta_slow, theta, gamma, Variant::ModifiedEdgeIsolation)?;
    let frag_prob = gamma / (gamma + theta);
    let mut slow_map: HashMap<String, SideCluster> = HashMap::new();
    let mut fast_map: HashMap<String, SideCluster> = HashMap::new();
    let mut censored = false;

    #[derive(Clone, Copy)]
    struct Birth {
        time: f64,
        size: u32,
    }
    let mut queue: VecDeque<(UhnLabel, Option<Birth>, Option<Birth>)> = VecDeque::new();
    queue.push_back((
        UhnLabel::root(),
        Some(Birth { time: 0.0, size: n0_slow }),
        Some(Birth { time: 0.0, size: n0_fast }),
    ));
    let mut processed = 0usize;

    while let Some((label, slow_birth, fast_birth)) = queue.pop_front() {
        let slow_birth = slow_birth.filter(|b| b.time <= horizon);
        let fast_birth = fast_birth.filter(|b| b.time <= horizon);
        if slow_birth.is_none() && fast_birth.is_none() {
            continue;
        }
        processed += 1;
        if processed > label_cap || label.depth() > 58 {
            censored = true;
            break;
        }
        let mut bundle = RandomnessBundle::for_label(master_seed, &label, frag_prob);

        let (slow_sample, fast_sample) = match (slow_birth, fast_birth) {
            (Some(sb), Some(fb)) => {
                if sb.size > fb.size {
                    return Err(domination_error(
                        "birth size",
                        &label,
                        master_seed,
                        format!("slow {} > fast {}", sb.size, fb.size),
                    ));
                }
                let branch = coupled_branch(
                    sb.size,
                    fb.size,
                    beta_slow,
                    beta_fast,
                    theta,
                    gamma,
                    &mut bundle,
                    &label,
                    master_seed,
                )?;
                let (slow_children, fast_children) = match branch.event {
                    CoupledEvent::Isolation => (None, None),
                    CoupledEvent::Fragmentation { slow_children, fast_children } => {
                        (Some(slow_children), Some(fast_children))
                    }
                };
                (
                    Some(SideCluster {
                        birth_time: sb.time,
                        death_time: sb.time + branch.lifetimes.0,
                        birth_size: sb.size,
                        end_size: branch.end_sizes.0,
                        children: slow_children,
                    }),
                    Some(SideCluster {
                        birth_time: fb.time,
                        death_time: fb.time + branch.lifetimes.1,
                        birth_size: fb.size,
                        end_size: branch.end_sizes.1,
                        children: fast_children,
                    }),
                )
            }
            (Some(sb), None) => {
                let sample = backward_lifetime(sb.size, beta_slow, theta, gamma, &mut bundle)?;
                let event = coupled_fragmentation(
                    sample.end_size,
                    sample.end_size,
                    bundle.split_uniform,
                    bundle.is_fragmentation,
                )?;
                let children = match event {
                    CoupledEvent::Isolation => None,
                    CoupledEvent::Fragmentation { slow_children, .. } => Some(slow_children),
                };
                (
                    Some(SideCluster {
                        birth_time: sb.time,
                        death_time: sb.time + sample.lifetime,
                        birth_size: sb.size,
                        end_size: sample.end_size,
                        children,
                    }),
                    None,
                )
            }
            (None, Some(fb)) => {
                let sample = backward_lifetime(fb.size, beta_fast, theta, gamma, &mut bundle)?;
                let event = coupled_fragmentation(
                    sample.end_size,
                    sample.end_size,
                    bundle.split_uniform,
                    bundle.is_fragmentation,
                )?;
                let children = match event {
                    CoupledEvent::Isolation => None,
                    CoupledEvent::Fragmentation { fast_children, .. } => Some(fast_children),
                };
                (
                    None,
                    Some(SideCluster {
                        birth_time: fb.time,
                        death_time: fb.time + sample.lifetime,
                        birth_size: fb.size,
                        end_size: sample.end_size,
                        children,
                    }),
                )
            }
            (None, None) => unreachable!("filtered above"),
        };

        let mut slow_child_births = (None, None);
        if let Some(sc) = &slow_sample {
            if let Some((first, second)) = sc.children {
                slow_child_births = (
                    Some(Birth { time: sc.death_time, size: first }),
                    Some(Birth { time: sc.death_time, size: second }),
                );
            }
            slow_map.insert(label.to_string(), sc.clone());
        }
        let mut fast_child_births = (None, None);
        if let Some(fc) = &fast_sample {
            if let Some((first, second)) = fc.children {
                fast_child_births = (
                    Some(Birth { time: fc.death_time, size: first }),
                    Some(Birth { time: fc.death_time, size: second }),
                );
            }
            fast_map.insert(label.to_string(), fc.clone());
        }
        if slow_child_births.0.is_some() || fast_child_births.0.is_some() {
            queue.push_back((label.child(1), slow_child_births.0, fast_child_births.0));
            queue.push_back((label.child(2), slow_child_births.1, fast_child_births.1));
        }
    }

    // Stopping line: every slow-side survivor at the horizon must have a
    // coupled fast cluster that was alive at some time within [0, T].
    let mut stopping = Vec::new();
    if !censored {
        // Offspring attribution: each fast-side survivor charges its
        // nearest ancestor-or-self that survives on the slow side.
        let mut offspring: HashMap<String, u64> = HashMap::new();
        for (label_str, fc) in &fast_map {
            if !fc.alive_at(horizon) {
                continue;
            }
            let mut cursor: Vec<u8> =
                label_str.bytes().map(|b| b - b'0').collect();
            loop {
                let key: String = cursor.iter().map(|d| d.to_string()).collect();
                if slow_map.get(&key).map(|c| c.alive_at(horizon)).unwrap_or(false) {
                    *offspring.entry(key).or_insert(0) += 1;
                    break;
                }
                if cursor.is_empty() {
                    break;
                }
                cursor.pop();
            }
        }
        for (label_str, sc) in &slow_map {
            if !sc.alive_at(horizon) {
                continue;
            }
            let fc = fast_map.get(label_str).ok_or_else(|| {
                domination_error(
                    "missing coupled fast cluster",
                    &UhnLabel::root(),
                    master_seed,
                    label_str.clone(),
                )
            })?;
            if fc.birth_time > horizon {
                return Err(domination_error(
                    "fast birth after horizon",
                    &UhnLabel::root(),
                    master_seed,
                    label_str.clone(),
                ));
            }
            stopping.push(StoppingStat {
                label: label_str.clone(),
                tau: fc.death_time.min(horizon),
                offspring: offspring.get(label_str).copied().unwrap_or(0),
            });
        }
    }

    Ok(CoupledPairOutcome { slow: slow_map, fast: fast_map, stopping, censored })
}

/// Sign of the per-edge-isolation exponent via the identity shift from
/// the standard root: positive iff `gamma > theta`.
pub fn modified_phase_check(
    params: &Params,
    tol: f64,
    opts: &crate::spectral::PerronOptions,
) -> Result<(f64, i8)> {
    let res: crate::spectral::MalthusianResult<f64> = crate::spectral::malthusian_exponent(
        params.rates(),
        crate::spectral::GeneratorVariant::Standard,
        tol,
        opts,
    )?;
    // Per-edge isolation removes one theta per cluster from the diagonal,
    // so its root is the standard root shifted up by theta.
    let shifted = res.lambda + params.theta;
    let sign = if shifted > tol {
        1
    } else if shifted < -tol {
        -1
    } else {
        0
    };
    Ok((shifted, sign))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle_for(seed: u64, label: &UhnLabel) -> RandomnessBundle {
        RandomnessBundle::for_label(seed, label, 0.5)
    }

    #[test]
    fn bundles_are_reproducible_per_label() {
        let root = UhnLabel::root();
        let mut a = bundle_for(5, &root);
        let mut b = bundle_for(5, &root);
        assert_eq!(a.split_uniform, b.split_uniform);
        assert_eq!(a.is_fragmentation, b.is_fragmentation);
        assert_eq!(a.shared.get(3), b.shared.get(3));
        assert_eq!(a.private.get(0), b.private.get(0));
        let mut c = bundle_for(5, &root.child(1));
        assert_ne!(a.shared.get(0), c.shared.get(0));
    }

    #[test]
    fn size2_immediate_decay_is_exponential_rate_sum() {
        // With no growth accepted, the lifetime equals W ~ Exp(gamma+theta).
        let mut seen = Vec::new();
        for s in 0..20_000u64 {
            let mut b = bundle_for(s, &UhnLabel::root());
            let sample = backward_lifetime(2, 1.0, 1.0, 1.0, &mut b).unwrap();
            if sample.growth_times.is_empty() {
                assert_eq!(sample.lifetime, sample.pre_waiting);
                assert_eq!(sample.end_size, 2);
            }
            seen.push(sample.lifetime);
        }
        assert!(!seen.is_empty());
    }

    #[test]
    fn closed_form_matches_recursion() {
        for s in 0..10_000u64 {
            let n = 1 + (s % 5) as u32;
            let mut b = bundle_for(s ^ 0xF00, &UhnLabel::root());
            let sample = backward_lifetime(n, 1.3, 0.7, 1.1, &mut b).unwrap();
            let growths = sample.growth_waits.len();
            let predicted = predicted_lifetime(n, &sample, growths);
            assert!(
                (predicted - sample.lifetime).abs() < 1e-10 * (1.0 + sample.lifetime),
                "n={n} s={s}: {predicted} vs {}",
                sample.lifetime
            );
            // The predicted lifetime decreases as more growths are revealed.
            let mut prev = predicted_lifetime(n, &sample, 0);
            for i in 1..=growths {
                let cur = predicted_lifetime(n, &sample, i);
                assert!(cur <= prev + 1e-12);
                prev = cur;
            }
        }
    }

    #[test]
    fn backward_sampler_matches_direct_clocks() {
        // Two-sample KS on lifetimes plus chi-square on end sizes.
        let n_samples = 30_000;
        let (beta, theta, gamma) = (1.0, 0.8, 1.4);
        let mut lifetimes_a = Vec::with_capacity(n_samples);
        let mut sizes_a: std::collections::BTreeMap<u32, u64> = Default::default();
        for s in 0..n_samples as u64 {
            let mut b = bundle_for(s ^ 0xAB, &UhnLabel::root());
            let sample = backward_lifetime(3, beta, theta, gamma, &mut b).unwrap();
            lifetimes_a.push(sample.lifetime);
            *sizes_a.entry(sample.end_size.min(12)).or_insert(0) += 1;
        }
        let mut rng = seeds::keyed_rng(0xD1EC7, 0);
        let mut lifetimes_b = Vec::with_capacity(n_samples);
        let mut sizes_b: std::collections::BTreeMap<u32, u64> = Default::default();
        for _ in 0..n_samples {
            let (t, size, _) = direct_cluster_sample(3, beta, theta, gamma, &mut rng);
            lifetimes_b.push(t);
            *sizes_b.entry(size.min(12)).or_insert(0) += 1;
        }
        let (d, crit) = stats::ks_two_sample(&lifetimes_a, &lifetimes_b, 0.01);
        assert!(d < crit, "lifetime KS {d} >= {crit}");
        let keys: Vec<u32> = sizes_a.keys().chain(sizes_b.keys()).copied().collect();
        let a: Vec<u64> = keys.iter().map(|k| sizes_a.get(k).copied().unwrap_or(0)).collect();
        let b: Vec<u64> = keys.iter().map(|k| sizes_b.get(k).copied().unwrap_or(0)).collect();
        let (stat, crit) = stats::chi_square_homogeneity(&a, &b, 0.01);
        assert!(stat < crit, "end-size chi2 {stat} >= {crit}");
    }

    #[test]
    fn coupled_fragmentation_examples() {
        // Equal sizes give identical outcomes.
        match coupled_fragmentation(5, 5, 0.37, true).unwrap() {
            CoupledEvent::Fragmentation { slow_children, fast_children } => {
                assert_eq!(slow_children, fast_children);
            }
            _ => panic!("expected fragmentation"),
        }
        // N = 2, N' = 3, u = 0.2: j = 1, j' = 2.
        match coupled_fragmentation(2, 3, 0.2, true).unwrap() {
            CoupledEvent::Fragmentation { slow_children, fast_children } => {
                assert_eq!(slow_children, (1, 1));
                assert_eq!(fast_children, (1, 2));
            }
            _ => panic!("expected fragmentation"),
        }
        assert_eq!(coupled_fragmentation(2, 3, 0.2, false).unwrap(), CoupledEvent::Isolation);
    }

    #[test]
    fn identical_parameters_make_identical_branches() {
        for s in 0..500u64 {
            let mut b = bundle_for(s, &UhnLabel::root());
            let c =
                coupled_branch(3, 3, 1.0, 1.0, 0.7, 1.3, &mut b, &UhnLabel::root(), s).unwrap();
            assert_eq!(c.lifetimes.0, c.lifetimes.1);
            assert_eq!(c.end_sizes.0, c.end_sizes.1);
            assert_eq!(c.growth_times.0, c.growth_times.1);
        }
    }

    #[test]
    fn domination_holds_across_parameter_sweeps() {
        let mut checked = 0u64;
        for s in 0..20_000u64 {
            let n = 1 + (s % 4) as u32;
            let n_fast = n + (s / 7 % 3) as u32;
            let beta = 0.5 + (s % 3) as f64 * 0.5;
            let beta_fast = beta + (s % 2) as f64;
            let label = UhnLabel::root();
            let mut b = bundle_for(s ^ 0xC0FFEE, &label);
            let c = coupled_branch(n, n_fast, beta, beta_fast, 1.0, 1.0, &mut b, &label, s)
                .expect("no domination violation");
            assert!(c.lifetimes.1 <= c.lifetimes.0);
            assert!(c.end_sizes.0 <= c.end_sizes.1);
            checked += 1;
        }
        assert_eq!(checked, 20_000);
    }

    #[test]
    fn coupled_branch_marginals_match_uncoupled_sampler() {
        // The slow side of a (1, 3) coupling must be distributed as an
        // uncoupled size-1 cluster.
        let n_samples = 20_000;
        let mut coupled = Vec::with_capacity(n_samples);
        let mut plain = Vec::with_capacity(n_samples);
        for s in 0..n_samples as u64 {
            let label = UhnLabel::root();
            let mut b = bundle_for(s ^ 0x5A5A, &label);
            let c = coupled_branch(1, 3, 1.0, 1.0, 1.0, 1.0, &mut b, &label, s).unwrap();
            coupled.push(c.lifetimes.0);
            let mut b2 = bundle_for(s ^ 0xFACE, &label);
            plain.push(backward_lifetime(1, 1.0, 1.0, 1.0, &mut b2).unwrap().lifetime);
        }
        let (d, crit) = stats::ks_two_sample(&coupled, &plain, 0.01);
        assert!(d < crit, "KS {d} >= {crit}");
    }

    #[test]
    fn time_change_identity_unit_rates() {
        let (_, p) = time_change_identity_check(1.0, 1.0, 1.0, 20_000, 0xE1).unwrap();
        assert!(p > 0.01, "p = {p}");
        let (_, p) = time_change_identity_check(2.0, 1.0, 3.0, 20_000, 0xE2).unwrap();
        assert!(p > 0.01, "p = {p}");
        assert!(time_change_identity_check(1.0, 0.0, 1.0, 100, 0).is_err());
    }

    #[test]
    fn identical_processes_coincide_and_stopping_line_covers() {
        let out = coupled_processes(1, 1, 1.0, 1.0, 1.0, 2.0, 4.0, 77, 100_000).unwrap();
        assert!(!out.censored);
        assert_eq!(out.slow.len(), out.fast.len());
        for (label, sc) in &out.slow {
            let fc = &out.fast[label];
            assert_eq!(sc.death_time, fc.death_time);
            assert_eq!(sc.end_size, fc.end_size);
        }
        // Identical sides: every survivor's coupled stopping time is T and
        // it has exactly itself as offspring.
        for stat in &out.stopping {
            assert_eq!(stat.tau, 4.0);
            assert_eq!(stat.offspring, 1);
        }
    }

    #[test]
    fn coupled_processes_stopping_line_dominates() {
        let mut with_survivors = 0;
        for s in 0..40u64 {
            let out = coupled_processes(1, 2, 0.8, 1.2, 1.0, 1.5, 3.0, 1000 + s, 200_000).unwrap();
            if out.censored {
                continue;
            }
            for stat in &out.stopping {
                assert!(stat.tau <= 3.0);
            }
            if !out.stopping.is_empty() {
                with_survivors += 1;
            }
        }
        assert!(with_survivors > 0, "no pair had slow-side survivors");
    }

    #[test]
    fn modified_phase_signs() {
        let opts = crate::spectral::PerronOptions { initial_n: 64, ..Default::default() };
        let equal = Params::modified(1.0, 1.0, 1.0).unwrap();
        let (lam, sign) = modified_phase_check(&equal, 1e-7, &opts).unwrap();
        assert_eq!(sign, 0, "lambda_bar = {lam}");
        let frag_heavy = Params::modified(1.0, 0.5, 1.0).unwrap();
        assert_eq!(modified_phase_check(&frag_heavy, 1e-7, &opts).unwrap().1, 1);
        let iso_heavy = Params::modified(1.0, 1.0, 0.5).unwrap();
        assert_eq!(modified_phase_check(&iso_heavy, 1e-7, &opts).unwrap().1, -1);
    }
}
