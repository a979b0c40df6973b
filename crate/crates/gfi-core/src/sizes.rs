//! Reduced simulation of the size process: clusters of equal size are
//! exchangeable, so the state is a pair of count maps and event selection
//! scans size classes instead of clusters. This is the fast path for
//! Monte Carlo at scale.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::events::{EventKind, EventRecord, SimOptions, Snapshot, Trajectory};
use crate::params::Params;
use crate::rrt;
use crate::testfn::TestFunction;
use crate::{Error, Result};

/// Which cluster pool a functional is evaluated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Active,
    Inactive,
}

/// Counts of clusters by size for both pools.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeState {
    pub time: f64,
    pub active: BTreeMap<u32, u64>,
    pub inactive: BTreeMap<u32, u64>,
}

impl SizeState {
    pub fn single(n: u32) -> Self {
        Self { time: 0.0, active: BTreeMap::from([(n, 1)]), inactive: BTreeMap::new() }
    }

    pub fn from_histogram(histogram: &[(u32, u64)]) -> Result<Self> {
        let mut active = BTreeMap::new();
        for &(n, c) in histogram {
            if n == 0 {
                return Err(Error::InvalidArgument("cluster sizes start at 1".into()));
            }
            if c > 0 {
                *active.entry(n).or_insert(0) += c;
            }
        }
        if active.is_empty() {
            return Err(Error::InvalidArgument("initial state needs at least one cluster".into()));
        }
        Ok(Self { time: 0.0, active, inactive: BTreeMap::new() })
    }

    pub fn is_extinct(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_clusters(&self) -> u64 {
        self.active.values().sum()
    }

    pub fn active_vertices(&self) -> u64 {
        self.active.iter().map(|(&n, &c)| n as u64 * c).sum()
    }

    pub fn total_rate(&self, params: &Params) -> f64 {
        self.active.iter().map(|(&n, &c)| c as f64 * params.cluster_rate(n)).sum()
    }

    pub fn snapshot(&self, time: f64) -> Snapshot {
        Snapshot { time, active: self.active.clone(), inactive: self.inactive.clone() }
    }

    /// Exact weighted sum `sum_n counts(n) f(n)` over the chosen pool.
    pub fn pair_functional(&self, f: &TestFunction, pool: Pool) -> f64 {
        let map = match pool {
            Pool::Active => &self.active,
            Pool::Inactive => &self.inactive,
        };
        map.iter().map(|(&n, &c)| c as f64 * f.eval(n)).sum()
    }

    fn remove_one(&mut self, n: u32) {
        let c = self.active.get_mut(&n).expect("size class present");
        *c -= 1;
        if *c == 0 {
            self.active.remove(&n);
        }
    }
}

fn exp_waiting_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("positive rate").sample(rng)
}

/// Apply one event at the already-advanced `state.time`.
fn apply_random_event<R: Rng + ?Sized>(
    state: &mut SizeState,
    params: &Params,
    rng: &mut R,
) -> EventRecord {
    let total = state.total_rate(params);
    let mut target = rng.gen::<f64>() * total;
    let mut chosen = *state.active.keys().next_back().expect("non-extinct");
    for (&n, &c) in &state.active {
        let class_rate = c as f64 * params.cluster_rate(n);
        if target < class_rate {
            chosen = n;
            break;
        }
        target -= class_rate;
    }
    let n = chosen;
    // Category within one cluster of the chosen class.
    let per_cluster = target % params.cluster_rate(n);
    let growth_rate = params.beta * n as f64;
    let isolation_rate = params.variant.isolation_rate(params.theta, n);
    let time = state.time;
    if per_cluster < growth_rate {
        state.remove_one(n);
        *state.active.entry(n + 1).or_insert(0) += 1;
        EventRecord { time, kind: EventKind::Growth, label: None, size_before: n, children: None }
    } else if per_cluster < growth_rate + isolation_rate {
        state.remove_one(n);
        *state.inactive.entry(n).or_insert(0) += 1;
        EventRecord { time, kind: EventKind::Isolation, label: None, size_before: n, children: None }
    } else {
        // Fragmentation; detached size from the exact split law, with a
        // (0, 1] uniform variate feeding the closed-form inverse CDF.
        let u = 1.0 - rng.gen::<f64>();
        let j = rrt::sample_split_size(n, u).expect("n >= 2 in fragmentation");
        state.remove_one(n);
        *state.active.entry(n - j).or_insert(0) += 1;
        *state.active.entry(j).or_insert(0) += 1;
        EventRecord {
            time,
            kind: EventKind::Fragmentation,
            label: None,
            size_before: n,
            children: Some([(None, n - j), (None, j)]),
        }
    }
}

/// Sample and apply the next event of the size process.
pub fn step<R: Rng + ?Sized>(
    state: &mut SizeState,
    params: &Params,
    rng: &mut R,
) -> Result<EventRecord> {
    if state.is_extinct() {
        return Err(Error::Stopped);
    }
    let wait = exp_waiting_time(state.total_rate(params), rng);
    state.time += wait;
    Ok(apply_random_event(state, params, rng))
}

/// Run a size-level trajectory to the horizon with snapshot observations.
pub fn simulate_with<R: Rng + ?Sized>(
    params: &Params,
    mut state: SizeState,
    opts: &SimOptions,
    rng: &mut R,
    mut observe: impl FnMut(&SizeState, f64),
) -> Result<Trajectory> {
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut extinction_time = None;
    let mut censored = false;
    let mut obs_iter = opts.obs_times.iter().copied().peekable();
    let mut event_count = 0u64;

    loop {
        let next_jump = if state.is_extinct() {
            f64::INFINITY
        } else {
            state.time + exp_waiting_time(state.total_rate(params), rng)
        };
        while let Some(&t_obs) = obs_iter.peek() {
            if t_obs <= next_jump.min(opts.horizon) {
                snapshots.push(state.snapshot(t_obs));
                observe(&state, t_obs);
                obs_iter.next();
            } else {
                break;
            }
        }
        if state.is_extinct() {
            extinction_time = Some(state.time);
            break;
        }
        if next_jump > opts.horizon {
            break;
        }
        state.time = next_jump;
        let record = apply_random_event(&mut state, params, rng);
        event_count += 1;
        if opts.record_events {
            events.push(record);
        }
        if state.active_clusters() as usize > opts.cluster_cap || event_count >= opts.event_cap {
            censored = true;
            break;
        }
    }
    Ok(Trajectory { events, snapshots, extinction_time, censored })
}

/// [`simulate_with`] without an observer.
pub fn simulate<R: Rng + ?Sized>(
    params: &Params,
    state: SizeState,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_with(params, state, opts, rng, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::replica_rng;

    #[test]
    fn total_rates_by_state() {
        let params = Params::standard(1.0, 1.0, 1.0).unwrap();
        let s1 = SizeState::single(1);
        assert_eq!(s1.total_rate(&params), 2.0); // beta + theta, no edge
        let s2 = SizeState::single(2);
        assert_eq!(s2.total_rate(&params), 5.0); // 2b + 2t + g
        let mixed = SizeState::from_histogram(&[(1, 2), (2, 1)]).unwrap();
        assert_eq!(mixed.total_rate(&params), 9.0);
    }

    #[test]
    fn size1_cannot_fragment_and_odds_are_beta_theta() {
        let params = Params::standard(3.0, 1.0, 7.0).unwrap();
        let mut rng = replica_rng(21, 0);
        let mut growths = 0u64;
        let trials = 40_000;
        for _ in 0..trials {
            let mut state = SizeState::single(1);
            let rec = step(&mut state, &params, &mut rng).unwrap();
            match rec.kind {
                EventKind::Growth => growths += 1,
                EventKind::Isolation => {}
                EventKind::Fragmentation => panic!("size-1 cluster cannot fragment"),
            }
        }
        let p = growths as f64 / trials as f64;
        let sigma = (0.75 * 0.25 / trials as f64).sqrt();
        assert!((p - 0.75).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn fragmentation_of_two_always_splits_evenly() {
        let params = Params::standard(1e-12, 1e-12, 1.0).unwrap();
        let mut rng = replica_rng(22, 0);
        for _ in 0..200 {
            let mut state = SizeState::single(2);
            let rec = step(&mut state, &params, &mut rng).unwrap();
            assert_eq!(rec.kind, EventKind::Fragmentation);
            assert_eq!(rec.children.unwrap(), [(None, 1), (None, 1)]);
            assert_eq!(state.active, BTreeMap::from([(1u32, 2u64)]));
        }
    }

    #[test]
    fn vertex_conservation_rules() {
        let params = Params::standard(1.2, 0.7, 2.0).unwrap();
        let mut rng = replica_rng(23, 0);
        let mut state = SizeState::from_histogram(&[(3, 2)]).unwrap();
        for _ in 0..5000 {
            if state.is_extinct() {
                break;
            }
            let av = state.active_vertices();
            let iv: u64 = state.inactive.iter().map(|(&n, &c)| n as u64 * c).sum();
            let rec = step(&mut state, &params, &mut rng).unwrap();
            let av2 = state.active_vertices();
            let iv2: u64 = state.inactive.iter().map(|(&n, &c)| n as u64 * c).sum();
            match rec.kind {
                EventKind::Growth => {
                    assert_eq!(av2, av + 1);
                    assert_eq!(iv2, iv);
                }
                EventKind::Isolation => {
                    assert_eq!(av2, av - rec.size_before as u64);
                    assert_eq!(iv2, iv + rec.size_before as u64);
                }
                EventKind::Fragmentation => {
                    assert_eq!(av2, av);
                    assert_eq!(iv2, iv);
                }
            }
            // Inactive vertex mass never decreases.
            assert!(iv2 >= iv);
        }
    }

    #[test]
    fn yule_mean_vertices_from_size_n() {
        // <X_t, [x]> has mean n e^{beta t} for the pure growth process.
        let params = Params::growth_only(1.0).unwrap();
        let n0 = 3u32;
        let t = 1.5;
        let opts = SimOptions::to_horizon(t).with_obs(&[t]);
        let reps = 4000;
        let mut values = Vec::with_capacity(reps as usize);
        for i in 0..reps {
            let mut rng = replica_rng(3_000, i);
            let traj = simulate(&params, SizeState::single(n0), &opts, &mut rng).unwrap();
            values.push(traj.snapshots[0].active_vertices() as f64);
        }
        let (mean, _) = crate::stats::mean_var(&values);
        let se = crate::stats::standard_error(&values);
        let expect = n0 as f64 * t.exp();
        assert!((mean - expect).abs() < 4.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn heavy_isolation_extinction_frequency() {
        let params = Params::standard(1.0, 30.0, 1.0).unwrap();
        let opts = SimOptions::to_horizon(30.0);
        let mut extinct = 0u64;
        let trials = 500;
        for i in 0..trials {
            let mut rng = replica_rng(24, i);
            let traj = simulate(&params, SizeState::single(1), &opts, &mut rng).unwrap();
            if traj.extinction_time.is_some() {
                extinct += 1;
            }
        }
        assert!(extinct as f64 / trials as f64 > 0.99);
    }

    #[test]
    fn pair_functionals() {
        let state = SizeState {
            time: 0.0,
            active: BTreeMap::from([(1, 2), (3, 1)]),
            inactive: BTreeMap::from([(2, 4)]),
        };
        assert_eq!(state.pair_functional(&TestFunction::one(), Pool::Active), 3.0);
        assert_eq!(state.pair_functional(&TestFunction::identity(), Pool::Active), 5.0);
        let ind3 = TestFunction::indicator(3).unwrap();
        assert_eq!(state.pair_functional(&ind3, Pool::Active), 1.0);
        assert_eq!(state.pair_functional(&TestFunction::identity(), Pool::Inactive), 8.0);
    }

    #[test]
    fn snapshot_at_zero_is_initial() {
        let params = Params::standard(1.0, 1.0, 1.0).unwrap();
        let mut rng = replica_rng(25, 0);
        let opts = SimOptions::to_horizon(0.5).with_obs(&[0.0]);
        let traj = simulate(&params, SizeState::single(4), &opts, &mut rng).unwrap();
        assert_eq!(traj.snapshots[0].active, BTreeMap::from([(4u32, 1u64)]));
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let params = Params::standard(1.0, 0.4, 4.0).unwrap();
        let opts =
            SimOptions { horizon: 4.0, record_events: true, ..Default::default() }.with_obs(&[2.0, 4.0]);
        let run = |seed| {
            let mut rng = replica_rng(seed, 5);
            simulate(&params, SizeState::single(1), &opts, &mut rng).unwrap()
        };
        let (a, b) = (run(99), run(99));
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.events.len(), b.events.len());
    }
}
