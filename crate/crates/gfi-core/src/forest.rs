//! Exact event-driven simulation of the full process: every cluster keeps
//! its tree shape, vertex infection times, and an Ulam-Harris-Neveu word
//! locating it in the binary genealogy of clusters (fragmentation replaces
//! a label `u` by `u1` for the part holding the root and `u2` for the
//! detached part).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::events::{EventKind, EventRecord, SimOptions, Snapshot, Trajectory};
use crate::params::Params;
use crate::rrt::{self, RecursiveTree, ENUMERATION_CAP};
use crate::{Error, Result};

/// Ulam-Harris-Neveu word over `{1, 2}`; the initial cluster is the empty
/// word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UhnLabel(Vec<u8>);

impl UhnLabel {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    /// `which` is 1 (keeps the root) or 2 (detached part).
    pub fn child(&self, which: u8) -> Self {
        debug_assert!(which == 1 || which == 2);
        let mut w = self.0.clone();
        w.push(which);
        Self(w)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(Self(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_ancestor_of(&self, other: &UhnLabel) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Injective integer code (leading-one sentinel over the binary word),
    /// used to key per-label randomness streams.
    pub fn code(&self) -> u64 {
        let mut c = 1u64;
        for &sym in &self.0 {
            c = c << 1 | (sym as u64 - 1);
        }
        c
    }
}

impl fmt::Display for UhnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &sym in &self.0 {
            write!(f, "{sym}")?;
        }
        Ok(())
    }
}

/// One cluster: canonical tree shape plus the infection times of its
/// vertices in rank order.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub tree: RecursiveTree,
    pub birth_times: Vec<f64>,
    pub label: UhnLabel,
    pub active: bool,
}

impl ClusterState {
    pub fn size(&self) -> u32 {
        self.tree.size()
    }

    fn check(&self) {
        debug_assert_eq!(self.birth_times.len() as u32, self.tree.size());
        debug_assert!(self.birth_times.windows(2).all(|w| w[0] < w[1]));
    }
}

/// Full state of the simulation: both cluster pools and the maintained
/// total event rate of the active pool.
#[derive(Debug, Clone)]
pub struct ForestState {
    pub time: f64,
    pub active: Vec<ClusterState>,
    pub inactive: Vec<ClusterState>,
    params: Params,
    total_rate: f64,
    events_since_refresh: u32,
}

impl ForestState {
    /// Start from a single active uniform recursive tree of size `n` at
    /// time zero. Synthetic infection times fill the past; only their
    /// order matters.
    pub fn single_cluster<R: Rng + ?Sized>(params: Params, n: u32, rng: &mut R) -> Result<Self> {
        Self::from_sizes(params, &[(n, 1)], rng)
    }

    /// Start from independent uniform recursive trees with the given size
    /// histogram, all active.
    pub fn from_sizes<R: Rng + ?Sized>(
        params: Params,
        histogram: &[(u32, u64)],
        rng: &mut R,
    ) -> Result<Self> {
        let mut active = Vec::new();
        let mut stagger = 0u64;
        for &(n, count) in histogram {
            for _ in 0..count {
                let tree = rrt::sample_uniform_rrt(n, rng)?;
                // Strictly increasing synthetic times ending before zero.
                let birth_times: Vec<f64> = (0..n)
                    .map(|i| ((stagger * n as u64 + i as u64) as f64 - 1e9) * 1e-12)
                    .collect();
                active.push(ClusterState {
                    tree,
                    birth_times,
                    label: UhnLabel::root(),
                    active: true,
                });
                stagger += 1;
            }
        }
        if active.is_empty() {
            return Err(Error::InvalidArgument("initial state needs at least one cluster".into()));
        }
        if active.len() > 1 {
            // A forest start keeps per-root genealogies; labels are only
            // unique within one genealogy, so tag roots by index order.
            // The single-cluster start is the common case in this crate.
            for (i, c) in active.iter_mut().enumerate() {
                let mut w = Vec::new();
                for _ in 0..i {
                    w.push(1u8);
                }
                c.label = UhnLabel(w);
            }
        }
        let total_rate = active.iter().map(|c| params.cluster_rate(c.size())).sum();
        Ok(Self { time: 0.0, active, inactive: Vec::new(), params, total_rate, events_since_refresh: 0 })
    }

    pub fn params(&self) -> Params {
        self.params
    }

    pub fn is_extinct(&self) -> bool {
        self.active.is_empty()
    }

    /// Maintained total event rate `sum_clusters ((beta+theta+gamma) n - ...)`.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    fn refresh_rate(&mut self) {
        self.total_rate =
            self.active.iter().map(|c| self.params.cluster_rate(c.size())).sum();
        self.events_since_refresh = 0;
    }

    fn bump_rate(&mut self, delta: f64) {
        self.total_rate += delta;
        self.events_since_refresh += 1;
        if self.events_since_refresh >= 4096 {
            self.refresh_rate();
        }
    }
}

/// Histograms of cluster sizes per pool.
pub fn observe_sizes(state: &ForestState) -> (BTreeMap<u32, u64>, BTreeMap<u32, u64>) {
    let mut active = BTreeMap::new();
    for c in &state.active {
        *active.entry(c.size()).or_insert(0) += 1;
    }
    let mut inactive = BTreeMap::new();
    for c in &state.inactive {
        *inactive.entry(c.size()).or_insert(0) += 1;
    }
    (active, inactive)
}

fn snapshot_at(state: &ForestState, time: f64) -> Snapshot {
    let (active, inactive) = observe_sizes(state);
    Snapshot { time, active, inactive }
}

/// Counts of canonical tree classes up to size `cap`, per pool.
pub fn observe_tree_classes(
    state: &ForestState,
    cap: u32,
) -> Result<(BTreeMap<RecursiveTree, u64>, BTreeMap<RecursiveTree, u64>)> {
    if cap > ENUMERATION_CAP {
        return Err(Error::ResourceCap(format!(
            "class observation cap {cap} above the enumeration cap {ENUMERATION_CAP}"
        )));
    }
    let mut active = BTreeMap::new();
    for c in state.active.iter().filter(|c| c.size() <= cap) {
        *active.entry(c.tree.clone()).or_insert(0) += 1;
    }
    let mut inactive = BTreeMap::new();
    for c in state.inactive.iter().filter(|c| c.size() <= cap) {
        *inactive.entry(c.tree.clone()).or_insert(0) += 1;
    }
    Ok((active, inactive))
}

fn exp_waiting_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    Exp::new(rate).expect("positive rate").sample(rng)
}

/// Apply one event at the already-advanced `state.time`. Callers must have
/// checked that the state is not extinct.
fn apply_random_event<R: Rng + ?Sized>(state: &mut ForestState, rng: &mut R) -> EventRecord {
    let params = state.params;
    // Pick the cluster proportionally to its total rate, then the
    // category within the cluster.
    let mut target = rng.gen::<f64>() * state.total_rate();
    let mut idx = state.active.len() - 1;
    for (i, c) in state.active.iter().enumerate() {
        let r = params.cluster_rate(c.size());
        if target < r {
            idx = i;
            break;
        }
        target -= r;
    }
    let n = state.active[idx].size();
    let growth_rate = params.beta * n as f64;
    let isolation_rate = params.variant.isolation_rate(params.theta, n);
    let old_rate = params.cluster_rate(n);
    let time = state.time;

    if target < growth_rate {
        // Growth: attach to a uniformly chosen vertex.
        let cluster = &mut state.active[idx];
        let label = cluster.label.to_string();
        let vertex = rng.gen_range(1..=n);
        cluster.tree.attach(vertex);
        cluster.birth_times.push(time);
        cluster.check();
        state.bump_rate(params.cluster_rate(n + 1) - old_rate);
        EventRecord { time, kind: EventKind::Growth, label: Some(label), size_before: n, children: None }
    } else if target < growth_rate + isolation_rate {
        // Isolation: freeze the whole cluster.
        let mut cluster = state.active.swap_remove(idx);
        cluster.active = false;
        let label = cluster.label.to_string();
        state.inactive.push(cluster);
        state.bump_rate(-old_rate);
        EventRecord {
            time,
            kind: EventKind::Isolation,
            label: Some(label),
            size_before: n,
            children: None,
        }
    } else {
        // Fragmentation: remove a uniformly chosen open edge.
        let cluster = &state.active[idx];
        let parent_label = cluster.label.clone();
        let child_vertex = rng.gen_range(2..=n);
        let (split, assignment) = cluster.tree.split_at_edge(child_vertex).expect("size >= 2");
        let mut root_times = Vec::with_capacity(split.root_part.size() as usize);
        let mut det_times = Vec::with_capacity(split.detached_part.size() as usize);
        for (v, &(part, _)) in assignment.iter().enumerate() {
            if part == 0 {
                root_times.push(cluster.birth_times[v]);
            } else {
                det_times.push(cluster.birth_times[v]);
            }
        }
        let detached_size = split.detached_size;
        let root_size = n - detached_size;
        let first = ClusterState {
            tree: split.root_part,
            birth_times: root_times,
            label: parent_label.child(1),
            active: true,
        };
        let second = ClusterState {
            tree: split.detached_part,
            birth_times: det_times,
            label: parent_label.child(2),
            active: true,
        };
        first.check();
        second.check();
        debug_assert_eq!(first.birth_times[0], cluster.birth_times[0]);
        let record = EventRecord {
            time,
            kind: EventKind::Fragmentation,
            label: Some(parent_label.to_string()),
            size_before: n,
            children: Some([
                (Some(first.label.to_string()), root_size),
                (Some(second.label.to_string()), detached_size),
            ]),
        };
        state.active[idx] = first;
        state.active.push(second);
        state.bump_rate(
            params.cluster_rate(root_size) + params.cluster_rate(detached_size) - old_rate,
        );
        record
    }
}

/// Sample and apply the next event: exponential waiting time at the total
/// rate, then categorical selection proportional to per-cluster,
/// per-category rates. Errors with [`Error::Stopped`] on an extinct state,
/// leaving it unchanged.
pub fn next_event<R: Rng + ?Sized>(state: &mut ForestState, rng: &mut R) -> Result<EventRecord> {
    if state.is_extinct() {
        return Err(Error::Stopped);
    }
    let wait = exp_waiting_time(state.total_rate(), rng);
    state.time += wait;
    Ok(apply_random_event(state, rng))
}

/// Run a trajectory to the horizon, invoking `observe` at every requested
/// observation time (states are right-continuous step functions, so the
/// state observed at `t` is the one before the first event after `t`).
pub fn simulate_with<R: Rng + ?Sized>(
    mut state: ForestState,
    opts: &SimOptions,
    rng: &mut R,
    mut observe: impl FnMut(&ForestState, f64),
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
            state.time + exp_waiting_time(state.total_rate(), rng)
        };
        // Flush observations strictly before the next jump (and within the
        // horizon); the state is constant on the interval.
        while let Some(&t_obs) = obs_iter.peek() {
            if t_obs <= next_jump.min(opts.horizon) {
                snapshots.push(snapshot_at(&state, t_obs));
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
        let record = apply_random_event(&mut state, rng);
        event_count += 1;
        if opts.record_events {
            events.push(record);
        }
        if state.active.len() > opts.cluster_cap || event_count >= opts.event_cap {
            censored = true;
            break;
        }
    }
    Ok(Trajectory { events, snapshots, extinction_time, censored })
}

/// [`simulate_with`] without an observer.
pub fn simulate<R: Rng + ?Sized>(
    state: ForestState,
    opts: &SimOptions,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate_with(state, opts, rng, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::replica_rng;

    fn std_params() -> Params {
        Params::standard(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn labels_code_and_genealogy() {
        let root = UhnLabel::root();
        let c1 = root.child(1);
        let c12 = c1.child(2);
        assert_eq!(c12.to_string(), "12");
        assert_eq!(c12.parent().unwrap(), c1);
        assert!(root.is_ancestor_of(&c12));
        assert!(!c1.is_ancestor_of(&root.child(2)));
        assert_eq!(root.code(), 1);
        assert_eq!(c1.code(), 2);
        assert_eq!(root.child(2).code(), 3);
        assert_eq!(c12.code(), 0b101);
    }

    #[test]
    fn size1_standard_event_odds() {
        // From a single vertex, growth wins with probability beta/(beta+theta).
        let params = Params::standard(2.0, 1.0, 5.0).unwrap();
        let mut growths = 0u64;
        let trials = 40_000;
        let mut rng = replica_rng(7, 0);
        for _ in 0..trials {
            let mut state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
            let rec = next_event(&mut state, &mut rng).unwrap();
            match rec.kind {
                EventKind::Growth => growths += 1,
                EventKind::Isolation => {}
                EventKind::Fragmentation => panic!("size-1 cluster cannot fragment"),
            }
        }
        let p = growths as f64 / trials as f64;
        let expect = 2.0 / 3.0;
        let sigma = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!((p - expect).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn growth_only_always_grows() {
        let params = Params::growth_only(1.0).unwrap();
        let mut rng = replica_rng(8, 0);
        let mut state = ForestState::single_cluster(params, 3, &mut rng).unwrap();
        for _ in 0..50 {
            let rec = next_event(&mut state, &mut rng).unwrap();
            assert_eq!(rec.kind, EventKind::Growth);
        }
        assert_eq!(state.active[0].size(), 53);
    }

    #[test]
    fn size3_fragment_child_sizes() {
        // Fragmenting a size-3 cluster detaches 1 vertex w.p. 3/4.
        let params = Params::standard(1e-9, 1e-9, 1.0).unwrap();
        let mut rng = replica_rng(9, 0);
        let mut ones = 0u64;
        let trials = 30_000;
        for _ in 0..trials {
            let mut state = ForestState::single_cluster(params, 3, &mut rng).unwrap();
            let rec = next_event(&mut state, &mut rng).unwrap();
            if rec.kind != EventKind::Fragmentation {
                continue;
            }
            let children = rec.children.unwrap();
            assert_eq!(children[0].1 + children[1].1, 3);
            if children[1].1 == 1 {
                ones += 1;
            }
        }
        let p = ones as f64 / trials as f64;
        let sigma = (0.75 * 0.25 / trials as f64).sqrt();
        assert!((p - 0.75).abs() < 4.0 * sigma + 1e-3, "p = {p}");
    }

    #[test]
    fn conservation_and_pool_moves() {
        let params = std_params();
        let mut rng = replica_rng(10, 0);
        let mut state = ForestState::single_cluster(params, 4, &mut rng).unwrap();
        for _ in 0..2000 {
            if state.is_extinct() {
                break;
            }
            let before_vertices: u32 =
                state.active.iter().chain(&state.inactive).map(|c| c.size()).sum();
            let before_active = state.active.len();
            let before_inactive = state.inactive.len();
            let rec = next_event(&mut state, &mut rng).unwrap();
            let after_vertices: u32 =
                state.active.iter().chain(&state.inactive).map(|c| c.size()).sum();
            match rec.kind {
                EventKind::Growth => {
                    assert_eq!(after_vertices, before_vertices + 1);
                    assert_eq!(state.active.len(), before_active);
                }
                EventKind::Isolation => {
                    assert_eq!(after_vertices, before_vertices);
                    assert_eq!(state.active.len(), before_active - 1);
                    assert_eq!(state.inactive.len(), before_inactive + 1);
                }
                EventKind::Fragmentation => {
                    assert_eq!(after_vertices, before_vertices);
                    assert_eq!(state.active.len(), before_active + 1);
                }
            }
            // Maintained rate stays consistent with a fresh recomputation.
            let fresh: f64 =
                state.active.iter().map(|c| params.cluster_rate(c.size())).sum();
            assert!((state.total_rate() - fresh).abs() < 1e-6 * fresh.max(1.0));
        }
    }

    #[test]
    fn stopped_signal_on_extinct_state() {
        let params = Params::standard(0.1, 50.0, 0.1).unwrap();
        let mut rng = replica_rng(11, 0);
        let mut state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
        while !state.is_extinct() {
            let _ = next_event(&mut state, &mut rng).unwrap();
        }
        let t_before = state.time;
        assert!(matches!(next_event(&mut state, &mut rng), Err(Error::Stopped)));
        assert_eq!(state.time, t_before);
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let params = std_params();
        let opts = SimOptions { horizon: 3.0, record_events: true, ..Default::default() }
            .with_obs(&[1.0, 2.0, 3.0]);
        let run = |seed| {
            let mut rng = replica_rng(seed, 0);
            let state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
            simulate(state, &opts, &mut rng).unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(serde_json::to_string(&a.events).unwrap(), serde_json::to_string(&b.events).unwrap());
        assert_eq!(a.snapshots, b.snapshots);
        let c = run(43);
        assert_ne!(
            serde_json::to_string(&a.events).unwrap(),
            serde_json::to_string(&c.events).unwrap()
        );
    }

    #[test]
    fn snapshot_at_time_zero_is_initial_state() {
        let params = std_params();
        let mut rng = replica_rng(12, 0);
        let state = ForestState::single_cluster(params, 5, &mut rng).unwrap();
        let opts = SimOptions::to_horizon(1.0).with_obs(&[0.0]);
        let traj = simulate(state, &opts, &mut rng).unwrap();
        assert_eq!(traj.snapshots[0].active, BTreeMap::from([(5u32, 1u64)]));
        assert!(traj.snapshots[0].inactive.is_empty());
    }

    #[test]
    fn heavy_isolation_goes_extinct() {
        let params = Params::standard(1.0, 50.0, 1.0).unwrap();
        let opts = SimOptions::to_horizon(20.0);
        let mut extinct = 0;
        let trials = 400;
        for i in 0..trials {
            let mut rng = replica_rng(1_000, i);
            let state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
            let traj = simulate(state, &opts, &mut rng).unwrap();
            if traj.extinction_time.is_some() {
                extinct += 1;
            }
        }
        assert!(extinct as f64 / trials as f64 > 0.99, "extinct = {extinct}/{trials}");
    }

    #[test]
    fn yule_mean_vertex_count() {
        let params = Params::growth_only(1.0).unwrap();
        let t = 2.0;
        let opts = SimOptions::to_horizon(t).with_obs(&[t]);
        let reps = 4000;
        let mut total = 0.0;
        let mut totals = Vec::new();
        for i in 0..reps {
            let mut rng = replica_rng(2_000, i);
            let state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
            let traj = simulate(state, &opts, &mut rng).unwrap();
            let v = traj.snapshots[0].active_vertices() as f64;
            total += v;
            totals.push(v);
        }
        let mean = total / reps as f64;
        let se = crate::stats::standard_error(&totals);
        assert!(
            (mean - t.exp()).abs() < 4.0 * se,
            "mean = {mean}, expect = {}, se = {se}",
            t.exp()
        );
    }

    #[test]
    fn tree_class_observation_consistent_with_sizes() {
        let params = std_params();
        let mut rng = replica_rng(13, 0);
        let mut state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
        for _ in 0..300 {
            if state.is_extinct() {
                break;
            }
            let _ = next_event(&mut state, &mut rng);
        }
        let (active_classes, _) = observe_tree_classes(&state, 6).unwrap();
        let (active_sizes, _) = observe_sizes(&state);
        for n in 1..=6u32 {
            let by_class: u64 = active_classes
                .iter()
                .filter(|(t, _)| t.size() == n)
                .map(|(_, &c)| c)
                .sum();
            assert_eq!(by_class, active_sizes.get(&n).copied().unwrap_or(0));
        }
        assert!(observe_tree_classes(&state, 12).is_err());
    }

    #[test]
    fn uhn_genealogy_is_binary_and_first_child_keeps_root_time() {
        let params = Params::standard(1.0, 0.2, 2.0).unwrap();
        let mut rng = replica_rng(14, 0);
        let mut state = ForestState::single_cluster(params, 1, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        seen.insert(UhnLabel::root());
        for _ in 0..3000 {
            if state.is_extinct() {
                break;
            }
            let root_time_before: BTreeMap<UhnLabel, f64> = state
                .active
                .iter()
                .map(|c| (c.label.clone(), c.birth_times[0]))
                .collect();
            let rec = next_event(&mut state, &mut rng).unwrap();
            if rec.kind == EventKind::Fragmentation {
                // Each new label is fresh and extends its parent by one symbol.
                for c in &state.active {
                    if !seen.contains(&c.label) {
                        let parent = c.label.parent().unwrap();
                        assert!(seen.contains(&parent));
                        if c.label.0.last() == Some(&1) {
                            assert_eq!(c.birth_times[0], root_time_before[&parent]);
                        }
                        seen.insert(c.label.clone());
                    }
                }
            }
        }
    }
}
