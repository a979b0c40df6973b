//! Event records, snapshots and simulation options shared by the
//! tree-level and size-level simulators.

use std::collections::BTreeMap;

use serde::Serialize;

/// The three jump types of the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Growth,
    Isolation,
    Fragmentation,
}

/// One jump of a trajectory. Fragmentation lists both children in
/// genealogical order: the first child keeps the root of the parent
/// cluster. The size-level simulator leaves labels empty.
#[derive(Debug, Clone, Serialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub size_before: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub children: Option<[(Option<String>, u32); 2]>,
}

/// Cluster-size histograms of both pools at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub active: BTreeMap<u32, u64>,
    pub inactive: BTreeMap<u32, u64>,
}

impl Snapshot {
    pub fn active_clusters(&self) -> u64 {
        self.active.values().sum()
    }

    pub fn inactive_clusters(&self) -> u64 {
        self.inactive.values().sum()
    }

    pub fn active_vertices(&self) -> u64 {
        self.active.iter().map(|(&n, &c)| n as u64 * c).sum()
    }

    pub fn inactive_vertices(&self) -> u64 {
        self.inactive.iter().map(|(&n, &c)| n as u64 * c).sum()
    }
}

/// Horizon and resource limits for one trajectory.
#[derive(Debug, Clone)]
pub struct SimOptions {
    /// Final simulated time.
    pub horizon: f64,
    /// Sorted observation times; each emits one snapshot (times after an
    /// early stop are dropped and the trajectory is flagged censored).
    pub obs_times: Vec<f64>,
    /// Stop and censor once the active cluster count exceeds this.
    pub cluster_cap: usize,
    /// Stop and censor once this many events fired.
    pub event_cap: u64,
    /// Keep the full event list (snapshots are always kept).
    pub record_events: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            obs_times: Vec::new(),
            cluster_cap: 1_000_000,
            event_cap: 100_000_000,
            record_events: false,
        }
    }
}

impl SimOptions {
    pub fn to_horizon(horizon: f64) -> Self {
        Self { horizon, ..Default::default() }
    }

    pub fn with_obs(mut self, obs: &[f64]) -> Self {
        let mut obs = obs.to_vec();
        obs.sort_by(|a, b| a.total_cmp(b));
        self.obs_times = obs;
        self
    }
}

/// Output of one simulated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub events: Vec<EventRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Time the last active cluster disappeared, when reached.
    pub extinction_time: Option<f64>,
    /// True when a resource cap truncated the run.
    pub censored: bool,
}
