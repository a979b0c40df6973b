//! Replica ensembles: many independent trajectories with a shared
//! observation grid, built concurrently from counter-derived seeds and
//! reproducible in any execution order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::events::{SimOptions, Snapshot};
use crate::forest::{self, ForestState};
use crate::params::Params;
use crate::rrt::RecursiveTree;
use crate::seeds;
use crate::sizes::{self, SizeState};
use crate::{Error, Result};

/// What to run: parameters, initial histogram, grid, replica count.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSpec {
    pub params: Params,
    /// Initial active size histogram (usually `[(1, 1)]`).
    pub initial: Vec<(u32, u64)>,
    pub replicas: u64,
    pub master_seed: u64,
    pub obs_times: Vec<f64>,
    pub cluster_cap: usize,
}

impl EnsembleSpec {
    pub fn single_start(params: Params, replicas: u64, master_seed: u64, obs_times: Vec<f64>) -> Self {
        Self {
            params,
            initial: vec![(1, 1)],
            replicas,
            master_seed,
            obs_times,
            cluster_cap: 1_000_000,
        }
    }

    fn sim_options(&self) -> SimOptions {
        let horizon = self.obs_times.iter().copied().fold(0.0f64, f64::max);
        SimOptions {
            horizon,
            obs_times: self.obs_times.clone(),
            cluster_cap: self.cluster_cap,
            ..Default::default()
        }
    }
}

/// One replica: snapshots on the shared grid plus termination facts.
#[derive(Debug, Clone)]
pub struct ReplicaRecord {
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    pub extinction_time: Option<f64>,
    pub censored: bool,
}

impl ReplicaRecord {
    /// Whether any active cluster remains at observation index `t_idx`.
    pub fn surviving_at(&self, t_idx: usize) -> bool {
        self.snapshots.get(t_idx).map(|s| !s.active.is_empty()).unwrap_or(false)
    }
}

/// An ensemble of exchangeable replicas over one observation grid.
#[derive(Debug, Clone)]
pub struct ReplicaEnsemble {
    pub spec: EnsembleSpec,
    pub replicas: Vec<ReplicaRecord>,
}

impl ReplicaEnsemble {
    pub fn obs_times(&self) -> &[f64] {
        &self.spec.obs_times
    }

    /// Replicas with a full snapshot grid (resource caps truncate the
    /// grid, so censored runs drop out here).
    pub fn complete_replicas(&self) -> impl Iterator<Item = &ReplicaRecord> {
        let want = self.spec.obs_times.len();
        self.replicas.iter().filter(move |r| r.snapshots.len() == want)
    }

    pub fn censored_count(&self) -> usize {
        self.replicas.iter().filter(|r| r.censored).count()
    }
}

/// Build a size-level ensemble in parallel.
pub fn build_size_ensemble(spec: &EnsembleSpec) -> Result<ReplicaEnsemble> {
    let initial = SizeState::from_histogram(&spec.initial)?;
    let opts = spec.sim_options();
    let replicas: Result<Vec<ReplicaRecord>> = (0..spec.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::replica_rng(spec.master_seed, i);
            let traj = sizes::simulate(&spec.params, initial.clone(), &opts, &mut rng)?;
            Ok(ReplicaRecord {
                seed: seeds::replica_seed(spec.master_seed, i),
                snapshots: traj.snapshots,
                extinction_time: traj.extinction_time,
                censored: traj.censored,
            })
        })
        .collect();
    Ok(ReplicaEnsemble { spec: spec.clone(), replicas: replicas? })
}

/// Tree-class counts (sizes up to the cap) per pool at one observation.
#[derive(Debug, Clone, Default)]
pub struct TreeClassCounts {
    pub active: BTreeMap<RecursiveTree, u64>,
    pub inactive: BTreeMap<RecursiveTree, u64>,
}

/// A tree-level ensemble: size snapshots plus per-observation class
/// counts.
#[derive(Debug, Clone)]
pub struct ForestEnsemble {
    pub base: ReplicaEnsemble,
    pub class_cap: u32,
    /// `classes[replica][obs_idx]`.
    pub classes: Vec<Vec<TreeClassCounts>>,
}

/// Build a tree-level ensemble in parallel, recording canonical class
/// counts up to `class_cap` at every observation time.
pub fn build_forest_ensemble(spec: &EnsembleSpec, class_cap: u32) -> Result<ForestEnsemble> {
    let opts = spec.sim_options();
    let rows: Result<Vec<(ReplicaRecord, Vec<TreeClassCounts>)>> = (0..spec.replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::replica_rng(spec.master_seed, i);
            let state = ForestState::from_sizes(spec.params, &spec.initial, &mut rng)?;
            let mut counts: Vec<TreeClassCounts> = Vec::with_capacity(spec.obs_times.len());
            let traj = forest::simulate_with(state, &opts, &mut rng, |st, _| {
                let (active, inactive) =
                    forest::observe_tree_classes(st, class_cap).expect("cap checked");
                counts.push(TreeClassCounts { active, inactive });
            })?;
            Ok((
                ReplicaRecord {
                    seed: seeds::replica_seed(spec.master_seed, i),
                    snapshots: traj.snapshots,
                    extinction_time: traj.extinction_time,
                    censored: traj.censored,
                },
                counts,
            ))
        })
        .collect();
    if class_cap > crate::rrt::ENUMERATION_CAP {
        return Err(Error::ResourceCap("class cap above enumeration cap".into()));
    }
    let rows = rows?;
    let (records, classes): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(ForestEnsemble {
        base: ReplicaEnsemble { spec: spec.clone(), replicas: records },
        class_cap,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensembles_are_reproducible_and_ordered() {
        let spec = EnsembleSpec::single_start(
            Params::standard(1.0, 0.5, 1.0).unwrap(),
            64,
            777,
            vec![0.5, 1.0],
        );
        let a = build_size_ensemble(&spec).unwrap();
        let b = build_size_ensemble(&spec).unwrap();
        assert_eq!(a.replicas.len(), 64);
        for (ra, rb) in a.replicas.iter().zip(&b.replicas) {
            assert_eq!(ra.seed, rb.seed);
            assert_eq!(ra.snapshots, rb.snapshots);
        }
    }

    #[test]
    fn forest_ensemble_class_counts_align_with_snapshots() {
        let spec = EnsembleSpec::single_start(
            Params::standard(1.0, 0.3, 2.0).unwrap(),
            16,
            31,
            vec![1.0, 2.0],
        );
        let ens = build_forest_ensemble(&spec, 5).unwrap();
        for (r, counts) in ens.base.replicas.iter().zip(&ens.classes) {
            assert_eq!(r.snapshots.len(), counts.len());
            for (snap, cc) in r.snapshots.iter().zip(counts) {
                for n in 1..=5u32 {
                    let from_classes: u64 = cc
                        .active
                        .iter()
                        .filter(|(t, _)| t.size() == n)
                        .map(|(_, &c)| c)
                        .sum();
                    assert_eq!(from_classes, snap.active.get(&n).copied().unwrap_or(0));
                }
            }
        }
    }
}
