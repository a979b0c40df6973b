//! Deterministic text encodings of simulation and analysis artifacts:
//! JSON lines for events and trees, CSV for snapshots and phase sweeps.
//! All output is UTF-8 with LF line endings and fixed field order.

use std::fmt::Write as _;

use crate::events::{EventRecord, Snapshot};
use crate::rrt::RecursiveTree;
use crate::spectral::PhaseSurface;
use crate::Result;

/// JSON lines, one canonical tree per line.
pub fn trees_jsonl(trees: &[RecursiveTree]) -> Result<String> {
    let mut out = String::new();
    for t in trees {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

/// JSON lines, one event per line.
pub fn events_jsonl(events: &[EventRecord]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// Tree-level snapshot CSV: `time,size,count,pool`.
pub fn snapshots_csv_tree(snapshots: &[Snapshot]) -> String {
    let mut out = String::from("time,size,count,pool\n");
    for s in snapshots {
        for (&size, &count) in &s.active {
            let _ = writeln!(out, "{},{},{},active", s.time, size, count);
        }
        for (&size, &count) in &s.inactive {
            let _ = writeln!(out, "{},{},{},inactive", s.time, size, count);
        }
    }
    out
}

/// Size-level snapshot CSV: `time,pool,size,count`.
pub fn snapshots_csv_size(snapshots: &[Snapshot]) -> String {
    let mut out = String::from("time,pool,size,count\n");
    for s in snapshots {
        for (&size, &count) in &s.active {
            let _ = writeln!(out, "{},active,{},{}", s.time, size, count);
        }
        for (&size, &count) in &s.inactive {
            let _ = writeln!(out, "{},inactive,{},{}", s.time, size, count);
        }
    }
    out
}

/// Size histograms as JSON (active / inactive maps keyed by size).
pub fn snapshot_histogram_json(snapshot: &Snapshot) -> Result<String> {
    Ok(serde_json::to_string(snapshot)?)
}

/// Phase sweep CSV: `beta,theta,gamma,lambda,N_final,tail_mass,converged`.
pub fn phase_surface_csv(surface: &PhaseSurface) -> String {
    let mut out = String::from("beta,theta,gamma,lambda,N_final,tail_mass,converged\n");
    for c in &surface.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.beta, c.theta, c.gamma, c.lambda, c.n_final, c.tail_mass, c.converged
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::EventKind;
    use std::collections::BTreeMap;

    #[test]
    fn csv_formats_have_fixed_schemas() {
        let snap = Snapshot {
            time: 1.5,
            active: BTreeMap::from([(1, 2)]),
            inactive: BTreeMap::from([(3, 1)]),
        };
        let tree = snapshots_csv_tree(std::slice::from_ref(&snap));
        assert_eq!(tree, "time,size,count,pool\n1.5,1,2,active\n1.5,3,1,inactive\n");
        let size = snapshots_csv_size(std::slice::from_ref(&snap));
        assert_eq!(size, "time,pool,size,count\n1.5,active,1,2\n1.5,inactive,3,1\n");
    }

    #[test]
    fn event_lines_roundtrip_json() {
        let ev = EventRecord {
            time: 0.25,
            kind: EventKind::Fragmentation,
            label: Some("12".into()),
            size_before: 5,
            children: Some([(Some("121".into()), 3), (Some("122".into()), 2)]),
        };
        let text = events_jsonl(std::slice::from_ref(&ev)).unwrap();
        assert!(text.ends_with('\n'));
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["kind"], "fragmentation");
        assert_eq!(v["children"][0][1], 3);
    }
}
