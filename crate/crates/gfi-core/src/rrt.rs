//! Recursive trees on `{1..n}`, uniform sampling, enumeration of
//! equivalence classes and the exact edge-removal splitting law.
//!
//! A recursive tree is a rooted labelled tree in which every path from the
//! root is increasing. Equivalence classes (order isomorphism) are
//! identified with their canonical representative on `{1..n}`, stored as a
//! parent array: entry `i` of `parents` is the parent of vertex `i + 2`.
//! Since `parents[i]` ranges over `{1..i+1}` independently, there are
//! exactly `(n-1)!` classes of size `n` and equality of parent arrays is
//! equality of classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest `n` for which [`enumerate_classes`] is willing to materialize
/// all `(n-1)!` classes.
pub const ENUMERATION_CAP: u32 = 9;

/// Canonical representative of an equivalence class of recursive trees.
///
/// Vertices are `1..=n`; `parents[k]` is the parent of vertex `k + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecursiveTree {
    parents: Vec<u32>,
}

impl Serialize for RecursiveTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut s = serializer.serialize_struct("RecursiveTree", 2)?;
        s.serialize_field("n", &self.size())?;
        s.serialize_field("parents", &self.parents)?;
        s.end()
    }
}

impl<'de> Deserialize<'de> for RecursiveTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            n: u32,
            parents: Vec<u32>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let tree = RecursiveTree::from_parents(raw.parents).map_err(serde::de::Error::custom)?;
        if tree.size() != raw.n {
            return Err(serde::de::Error::custom("field n disagrees with parents length"));
        }
        Ok(tree)
    }
}

impl RecursiveTree {
    /// The single-vertex tree.
    pub fn singleton() -> Self {
        Self { parents: Vec::new() }
    }

    /// Build from a parent array (`parents[k]` is the parent of vertex
    /// `k + 2`); rejects arrays that do not encode an increasing tree.
    pub fn from_parents(parents: Vec<u32>) -> Result<Self> {
        for (k, &p) in parents.iter().enumerate() {
            let child = k as u32 + 2;
            if p < 1 || p >= child {
                return Err(Error::InvalidArgument(format!(
                    "parent of vertex {child} must lie in 1..{child}, got {p}"
                )));
            }
        }
        Ok(Self { parents })
    }

    /// Number of vertices.
    pub fn size(&self) -> u32 {
        self.parents.len() as u32 + 1
    }

    /// Parent of vertex `v` (`v >= 2`).
    pub fn parent(&self, v: u32) -> u32 {
        debug_assert!(v >= 2 && v <= self.size());
        self.parents[(v - 2) as usize]
    }

    pub fn parents(&self) -> &[u32] {
        &self.parents
    }

    /// Attach a new largest-labelled vertex to `target`.
    pub fn attach(&mut self, target: u32) {
        debug_assert!(target >= 1 && target <= self.size());
        self.parents.push(target);
    }

    /// Number of leaves (vertices with no child); the singleton counts as
    /// one leaf.
    pub fn leaf_count(&self) -> u32 {
        let n = self.size() as usize;
        if n == 1 {
            return 1;
        }
        let mut has_child = vec![false; n + 1];
        for &p in &self.parents {
            has_child[p as usize] = true;
        }
        (1..=n).filter(|&v| !has_child[v]).count() as u32
    }

    /// Remove the upward edge of vertex `child` (`2 <= child <= n`) and
    /// return the canonical relabelling of both parts together with the
    /// per-vertex destination: `assignment[v-1]` is `(part, new_label)`
    /// with `part = 0` for the root part.
    pub fn split_at_edge(&self, child: u32) -> Result<(SplitOutcome, Vec<(u8, u32)>)> {
        let n = self.size();
        if n < 2 {
            return Err(Error::InvalidArgument("cannot split a single-vertex tree".into()));
        }
        if child < 2 || child > n {
            return Err(Error::InvalidArgument(format!(
                "edge child index {child} out of range 2..={n}"
            )));
        }
        // Vertices below the removed edge; parents[i] < i makes one pass enough.
        let mut detached = vec![false; n as usize + 1];
        detached[child as usize] = true;
        for v in (child + 1)..=n {
            detached[v as usize] = detached[self.parent(v) as usize];
        }
        let mut assignment = vec![(0u8, 0u32); n as usize];
        let mut root_parents = Vec::new();
        let mut det_parents = Vec::new();
        let (mut n_root, mut n_det) = (0u32, 0u32);
        for v in 1..=n {
            if detached[v as usize] {
                n_det += 1;
                assignment[(v - 1) as usize] = (1, n_det);
                if v != child {
                    det_parents.push(assignment[(self.parent(v) - 1) as usize].1);
                }
            } else {
                n_root += 1;
                assignment[(v - 1) as usize] = (0, n_root);
                if v != 1 {
                    root_parents.push(assignment[(self.parent(v) - 1) as usize].1);
                }
            }
        }
        let outcome = SplitOutcome {
            root_part: RecursiveTree { parents: root_parents },
            detached_part: RecursiveTree { parents: det_parents },
            detached_size: n_det,
        };
        Ok((outcome, assignment))
    }
}

/// Result of removing one edge: the part holding the original root, the
/// detached part, and the latter's size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitOutcome {
    pub root_part: RecursiveTree,
    pub detached_part: RecursiveTree,
    pub detached_size: u32,
}

/// Sample a uniform random recursive tree of size `n`: vertex `k + 1`
/// attaches to a uniform vertex of the size-`k` tree, so every class has
/// probability `1/(n-1)!`.
pub fn sample_uniform_rrt<R: Rng + ?Sized>(n: u32, rng: &mut R) -> Result<RecursiveTree> {
    if n == 0 {
        return Err(Error::InvalidArgument("tree size must be at least 1".into()));
    }
    let mut parents = Vec::with_capacity(n as usize - 1);
    for v in 2..=n {
        parents.push(rng.gen_range(1..v));
    }
    Ok(RecursiveTree { parents })
}

/// All `(n-1)!` classes of size `n`, lexicographically ordered by parent
/// sequence. Errors above [`ENUMERATION_CAP`].
pub fn enumerate_classes(n: u32) -> Result<Vec<RecursiveTree>> {
    if n == 0 {
        return Err(Error::InvalidArgument("tree size must be at least 1".into()));
    }
    if n > ENUMERATION_CAP {
        return Err(Error::ResourceCap(format!(
            "enumeration of T_{n} needs (n-1)! = {} classes; cap is n <= {ENUMERATION_CAP}",
            (1..n as u64).product::<u64>()
        )));
    }
    let mut out = Vec::new();
    let mut parents = vec![1u32; n as usize - 1];
    loop {
        out.push(RecursiveTree { parents: parents.clone() });
        // Mixed-radix increment: digit k ranges over 1..=k+1.
        let mut k = parents.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            if parents[k] < k as u32 + 1 {
                parents[k] += 1;
                for digit in parents.iter_mut().skip(k + 1) {
                    *digit = 1;
                }
                break;
            }
        }
    }
}

/// Number of classes of size `n`, i.e. `(n-1)!`.
pub fn class_count(n: u32) -> u64 {
    (1..n as u64).product()
}

/// Probability that the detached part of a uniform edge removal in a
/// size-`n` tree has `j` vertices: `n / ((n-1) j (j+1))`.
pub fn split_size_law(n: u32, j: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument("split law needs n >= 2".into()));
    }
    if j < 1 || j > n - 1 {
        return Err(Error::InvalidArgument(format!("detached size {j} out of range 1..={}", n - 1)));
    }
    let (n, j) = (n as f64, j as f64);
    Ok(n / ((n - 1.0) * j * (j + 1.0)))
}

/// Inverse-CDF sampling of the detached size via the closed form
/// `j = floor(n / ((n-1) u + 1))`, monotone non-increasing in `u`.
pub fn sample_split_size(n: u32, u: f64) -> Result<u32> {
    if n < 2 {
        return Err(Error::InvalidArgument("split sampling needs n >= 2".into()));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidArgument(format!("u must lie in (0, 1], got {u}")));
    }
    let j = (n as f64 / ((n - 1) as f64 * u + 1.0)).floor() as u32;
    Ok(j.clamp(1, n - 1))
}

/// Remove a uniformly chosen edge (each non-root vertex owns its upward
/// edge, so a uniform edge is a uniform vertex in `{2..n}`).
pub fn split_at_uniform_edge<R: Rng + ?Sized>(
    tree: &RecursiveTree,
    rng: &mut R,
) -> Result<SplitOutcome> {
    let n = tree.size();
    if n < 2 {
        return Err(Error::InvalidArgument("cannot split a single-vertex tree".into()));
    }
    let child = rng.gen_range(2..=n);
    tree.split_at_edge(child).map(|(outcome, _)| outcome)
}

/// Rank-relabel a tree given on an arbitrary strictly ordered label set
/// onto `{1..n}`. Input is a list of `(label, parent_label)` pairs with
/// exactly one root (`parent = None`); rejects duplicate labels and edges
/// pointing from a smaller to a larger label.
pub fn canonicalize<L: PartialOrd + Copy + std::fmt::Debug>(
    vertices: &[(L, Option<L>)],
) -> Result<RecursiveTree> {
    if vertices.is_empty() {
        return Err(Error::InvalidArgument("empty vertex list".into()));
    }
    let mut order: Vec<usize> = (0..vertices.len()).collect();
    order.sort_by(|&a, &b| {
        vertices[a].0.partial_cmp(&vertices[b].0).expect("labels must be totally ordered")
    });
    // rank[i] is the 1-based canonical label of input vertex i.
    let mut rank = vec![0u32; vertices.len()];
    for (r, &i) in order.iter().enumerate() {
        if r > 0 && !(vertices[order[r - 1]].0 < vertices[i].0) {
            return Err(Error::InvalidArgument("labels must be strictly ordered".into()));
        }
        rank[i] = r as u32 + 1;
    }
    let find_rank = |label: L| -> Result<u32> {
        let pos = order
            .binary_search_by(|&i| vertices[i].0.partial_cmp(&label).expect("ordered labels"))
            .map_err(|_| Error::InvalidArgument(format!("parent label {label:?} not present")))?;
        Ok(pos as u32 + 1)
    };
    let mut parents = vec![0u32; vertices.len() - 1];
    let mut roots = 0usize;
    for (i, &(label, parent)) in vertices.iter().enumerate() {
        match parent {
            None => {
                roots += 1;
                if rank[i] != 1 {
                    return Err(Error::InvalidArgument(
                        "root must carry the minimal label".into(),
                    ));
                }
            }
            Some(p) => {
                if !(p < label) {
                    return Err(Error::InvalidArgument(format!(
                        "edge {p:?} -> {label:?} is not increasing"
                    )));
                }
                parents[(rank[i] - 2) as usize] = find_rank(p)?;
            }
        }
    }
    if roots != 1 {
        return Err(Error::InvalidArgument(format!("expected exactly one root, got {roots}")));
    }
    RecursiveTree::from_parents(parents)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_and_pair() {
        assert_eq!(RecursiveTree::singleton().size(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_uniform_rrt(0, &mut rng).is_err());
        let t = sample_uniform_rrt(2, &mut rng).unwrap();
        assert_eq!(t.parents(), &[1]);
    }

    #[test]
    fn enumeration_counts_and_order() {
        assert_eq!(enumerate_classes(1).unwrap().len(), 1);
        let t3 = enumerate_classes(3).unwrap();
        assert_eq!(
            t3,
            vec![
                RecursiveTree::from_parents(vec![1, 1]).unwrap(),
                RecursiveTree::from_parents(vec![1, 2]).unwrap(),
            ]
        );
        let t4 = enumerate_classes(4).unwrap();
        assert_eq!(t4.len(), 6);
        let mut sorted = t4.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, t4);
        assert_eq!(enumerate_classes(8).unwrap().len(), 5040);
        assert!(matches!(enumerate_classes(10), Err(Error::ResourceCap(_))));
    }

    #[test]
    fn split_law_values_and_normalization() {
        assert_eq!(split_size_law(2, 1).unwrap(), 1.0);
        assert_eq!(split_size_law(3, 1).unwrap(), 0.75);
        assert_eq!(split_size_law(3, 2).unwrap(), 0.25);
        assert!(split_size_law(3, 3).is_err());
        for n in [2u32, 3, 5, 17, 100] {
            let total: f64 = (1..n).map(|j| split_size_law(n, j).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "n={n} sums to {total}");
        }
    }

    #[test]
    fn split_size_sampler_matches_hand_inversion() {
        assert_eq!(sample_split_size(3, 0.2).unwrap(), 2);
        assert_eq!(sample_split_size(3, 0.5).unwrap(), 1);
        for u in [1e-9, 0.3, 0.7, 1.0] {
            assert_eq!(sample_split_size(2, u).unwrap(), 1);
        }
        assert!(sample_split_size(3, 0.0).is_err());
        assert!(sample_split_size(3, 1.5).is_err());
    }

    /// Independent oracle: invert the split-law CDF by binary search on
    /// `P(J >= j) = (n - j) / (j (n - 1))`.
    fn inverse_cdf_oracle(n: u32, u: f64) -> u32 {
        let tail = |j: u32| (n - j) as f64 / (j as f64 * (n - 1) as f64);
        let (mut lo, mut hi) = (1u32, n - 1);
        // Largest j with tail(j) >= u.
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if tail(mid) >= u {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    #[test]
    fn floor_formula_equals_inverse_cdf_on_grid() {
        for n in 2..=8u32 {
            for k in 1..=4000u32 {
                let u = k as f64 / 4000.0;
                assert_eq!(
                    sample_split_size(n, u).unwrap(),
                    inverse_cdf_oracle(n, u),
                    "n={n}, u={u}"
                );
            }
        }
    }

    #[test]
    fn sampler_monotone_in_u() {
        for n in 2..=12u32 {
            let mut prev = u32::MAX;
            for k in 1..=500 {
                let j = sample_split_size(n, k as f64 / 500.0).unwrap();
                assert!(j <= prev);
                prev = j;
            }
        }
    }

    #[test]
    fn uniform_sampling_is_uniform_chi_square() {
        // Chi-square against the uniform law on T_n at alpha = 0.001.
        let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
        for n in 3..=8u32 {
            // n = 2 has a single class; nothing to test there.
            let classes = enumerate_classes(n).unwrap();
            let mut index = std::collections::HashMap::new();
            for (i, c) in classes.iter().enumerate() {
                index.insert(c.clone(), i);
            }
            let draws = 100_000usize;
            let mut counts = vec![0u64; classes.len()];
            for _ in 0..draws {
                let t = sample_uniform_rrt(n, &mut rng).unwrap();
                counts[index[&t]] += 1;
            }
            let expected = draws as f64 / classes.len() as f64;
            let stat: f64 =
                counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            let crit = crate::stats::chi_square_critical(classes.len() - 1, 0.001);
            assert!(stat < crit, "n={n}: chi2={stat:.1} >= {crit:.1}");
        }
    }

    #[test]
    fn split_at_edge_relabels_canonically() {
        // Path 1 -> 2 -> 3 with the top edge removed.
        let t = RecursiveTree::from_parents(vec![1, 2]).unwrap();
        let (s, assignment) = t.split_at_edge(3).unwrap();
        assert_eq!(s.detached_size, 1);
        assert_eq!(s.root_part.parents(), &[1]);
        assert_eq!(s.detached_part.size(), 1);
        assert_eq!(assignment, vec![(0, 1), (0, 2), (1, 1)]);
        // Removing the bottom edge detaches {2, 3}.
        let (s, _) = t.split_at_edge(2).unwrap();
        assert_eq!(s.detached_size, 2);
        assert_eq!(s.detached_part.parents(), &[1]);
        assert!(RecursiveTree::singleton().split_at_edge(2).is_err());
    }

    #[test]
    fn empirical_detached_size_law_size3() {
        let t3 = enumerate_classes(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut ones = 0u64;
        for _ in 0..draws {
            // Uniform tree first, then uniform edge.
            let tree = &t3[rng.gen_range(0..t3.len())];
            let s = split_at_uniform_edge(tree, &mut rng).unwrap();
            if s.detached_size == 1 {
                ones += 1;
            }
        }
        let p = ones as f64 / draws as f64;
        let sigma = (0.75 * 0.25 / draws as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * sigma + 1e-9, "p={p}");
    }

    #[test]
    fn canonicalize_examples() {
        // 0.7 attached to 0.1.
        let t = canonicalize(&[(0.1, None), (0.7, Some(0.1))]).unwrap();
        assert_eq!(t.parents(), &[1]);
        // Chain 2 -> 5 -> 9 on arbitrary labels.
        let t = canonicalize(&[(2.0, None), (5.0, Some(2.0)), (9.0, Some(5.0))]).unwrap();
        assert_eq!(t.parents(), &[1, 2]);
        // Decreasing edge rejected.
        assert!(canonicalize(&[(1.0, Some(2.0)), (2.0, None)]).is_err());
        // Idempotence: feed the canonical tree back through.
        let tree = RecursiveTree::from_parents(vec![1, 1, 3]).unwrap();
        let relabel: Vec<(u32, Option<u32>)> = (1..=tree.size())
            .map(|v| (v, if v == 1 { None } else { Some(tree.parent(v)) }))
            .collect();
        assert_eq!(canonicalize(&relabel).unwrap(), tree);
    }

    #[test]
    fn serde_wire_format() {
        let t = RecursiveTree::from_parents(vec![1, 2]).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"n":3,"parents":[1,2]}"#);
        let back: RecursiveTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn leaf_counts() {
        assert_eq!(RecursiveTree::singleton().leaf_count(), 1);
        assert_eq!(RecursiveTree::from_parents(vec![1, 1]).unwrap().leaf_count(), 2);
        assert_eq!(RecursiveTree::from_parents(vec![1, 2]).unwrap().leaf_count(), 1);
    }
}
