//! Fast view-graph filtering.
//!
//! The maximum spanning tree (by correspondence count) is trusted outright.
//! Each iteration collects the *weak triplets*: two validated edges sharing a
//! node plus an unverified edge closing the triangle. Their loop errors decide
//! whether the unverified edge is accepted or removed. Newly accepted edges
//! create new weak triplets for the next iteration.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::so3::{geodesic_angle, Rotation};
use crate::view_graph::{maximum_spanning_tree, ViewGraph};

pub type EdgeKey = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterConfig {
    /// Loop-error threshold in degrees.
    pub epsilon_deg: f64,
    pub iterations: usize,
    /// Keep edges that no weak triplet ever covered instead of dropping them.
    pub keep_unverified: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { epsilon_deg: 5.0, iterations: 3, keep_unverified: false }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_deg.is_finite() && self.epsilon_deg > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon_deg)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("at least one filtering iteration is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EdgeStatus {
    Tree,
    Verified,
    Removed,
    Unverified,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub weak_triplets: usize,
    pub verified: usize,
    pub removed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FilterReport {
    /// Tree edges plus verified edges.
    pub kept: Vec<EdgeKey>,
    pub removed: Vec<EdgeKey>,
    /// Edges no weak triplet reached; excluded from the output unless
    /// `keep_unverified` is set.
    pub unverified: Vec<EdgeKey>,
    pub tree: Vec<EdgeKey>,
    pub iterations: Vec<IterationStats>,
}

/// Weak triplet: `(a, apex)` and `(apex, b)` are valid, `(a, b)` is the
/// unverified edge under test. `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WeakTriplet {
    pub a: usize,
    pub apex: usize,
    pub b: usize,
}

impl WeakTriplet {
    pub fn candidate(&self) -> EdgeKey {
        (self.a, self.b)
    }
}

/// Loop error in degrees of the cycle `i → j → k → i`, with each argument
/// oriented along the traversal (`r_ij` maps frame `i` to frame `j`).
pub fn triplet_loop_error(r_ij: &Rotation, r_jk: &Rotation, r_ki: &Rotation) -> f64 {
    let cycle = r_ki * &(r_jk * r_ij);
    geodesic_angle(&cycle, &Rotation::identity()).to_degrees()
}

/// All weak triplets formed by `valid` edges around an edge of `candidates`.
/// Sorted by candidate edge, then apex.
pub fn enumerate_weak_triplets(
    valid: &BTreeSet<EdgeKey>,
    candidates: &BTreeSet<EdgeKey>,
) -> Vec<WeakTriplet> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(i, j) in valid {
        adj.entry(i).or_default().push(j);
        adj.entry(j).or_default().push(i);
    }
    for list in adj.values_mut() {
        list.sort_unstable();
    }
    let empty = Vec::new();
    let mut out = Vec::new();
    for &(a, b) in candidates {
        debug_assert!(a < b && !valid.contains(&(a, b)));
        let (na, nb) = (adj.get(&a).unwrap_or(&empty), adj.get(&b).unwrap_or(&empty));
        // sorted intersection
        let (mut x, mut y) = (0, 0);
        while x < na.len() && y < nb.len() {
            match na[x].cmp(&nb[y]) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    out.push(WeakTriplet { a, apex: na[x], b });
                    x += 1;
                    y += 1;
                }
            }
        }
    }
    out
}

fn weak_triplet_error(g: &ViewGraph, t: &WeakTriplet) -> f64 {
    let r1 = g.relative(t.a, t.apex).expect("valid edge");
    let r2 = g.relative(t.apex, t.b).expect("valid edge");
    let r3 = g.relative(t.b, t.a).expect("candidate edge");
    triplet_loop_error(&r1, &r2, &r3)
}

/// Runs the filter and returns the filtered graph (same node ids) and a
/// report partitioning every input edge.
pub fn filter(g: &ViewGraph, cfg: &FilterConfig) -> Result<(ViewGraph, FilterReport)> {
    cfg.validate()?;
    if g.n() == 0 {
        return Ok((ViewGraph::new(0), FilterReport::default()));
    }
    let tree = maximum_spanning_tree(g)?;
    let mut status: BTreeMap<EdgeKey, EdgeStatus> =
        g.edges().map(|e| (e.key(), EdgeStatus::Unverified)).collect();
    for key in &tree {
        status.insert(*key, EdgeStatus::Tree);
    }

    let mut stats = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let valid: BTreeSet<EdgeKey> = status
            .iter()
            .filter(|(_, s)| matches!(s, EdgeStatus::Tree | EdgeStatus::Verified))
            .map(|(k, _)| *k)
            .collect();
        let candidates: BTreeSet<EdgeKey> = status
            .iter()
            .filter(|(_, s)| **s == EdgeStatus::Unverified)
            .map(|(k, _)| *k)
            .collect();
        let triplets = enumerate_weak_triplets(&valid, &candidates);
        let errors: Vec<f64> = triplets.par_iter().map(|t| weak_triplet_error(g, t)).collect();

        // an edge passes if any of its weak triplets closes within epsilon
        let mut verdict: BTreeMap<EdgeKey, bool> = BTreeMap::new();
        for (t, err) in triplets.iter().zip(&errors) {
            *verdict.entry(t.candidate()).or_insert(false) |= *err <= cfg.epsilon_deg;
        }
        let mut it_stats = IterationStats { iteration, weak_triplets: triplets.len(), ..Default::default() };
        for (key, pass) in verdict {
            if pass {
                status.insert(key, EdgeStatus::Verified);
                it_stats.verified += 1;
            } else {
                status.insert(key, EdgeStatus::Removed);
                it_stats.removed += 1;
            }
        }
        log::debug!(
            "vgf iteration {iteration}: {} weak triplets, {} verified, {} removed",
            it_stats.weak_triplets,
            it_stats.verified,
            it_stats.removed
        );
        let done = triplets.is_empty();
        stats.push(it_stats);
        if done {
            break;
        }
    }

    let pick = |want: &[EdgeStatus]| -> Vec<EdgeKey> {
        status.iter().filter(|(_, s)| want.contains(s)).map(|(k, _)| *k).collect()
    };
    let report = FilterReport {
        kept: pick(&[EdgeStatus::Tree, EdgeStatus::Verified]),
        removed: pick(&[EdgeStatus::Removed]),
        unverified: pick(&[EdgeStatus::Unverified]),
        tree,
        iterations: stats,
    };
    let filtered = g.filter_edges(|e| match status[&e.key()] {
        EdgeStatus::Tree | EdgeStatus::Verified => true,
        EdgeStatus::Unverified => cfg.keep_unverified,
        EdgeStatus::Removed => false,
    });
    Ok((filtered, report))
}
