//! Synthetic view graphs: random spanning tree plus uniform extra edges,
//! Gaussian angular noise and planted gross outliers.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{exp_map, random_axis, random_rotation, random_rotation_with_angle, Rotation};
use crate::view_graph::ViewGraph;

pub type EdgeKey = (usize, usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Random recursive spanning tree plus uniformly drawn extra edges.
    #[default]
    Random,
    /// Views along a path `0–1–…–(n−1)`; extra edges join views at most
    /// `window` apart, as in sequential capture.
    Sequential { window: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    /// Standard deviation of the per-edge perturbation angle, radians.
    pub noise_sigma: f64,
    pub outlier_ratio: f64,
    /// Outlier perturbation angle range, degrees.
    pub outlier_angle_range: (f64, f64),
    /// Restrict outliers to edges outside the generated spanning tree.
    pub outliers_off_tree: bool,
    pub topology: Topology,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 100,
            m: 300,
            noise_sigma: 0.0,
            outlier_ratio: 0.0,
            outlier_angle_range: (60.0, 90.0),
            outliers_off_tree: true,
            topology: Topology::Random,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_outliers(&self) -> usize {
        (self.outlier_ratio * self.m as f64).round() as usize
    }

    /// Largest edge count the topology admits.
    pub fn max_edges(&self) -> usize {
        match self.topology {
            Topology::Random => self.n * (self.n - 1) / 2,
            Topology::Sequential { window } => {
                let w = window.min(self.n - 1);
                (1..=w).map(|d| self.n - d).sum()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 nodes, got {}", self.n)));
        }
        if self.topology == (Topology::Sequential { window: 0 }) {
            return Err(Error::Config("sequential window must be >= 1".into()));
        }
        let max_edges = self.max_edges();
        if self.m < self.n - 1 || self.m > max_edges {
            return Err(Error::Config(format!(
                "edge count {} outside [{}, {}] for {} nodes",
                self.m,
                self.n - 1,
                max_edges,
                self.n
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(0.0..=0.5).contains(&self.outlier_ratio) {
            return Err(Error::Config(format!("outlier ratio must lie in [0, 0.5], got {}", self.outlier_ratio)));
        }
        let (lo, hi) = self.outlier_angle_range;
        if !(lo > 0.0 && lo <= hi && hi <= 180.0) {
            return Err(Error::InvalidAngleRange { lo, hi });
        }
        let eligible = if self.outliers_off_tree { self.m - (self.n - 1) } else { self.m };
        if self.num_outliers() > eligible {
            return Err(Error::Config(format!(
                "{} outliers requested but only {} eligible edges",
                self.num_outliers(),
                eligible
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthProblem {
    pub graph: ViewGraph,
    pub truth: Vec<Rotation>,
    pub tree: BTreeSet<EdgeKey>,
    pub outliers: BTreeSet<EdgeKey>,
}

fn key(a: usize, b: usize) -> EdgeKey {
    (a.min(b), a.max(b))
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> BTreeSet<EdgeKey> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n).map(|k| key(order[k], order[rng.random_range(0..k)])).collect()
}

fn extra_edges(rng: &mut ChaCha8Rng, n: usize, tree: &BTreeSet<EdgeKey>, count: usize) -> Vec<EdgeKey> {
    let available = n * (n - 1) / 2 - tree.len();
    if count * 2 > available {
        let mut pool: Vec<EdgeKey> =
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|k| !tree.contains(k)).collect();
        let (chosen, _) = pool.partial_shuffle(rng, count);
        return chosen.to_vec();
    }
    let mut seen: HashSet<EdgeKey> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let k = key(a, b);
        if !tree.contains(&k) && seen.insert(k) {
            out.push(k);
        }
    }
    out
}

/// Draws a problem instance; identical configs give identical output.
///
/// Tree edges get weights in `[200, 300]` and all other edges `[20, 199]`, so
/// the maximum spanning tree is the generating tree.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthProblem> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;
    let truth: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut rng)).collect();
    let (tree, extra) = match cfg.topology {
        Topology::Random => {
            let tree = random_tree(&mut rng, n);
            let extra = extra_edges(&mut rng, n, &tree, cfg.m - tree.len());
            (tree, extra)
        }
        Topology::Sequential { window } => {
            let tree: BTreeSet<EdgeKey> = (1..n).map(|k| (k - 1, k)).collect();
            let mut pool: Vec<EdgeKey> =
                (2..=window.min(n - 1)).flat_map(|d| (0..n - d).map(move |a| (a, a + d))).collect();
            let (chosen, _) = pool.partial_shuffle(&mut rng, cfg.m - tree.len());
            (tree, chosen.to_vec())
        }
    };

    let eligible: Vec<EdgeKey> = if cfg.outliers_off_tree {
        let mut e = extra.clone();
        e.sort_unstable();
        e
    } else {
        let mut e: Vec<EdgeKey> = tree.iter().copied().chain(extra.iter().copied()).collect();
        e.sort_unstable();
        e
    };
    let outliers: BTreeSet<EdgeKey> =
        index::sample(&mut rng, eligible.len(), cfg.num_outliers()).into_iter().map(|k| eligible[k]).collect();

    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (lo, hi) = cfg.outlier_angle_range;
    let mut edges: BTreeMap<EdgeKey, bool> = tree.iter().map(|k| (*k, true)).collect();
    edges.extend(extra.iter().map(|k| (*k, false)));
    let mut graph = ViewGraph::new(n);
    for (&(i, j), &in_tree) in &edges {
        let clean = truth[j] * truth[i].transpose();
        let r = if outliers.contains(&(i, j)) {
            random_rotation_with_angle(&mut rng, lo.to_radians(), hi.to_radians())? * clean
        } else if cfg.noise_sigma > 0.0 {
            let theta: f64 = noise.sample(&mut rng);
            exp_map(&(theta * random_axis(&mut rng))) * clean
        } else {
            clean
        };
        let weight = if in_tree { rng.random_range(200..=300) } else { rng.random_range(20..=199) };
        graph.add_edge(i, j, r, weight)?;
    }
    Ok(SynthProblem { graph, truth, tree, outliers })
}
