#![allow(dead_code)]

pub mod checks;

use std::collections::BTreeSet;

use nalgebra::{Matrix3, SymmetricEigen, DMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rotavg::so3::{exp_map, random_axis, random_rotation, Rotation};
use rotavg::view_graph::ViewGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random graph: random tree plus `extra` edges, distinct weights
/// (tree edges heaviest), Gaussian angle noise `sigma` (radians) and a
/// fraction of off-tree edges rotated by 60–90°.
pub struct Instance {
    pub graph: ViewGraph,
    pub truth: Vec<Rotation>,
    pub tree: BTreeSet<(usize, usize)>,
    pub outliers: BTreeSet<(usize, usize)>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, extra: usize, sigma: f64, outlier_frac: f64) -> Instance {
    let truth: Vec<Rotation> = (0..n).map(|_| random_rotation(rng)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut tree = BTreeSet::new();
    for k in 1..n {
        let p = order[rng.random_range(0..k)];
        let c = order[k];
        tree.insert((p.min(c), p.max(c)));
    }
    let mut others = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !tree.contains(&(a, b)) {
                others.push((a, b));
            }
        }
    }
    others.shuffle(rng);
    others.truncate(extra);
    let mut weights: Vec<u64> = (0..tree.len() + others.len()).map(|k| k as u64 + 1).collect();
    weights.shuffle(rng);
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut g = ViewGraph::new(n);
    let mut outliers = BTreeSet::new();
    for (idx, &(a, b)) in tree.iter().chain(others.iter()).enumerate() {
        let on_tree = idx < tree.len();
        let w = if on_tree { 10_000 + weights[idx] } else { weights[idx] };
        let clean = truth[b] * truth[a].transpose();
        let mut r = if sigma > 0.0 { exp_map(&(noise.sample(rng) * random_axis(rng))) * clean } else { clean };
        if !on_tree && rng.random::<f64>() < outlier_frac {
            let angle = rng.random_range(60f64..90.0).to_radians();
            r = exp_map(&(angle * random_axis(rng))) * r;
            outliers.insert((a, b));
        }
        g.add_edge(a, b, r, w).unwrap();
    }
    Instance { graph: g, truth, tree, outliers }
}

/// Connection block `G_ij` oriented so that `Y_i·G_ij = Y_j` at ground truth.
pub fn connection_block(g: &ViewGraph, i: usize, j: usize) -> Option<Matrix3<f64>> {
    if i < j {
        g.edge(i, j).map(|e| e.rotation().matrix().transpose())
    } else {
        g.edge(j, i).map(|e| *e.rotation().matrix())
    }
}

/// Dense `3n × 3n` matrix with blocks `G_ij` and zero diagonal.
pub fn dense_connection(g: &ViewGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut c = DMatrix::zeros(3 * n, 3 * n);
    for e in g.edges() {
        let (i, j) = e.key();
        let gij = e.rotation().matrix().transpose();
        c.view_mut((3 * i, 3 * j), (3, 3)).copy_from(&gij);
        c.view_mut((3 * j, 3 * i), (3, 3)).copy_from(&gij.transpose());
    }
    c
}

/// `−Σ_{i≠j} tr(Y_jᵀ·Y_i·G_ij)` evaluated edge by edge.
pub fn edge_cost(g: &ViewGraph, blocks: &[Matrix3<f64>]) -> f64 {
    g.edges()
        .map(|e| {
            let (i, j) = e.key();
            let gij = e.rotation().matrix().transpose();
            -2.0 * (blocks[j].transpose() * blocks[i] * gij).trace()
        })
        .sum()
}

/// Nearest orthogonal matrix; with `special` the result is forced into SO(3).
pub fn nearest_orthogonal(m: &Matrix3<f64>, special: bool) -> Matrix3<f64> {
    // via the symmetric eigendecomposition of mᵀm: m·(mᵀm)^{-1/2}
    let mtm = m.transpose() * m;
    let eig = SymmetricEigen::new(mtm);
    let inv_sqrt = eig.eigenvectors
        * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()))
        * eig.eigenvectors.transpose();
    let q = m * inv_sqrt;
    if special && q.determinant() < 0.0 {
        // flip along the direction of the smallest singular value
        let k = eig.eigenvalues.imin();
        let v = eig.eigenvectors.column(k);
        return q * (Matrix3::identity() - 2.0 * v * v.transpose());
    }
    q
}

/// Geodesic angle between rotation matrices, degrees.
pub fn angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
