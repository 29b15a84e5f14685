//! View graph: nodes are images, edges carry measured relative rotations
//! `R_ij = R_j·R_iᵀ` together with an integer weight (the number of valid
//! correspondences between the two views).
//!
//! Edges are stored once, under the canonical key `(i, j)` with `i < j`.
//! Inserting `(j, i)` stores the transposed rotation under `(i, j)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::so3::{Rotation, UnitQuat};

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeEdge {
    i: usize,
    j: usize,
    rotation: Rotation,
    // kept alongside the matrix so that serialization reproduces parsed input bit for bit
    quat: UnitQuat,
    weight: u64,
}

impl RelativeEdge {
    pub fn i(&self) -> usize {
        self.i
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn key(&self) -> (usize, usize) {
        (self.i, self.j)
    }

    /// Relative rotation `R_ij = R_j·R_iᵀ` for the canonical orientation.
    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn quat(&self) -> UnitQuat {
        self.quat
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    /// Rotation oriented from `from` to the other endpoint.
    pub fn rotation_from(&self, from: usize) -> Rotation {
        if from == self.i {
            self.rotation
        } else {
            self.rotation.transpose()
        }
    }

    pub fn other(&self, node: usize) -> usize {
        if node == self.i {
            self.j
        } else {
            self.i
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewGraph {
    n: usize,
    edges: BTreeMap<(usize, usize), RelativeEdge>,
}

impl ViewGraph {
    pub fn new(n: usize) -> Self {
        ViewGraph { n, edges: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in `(i, j)` order.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = &RelativeEdge> + '_ {
        self.edges.values()
    }

    pub fn edge(&self, a: usize, b: usize) -> Option<&RelativeEdge> {
        self.edges.get(&(a.min(b), a.max(b)))
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edge(a, b).is_some()
    }

    /// Measured rotation from `a` to `b`, whichever orientation was stored.
    pub fn relative(&self, a: usize, b: usize) -> Option<Rotation> {
        self.edge(a, b).map(|e| e.rotation_from(a))
    }

    /// Adds an edge carrying `R_ab = R_b·R_aᵀ`.
    pub fn add_edge(&mut self, a: usize, b: usize, r_ab: Rotation, weight: u64) -> Result<()> {
        let q = r_ab.to_quat();
        self.insert(a, b, r_ab, q, weight)
    }

    /// Adds an edge from a unit quaternion; the stored matrix is derived from it.
    pub fn add_edge_quat(&mut self, a: usize, b: usize, q: UnitQuat, weight: u64) -> Result<()> {
        let q = q.canonical();
        self.insert(a, b, q.to_rotation(), q, weight)
    }

    fn insert(&mut self, a: usize, b: usize, r: Rotation, q: UnitQuat, weight: u64) -> Result<()> {
        if a == b {
            return Err(Error::Graph(format!("self-loop on node {a}")));
        }
        if a >= self.n || b >= self.n {
            return Err(Error::Graph(format!(
                "edge ({a}, {b}) references a node outside [0, {})",
                self.n
            )));
        }
        let edge = if a < b {
            RelativeEdge { i: a, j: b, rotation: r, quat: q, weight }
        } else {
            RelativeEdge { i: b, j: a, rotation: r.transpose(), quat: q.conjugate(), weight }
        };
        let key = edge.key();
        if self.edges.contains_key(&key) {
            return Err(Error::Graph(format!("duplicate edge ({}, {})", key.0, key.1)));
        }
        self.edges.insert(key, edge);
        Ok(())
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in self.edges.keys() {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in self.edges.keys() {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Same node set, edges filtered by `keep`.
    pub fn filter_edges(&self, mut keep: impl FnMut(&RelativeEdge) -> bool) -> ViewGraph {
        ViewGraph {
            n: self.n,
            edges: self
                .edges
                .iter()
                .filter(|(_, e)| keep(e))
                .map(|(k, e)| (*k, e.clone()))
                .collect(),
        }
    }

    /// Component label per node (labels ordered by smallest member) and the
    /// number of components.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.n);
        for &(i, j) in self.edges.keys() {
            uf.union(i, j);
        }
        let mut label = vec![usize::MAX; self.n];
        let mut root_label = vec![usize::MAX; self.n];
        let mut count = 0;
        for v in 0..self.n {
            let r = uf.find(v);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            label[v] = root_label[r];
        }
        (label, count)
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.connected_components().1 == 1
    }
}

/// Disjoint-set forest with path compression and union by rank.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.rank[ra] < self.rank[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        if self.rank[ra] == self.rank[rb] {
            self.rank[ra] += 1;
        }
        true
    }
}

/// Maximum-weight spanning forest (Kruskal). Ties are broken in favour of the
/// lexicographically smaller `(i, j)` key. Returns canonical edge keys sorted.
pub fn maximum_spanning_tree(g: &ViewGraph) -> Result<Vec<(usize, usize)>> {
    if g.n() == 0 {
        return Err(Error::Graph("maximum spanning tree of an empty graph".into()));
    }
    let mut order: Vec<&RelativeEdge> = g.edges().collect();
    // stable sort keeps (i, j) order among equal weights
    order.sort_by(|a, b| b.weight.cmp(&a.weight));
    let mut uf = UnionFind::new(g.n());
    let mut tree: Vec<(usize, usize)> = order
        .into_iter()
        .filter(|e| uf.union(e.i, e.j))
        .map(RelativeEdge::key)
        .collect();
    tree.sort_unstable();
    Ok(tree)
}

/// Mapping between node ids of a graph and one of its induced subgraphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeMap {
    pub old_to_new: Vec<Option<usize>>,
    pub new_to_old: Vec<usize>,
}

impl NodeMap {
    pub fn identity(n: usize) -> Self {
        NodeMap { old_to_new: (0..n).map(Some).collect(), new_to_old: (0..n).collect() }
    }

    /// `self` followed by `next` (ids of `self`'s output are `next`'s input).
    pub fn then(&self, next: &NodeMap) -> NodeMap {
        NodeMap {
            old_to_new: self.old_to_new.iter().map(|o| o.and_then(|v| next.old_to_new[v])).collect(),
            new_to_old: next.new_to_old.iter().map(|&v| self.new_to_old[v]).collect(),
        }
    }
}

/// Largest connected component, with ids renumbered in increasing order of the
/// original ids. Ties between equally large components go to the one holding
/// the smallest node id.
pub fn largest_connected_component(g: &ViewGraph) -> (ViewGraph, NodeMap) {
    if g.n() == 0 {
        return (ViewGraph::new(0), NodeMap::identity(0));
    }
    let (label, count) = g.connected_components();
    let mut sizes = vec![0usize; count];
    for &l in &label {
        sizes[l] += 1;
    }
    let best = (0..count).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap_or(0);
    let keep: Vec<bool> = label.iter().map(|&l| l == best).collect();
    induced_subgraph(g, &keep)
}

/// Subgraph induced by the nodes with `keep[v]`, renumbered monotonically.
pub fn induced_subgraph(g: &ViewGraph, keep: &[bool]) -> (ViewGraph, NodeMap) {
    let mut old_to_new = vec![None; g.n()];
    let mut new_to_old = Vec::new();
    for v in 0..g.n() {
        if keep[v] {
            old_to_new[v] = Some(new_to_old.len());
            new_to_old.push(v);
        }
    }
    let mut sub = ViewGraph::new(new_to_old.len());
    for e in g.edges() {
        if let (Some(a), Some(b)) = (old_to_new[e.i], old_to_new[e.j]) {
            // renumbering is monotone, so a < b and the stored orientation is kept
            sub.edges.insert(
                (a, b),
                RelativeEdge { i: a, j: b, rotation: e.rotation, quat: e.quat, weight: e.weight },
            );
        }
    }
    (sub, NodeMap { old_to_new, new_to_old })
}

/// Sparse symmetric block matrix `G` of the relaxation.
///
/// For a canonical edge `(i, j)` carrying `r_ij = R_j·R_iᵀ` the stored blocks
/// are `G_ij = r_ijᵀ` and `G_ji = r_ij`, so that with `X_ij = R_i·R_jᵀ` every
/// edge contributes `tr(X_ij·G_ji) = 3` at the ground truth. Diagonal blocks
/// are zero and absent.
#[derive(Clone, Debug)]
pub struct ConnectionMatrix {
    n: usize,
    num_edges: usize,
    // rows[a] = [(b, G_ab)], sorted by b
    rows: Vec<Vec<(usize, Matrix3<f64>)>>,
}

impl ConnectionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// `(b, G_ab)` for every neighbour `b` of `a`.
    #[inline]
    pub fn row(&self, a: usize) -> &[(usize, Matrix3<f64>)] {
        &self.rows[a]
    }

    pub fn block(&self, a: usize, b: usize) -> Option<&Matrix3<f64>> {
        let row = &self.rows[a];
        row.binary_search_by_key(&b, |(c, _)| *c).ok().map(|k| &row[k].1)
    }

    pub fn degree(&self, a: usize) -> usize {
        self.rows[a].len()
    }

    /// Dense `3n × 3n` matrix, node-major with 3-row blocks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(3 * self.n, 3 * self.n);
        for (a, row) in self.rows.iter().enumerate() {
            for (b, blk) in row {
                d.fixed_view_mut::<3, 3>(3 * a, 3 * b).copy_from(blk);
            }
        }
        d
    }
}

pub fn assemble_connection_matrix(g: &ViewGraph) -> ConnectionMatrix {
    let mut rows: Vec<Vec<(usize, Matrix3<f64>)>> = vec![Vec::new(); g.n()];
    for e in g.edges() {
        let r = *e.rotation.matrix();
        rows[e.i].push((e.j, r.transpose()));
        rows[e.j].push((e.i, r));
    }
    for row in &mut rows {
        row.sort_by_key(|(b, _)| *b);
    }
    ConnectionMatrix { n: g.n(), num_edges: g.num_edges(), rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_map, random_rotation};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph_from(n: usize, edges: &[(usize, usize, u64)]) -> ViewGraph {
        let mut g = ViewGraph::new(n);
        for &(a, b, w) in edges {
            g.add_edge(a, b, Rotation::identity(), w).unwrap();
        }
        g
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> ViewGraph {
        let mut g = ViewGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    g.add_edge(a, b, random_rotation(rng), rng.random_range(0..5)).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn reversed_edge_is_canonicalized() {
        let r = exp_map(&Vector3::new(0.1, -0.2, 0.3));
        let mut g = ViewGraph::new(3);
        g.add_edge(2, 0, r, 7).unwrap();
        let e = g.edge(0, 2).unwrap();
        assert_eq!(e.key(), (0, 2));
        assert_eq!(*e.rotation(), r.transpose());
        assert_eq!(g.relative(2, 0).unwrap(), r);
    }

    #[test]
    fn rejects_bad_edges() {
        let mut g = ViewGraph::new(3);
        assert!(g.add_edge(1, 1, Rotation::identity(), 1).is_err());
        assert!(g.add_edge(0, 3, Rotation::identity(), 1).is_err());
        g.add_edge(0, 1, Rotation::identity(), 1).unwrap();
        assert!(g.add_edge(1, 0, Rotation::identity(), 1).is_err());
    }

    #[test]
    fn mst_triangle() {
        let g = graph_from(3, &[(0, 1, 10), (1, 2, 20), (0, 2, 30)]);
        assert_eq!(maximum_spanning_tree(&g).unwrap(), vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn mst_of_tree_is_itself() {
        let g = graph_from(5, &[(0, 1, 3), (1, 2, 1), (1, 3, 9), (3, 4, 2)]);
        assert_eq!(maximum_spanning_tree(&g).unwrap(), vec![(0, 1), (1, 2), (1, 3), (3, 4)]);
    }

    #[test]
    fn mst_tie_prefers_lower_key() {
        let g = graph_from(3, &[(0, 1, 5), (0, 2, 5), (1, 2, 5)]);
        assert_eq!(maximum_spanning_tree(&g).unwrap(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn mst_empty_graph_errors() {
        assert!(maximum_spanning_tree(&ViewGraph::new(0)).is_err());
    }

    /// Enumerates every subset of n − 1 edges and keeps the heaviest spanning one.
    fn brute_force_max_tree_weight(g: &ViewGraph) -> Option<u64> {
        let edges: Vec<&RelativeEdge> = g.edges().collect();
        let need = g.n() - 1;
        let mut best = None;
        for mask in 0u64..(1 << edges.len()) {
            if mask.count_ones() as usize != need {
                continue;
            }
            let mut uf = UnionFind::new(g.n());
            let mut ok = true;
            let mut w = 0;
            for (k, e) in edges.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    ok &= uf.union(e.i(), e.j());
                    w += e.weight();
                }
            }
            if ok {
                best = best.max(Some(w));
            }
        }
        best
    }

    #[test]
    fn mst_weight_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 60 {
            let n = rng.random_range(2..=8);
            let g = random_graph(&mut rng, n, 0.5);
            if g.num_edges() > 16 || !g.is_connected() {
                continue;
            }
            let tree = maximum_spanning_tree(&g).unwrap();
            assert_eq!(tree.len(), n - 1);
            let w: u64 = tree.iter().map(|&(a, b)| g.edge(a, b).unwrap().weight()).sum();
            assert_eq!(Some(w), brute_force_max_tree_weight(&g));
            checked += 1;
        }
    }

    #[test]
    fn lcc_examples() {
        let g = graph_from(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1)]);
        let (sub, map) = largest_connected_component(&g);
        assert_eq!(sub, g);
        assert_eq!(map, NodeMap::identity(4));

        // components {0,2,4} (plus 6 isolated) and {1,3,5,7,8}
        let g = graph_from(10, &[(0, 2, 1), (2, 4, 1), (1, 3, 1), (3, 5, 1), (5, 7, 1), (7, 8, 1)]);
        let (sub, map) = largest_connected_component(&g);
        assert_eq!(sub.n(), 5);
        assert_eq!(map.new_to_old, vec![1, 3, 5, 7, 8]);
        assert_eq!(map.old_to_new[6], None);
        assert_eq!(map.old_to_new[3], Some(1));
        assert!(sub.is_connected());
        assert_eq!(sub.num_edges(), 4);
    }

    #[test]
    fn lcc_drops_isolated_nodes() {
        let g = graph_from(5, &[(1, 3, 1)]);
        let (sub, map) = largest_connected_component(&g);
        assert_eq!(sub.n(), 2);
        assert_eq!(map.new_to_old, vec![1, 3]);
    }

    #[test]
    fn connection_matrix_two_nodes() {
        let g = graph_from(2, &[(0, 1, 1)]);
        let cm = assemble_connection_matrix(&g);
        assert_eq!(*cm.block(0, 1).unwrap(), Matrix3::identity());
        assert_eq!(*cm.block(1, 0).unwrap(), Matrix3::identity());
        assert!(cm.block(0, 0).is_none());
    }

    #[test]
    fn connection_matrix_block_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let g = random_graph(&mut rng, 9, 0.4);
            let cm = assemble_connection_matrix(&g);
            let d = cm.to_dense();
            assert_eq!(d, d.transpose());
            for a in 0..g.n() {
                assert!(cm.block(a, a).is_none());
                for (b, blk) in cm.row(a) {
                    assert_eq!(*blk, cm.block(*b, a).unwrap().transpose());
                    assert!(Rotation::from_matrix(*blk).is_ok());
                }
            }
        }
    }

    #[test]
    fn ground_truth_attains_trace_bound() {
        // dense −tr(Y·G·Yᵀ) with Y_i = R_iᵀ
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 8;
        let truth: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let mut g = ViewGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < 0.5 {
                    g.add_edge(a, b, truth[b] * truth[a].transpose(), 1).unwrap();
                }
            }
        }
        let d = assemble_connection_matrix(&g).to_dense();
        let mut y = DMatrix::zeros(3, 3 * n);
        for (k, r) in truth.iter().enumerate() {
            y.fixed_view_mut::<3, 3>(0, 3 * k).copy_from(&r.matrix().transpose());
        }
        let cost = -(y.clone() * d * y.transpose()).trace();
        assert!((cost + 6.0 * g.num_edges() as f64).abs() < 1e-10);
    }
}
