//! Block-coordinate minimisation (BCM) of the rank-3 factorised relaxation
//!
//! ```text
//! min_Y  −tr(G·YᵀY)   s.t.  Y = [Y_1 … Y_n],  Y_iᵀY_i = I
//! ```
//!
//! Each block update solves its subproblem exactly: with the other blocks
//! fixed the cost is `−2⟨Y_j, Q_j⟩ + const`, `Q_j = Σ_{i≠j} Y_i·G_ij`, which is
//! minimised over O(3) by the orthogonal polar factor `U·Vᵀ` of `Q_j`. After
//! `Y_j` changes only the caches of its neighbours move:
//! `Q_i ← Q_i + (Y_j^new − Y_j^old)·G_ji`, so a full sweep costs
//! `O(Σ_i deg(i))` rather than `O(n²)`.

use std::collections::VecDeque;

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::so3::{project_to_so3, random_rotation, Rotation};
use crate::view_graph::{maximum_spanning_tree, ConnectionMatrix, ViewGraph};

#[derive(Clone, Debug, PartialEq)]
pub enum InitStrategy {
    /// Seeded random rotations.
    Random,
    /// Compose relative rotations along a spanning tree from node 0.
    MstChain,
    /// Caller-supplied blocks (must have orthonormal columns).
    Provided(Vec<Matrix3<f64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub max_sweeps: usize,
    /// Cost test: `|c_k − c_{k−1}| / max(1, |c_k|)` below this.
    pub rel_cost_tol: f64,
    /// Block test: largest `‖Y_j^new − Y_j^old‖_F` of the sweep below this.
    /// Both tests must pass; the cost alone stalls at rounding level while
    /// the blocks are still moving.
    pub block_tol: f64,
    pub init: InitStrategy,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { max_sweeps: 1000, rel_cost_tol: 1e-10, block_tol: 1e-11, init: InitStrategy::Random, seed: 0 }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be >= 1".into()));
        }
        if !(self.rel_cost_tol.is_finite() && self.rel_cost_tol > 0.0) {
            return Err(Error::Config(format!("rel_cost_tol must be > 0, got {}", self.rel_cost_tol)));
        }
        if !(self.block_tol >= 0.0) {
            return Err(Error::Config(format!("block_tol must be >= 0, got {}", self.block_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    #[serde(skip)]
    pub rotations: Vec<Rotation>,
    pub initial_cost: f64,
    pub cost: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Cost after each sweep.
    pub cost_trace: Vec<f64>,
}

/// Factor blocks `Y_j` and cached `Q_j = Σ_{i≠j} Y_i·G_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorState {
    pub blocks: Vec<Matrix3<f64>>,
    pub q: Vec<Matrix3<f64>>,
}

/// `Q_j` for every node, evaluated directly from the blocks.
pub fn q_from_scratch(g: &ConnectionMatrix, blocks: &[Matrix3<f64>]) -> Vec<Matrix3<f64>> {
    // row(j) holds (i, G_ji) and G_ij = G_jiᵀ
    (0..g.n())
        .map(|j| g.row(j).iter().fold(Matrix3::zeros(), |acc, (i, g_ji)| acc + blocks[*i] * g_ji.transpose()))
        .collect()
}

/// `−Σ_{ordered (i,j)} tr(Y_jᵀ·Y_i·G_ij)` evaluated edge by edge.
pub fn cost_from_blocks(g: &ConnectionMatrix, blocks: &[Matrix3<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..g.n() {
        for (j, g_ij) in g.row(i) {
            total += (blocks[*j].transpose() * blocks[i] * g_ij).trace();
        }
    }
    -total
}

/// `U·Vᵀ` from the SVD of `m`; `None` when `m` is zero.
fn orthogonal_polar(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if m.iter().all(|v| *v == 0.0) || m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let svd = m.svd(true, true);
    Some(svd.u? * svd.v_t?)
}

/// Stateful solver over a fixed connection matrix.
pub struct BcmSolver<'a> {
    g: &'a ConnectionMatrix,
    state: FactorState,
}

impl<'a> BcmSolver<'a> {
    pub fn new(g: &'a ConnectionMatrix, blocks: Vec<Matrix3<f64>>) -> Result<Self> {
        if blocks.len() != g.n() {
            return Err(Error::Config(format!("{} blocks for {} nodes", blocks.len(), g.n())));
        }
        for (k, y) in blocks.iter().enumerate() {
            let err = (y.transpose() * y - Matrix3::identity()).norm();
            if !(err <= 1e-10) {
                return Err(Error::Config(format!("block {k} is not orthogonal (‖YᵀY − I‖ = {err:e})")));
            }
        }
        let q = q_from_scratch(g, &blocks);
        Ok(BcmSolver { g, state: FactorState { blocks, q } })
    }

    pub fn state(&self) -> &FactorState {
        &self.state
    }

    pub fn into_state(self) -> FactorState {
        self.state
    }

    /// Cost from the cache: `−Σ_j ⟨Y_j, Q_j⟩`. O(n).
    pub fn cost(&self) -> f64 {
        -self.state.blocks.iter().zip(&self.state.q).map(|(y, q)| y.dot(q)).sum::<f64>()
    }

    pub fn cost_from_scratch(&self) -> f64 {
        cost_from_blocks(self.g, &self.state.blocks)
    }

    /// Replaces `Y_j` by the minimiser of its subproblem and returns the old
    /// block. Neighbour caches are left stale; see [`Self::refresh_q_neighbors`].
    pub fn block_update(&mut self, j: usize) -> Matrix3<f64> {
        let old = self.state.blocks[j];
        match orthogonal_polar(&self.state.q[j]) {
            Some(y) => self.state.blocks[j] = y,
            None => log::warn!("node {j}: Q_j vanishes, block left unchanged"),
        }
        old
    }

    /// Applies `Q_i += (Y_j − old)·G_ji` for every neighbour `i` of `j`.
    pub fn refresh_q_neighbors(&mut self, j: usize, old: &Matrix3<f64>) {
        let delta = self.state.blocks[j] - old;
        if delta.iter().all(|v| *v == 0.0) {
            return;
        }
        for (i, g_ji) in self.g.row(j) {
            self.state.q[*i] += delta * g_ji;
        }
    }

    pub fn update(&mut self, j: usize) {
        let old = self.block_update(j);
        self.refresh_q_neighbors(j, &old);
    }

    /// One Gauss–Seidel pass in index order; returns the largest block change.
    pub fn sweep(&mut self) -> f64 {
        let mut largest: f64 = 0.0;
        for j in 0..self.g.n() {
            let old = self.block_update(j);
            largest = largest.max((self.state.blocks[j] - old).norm());
            self.refresh_q_neighbors(j, &old);
        }
        largest
    }

    /// Largest Frobenius deviation between the cache and a fresh evaluation.
    pub fn cache_error(&self) -> f64 {
        q_from_scratch(self.g, &self.state.blocks)
            .iter()
            .zip(&self.state.q)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn ensure_connected(g: &ConnectionMatrix) -> Result<()> {
    let n = g.n();
    if n == 0 {
        return Err(Error::Graph("empty graph".into()));
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(a) = queue.pop_front() {
        for (b, _) in g.row(a) {
            if !seen[*b] {
                seen[*b] = true;
                count += 1;
                queue.push_back(*b);
            }
        }
    }
    if count < n {
        // count the remaining components for the error message
        let mut components = 1;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            components += 1;
            seen[s] = true;
            queue.push_back(s);
            while let Some(a) = queue.pop_front() {
                for (b, _) in g.row(a) {
                    if !seen[*b] {
                        seen[*b] = true;
                        queue.push_back(*b);
                    }
                }
            }
        }
        return Err(Error::Disconnected { components });
    }
    Ok(())
}

pub fn random_blocks(n: usize, seed: u64) -> Vec<Matrix3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_rotation(&mut rng).into_matrix()).collect()
}

/// Chains relative rotations along a BFS tree of `G` rooted at node 0
/// (`R_0 = I`, `R_c = r_pc·R_p`) and returns `Y_i = R_iᵀ`.
pub fn chain_blocks(g: &ConnectionMatrix) -> Vec<Matrix3<f64>> {
    let n = g.n();
    let mut rot: Vec<Option<Matrix3<f64>>> = vec![None; n];
    for root in 0..n {
        if rot[root].is_some() {
            continue;
        }
        rot[root] = Some(Matrix3::identity());
        let mut queue = VecDeque::from([root]);
        while let Some(p) = queue.pop_front() {
            let rp = rot[p].expect("visited");
            for (c, g_pc) in g.row(p) {
                if rot[*c].is_none() {
                    // G_pc = r_pcᵀ
                    rot[*c] = Some(g_pc.transpose() * rp);
                    queue.push_back(*c);
                }
            }
        }
    }
    rot.into_iter().map(|r| r.expect("visited").transpose()).collect()
}

/// Chains relative rotations along the maximum spanning tree of `g`.
pub fn mst_chain_blocks(g: &ViewGraph) -> Result<Vec<Matrix3<f64>>> {
    let tree = maximum_spanning_tree(g)?;
    let tree_graph = g.filter_edges(|e| tree.binary_search(&e.key()).is_ok());
    Ok(chain_blocks(&crate::view_graph::assemble_connection_matrix(&tree_graph)))
}

/// Gauge-fixed rotations `R_i = proj_SO(3)(Y_iᵀ·Y_0)`, with `R_0 = I`.
pub fn round_to_rotations(blocks: &[Matrix3<f64>]) -> Result<Vec<Rotation>> {
    let Some(y0) = blocks.first() else {
        return Ok(Vec::new());
    };
    let dets: Vec<f64> = blocks.iter().map(|y| y.determinant()).collect();
    if let Some((k, d)) = dets.iter().enumerate().find(|(_, d)| !(d.abs() > 0.5)) {
        return Err(Error::Solver(format!("block {k} is near-singular (det = {d})")));
    }
    let positive = dets.iter().filter(|d| **d > 0.0).count();
    if positive != 0 && positive != blocks.len() {
        return Err(Error::Solver(format!(
            "blocks have mixed determinant signs ({positive} positive, {} negative); \
             the factorisation has not converged to a consistent solution",
            blocks.len() - positive
        )));
    }
    let mut out = Vec::with_capacity(blocks.len());
    out.push(Rotation::identity());
    for y in &blocks[1..] {
        out.push(project_to_so3(&(y.transpose() * y0))?);
    }
    Ok(out)
}

/// Runs BCM on `g` and rounds the result.
pub fn solve(g: &ConnectionMatrix, cfg: &SolveConfig) -> Result<SolveResult> {
    cfg.validate()?;
    ensure_connected(g)?;
    let blocks = match &cfg.init {
        InitStrategy::Random => random_blocks(g.n(), cfg.seed),
        InitStrategy::MstChain => chain_blocks(g),
        InitStrategy::Provided(b) => b.clone(),
    };
    let mut solver = BcmSolver::new(g, blocks)?;
    let initial_cost = solver.cost();
    let mut prev = initial_cost;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_sweeps {
        let moved = solver.sweep();
        let c = solver.cost();
        trace.push(c);
        if (c - prev).abs() / c.abs().max(1.0) < cfg.rel_cost_tol && moved < cfg.block_tol {
            converged = true;
            break;
        }
        prev = c;
    }
    let state = solver.into_state();
    let rotations = round_to_rotations(&state.blocks)?;
    Ok(SolveResult {
        rotations,
        initial_cost,
        cost: *trace.last().unwrap_or(&initial_cost),
        sweeps: trace.len(),
        converged,
        cost_trace: trace,
    })
}

/// [`solve`] on a view graph; `MstChain` uses the correspondence-weighted
/// maximum spanning tree.
pub fn solve_graph(g: &ViewGraph, cfg: &SolveConfig) -> Result<SolveResult> {
    let cm = crate::view_graph::assemble_connection_matrix(g);
    if cfg.init == InitStrategy::MstChain {
        let blocks = mst_chain_blocks(g)?;
        let cfg = SolveConfig { init: InitStrategy::Provided(blocks), ..cfg.clone() };
        return solve(&cm, &cfg);
    }
    solve(&cm, cfg)
}
