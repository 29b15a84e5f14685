//! Robust IRLS refinement of absolute rotations.
//!
//! Each outer iteration linearises every edge at the current estimate,
//! freezes robust weights and solves the weighted least-squares problem
//!
//! ```text
//! min_δ  Σ_ij w_ij ‖δ_j − δ_i + e_ij‖²,    δ_anchor = 0
//! ```
//!
//! with the update `R_k ← R_k·exp(δ_k)`. Because every block of the
//! coefficient matrix is `±I`, the normal equations split into three scalar
//! weighted graph Laplacians, solved by Jacobi-preconditioned conjugate
//! gradients.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::so3::{exp_map, log_map, Rotation, Tangent};
use crate::view_graph::ViewGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RobustLoss {
    /// `ρ(x) = x²/(x²+σ²)`.
    GemanMcClure,
    /// Plain least squares, `ρ(x) = x²`.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrlsConfig {
    pub sigma_deg: f64,
    pub max_outer_iters: usize,
    /// Radians.
    pub step_tol: f64,
    pub anchor: usize,
    pub loss: RobustLoss,
    pub max_halvings: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            sigma_deg: 5.0,
            max_outer_iters: 50,
            step_tol: 1e-8,
            anchor: 0,
            loss: RobustLoss::GemanMcClure,
            max_halvings: 8,
        }
    }
}

impl IrlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_deg.is_finite() && self.sigma_deg > 0.0) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma_deg)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_outer_iters must be >= 1".into()));
        }
        if !(self.step_tol >= 0.0) {
            return Err(Error::Config(format!("step_tol must be >= 0, got {}", self.step_tol)));
        }
        Ok(())
    }

    fn sigma(&self) -> f64 {
        self.sigma_deg.to_radians()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IrlsResult {
    #[serde(skip)]
    pub rotations: Vec<Rotation>,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub objective: f64,
}

/// `e_ij = log(R_iᵀ·r_ijᵀ·R_j)`. Zero iff `r_ij = R_j·R_iᵀ`; a right
/// perturbation `R_j·exp(η)` moves it by `+η`, `R_i·exp(η)` by `−η`.
pub fn edge_residual(r_i: &Rotation, r_j: &Rotation, r_ij: &Rotation) -> Tangent {
    log_map(&(r_i.transpose() * (r_ij.transpose() * *r_j)))
}

/// IRLS weight `σ²/(x²+σ²)²`.
pub fn robust_weight(x: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let d = x * x + s2;
    s2 / (d * d)
}

/// `x²/(x²+σ²)`.
pub fn robust_loss(x: f64, sigma: f64) -> f64 {
    let x2 = x * x;
    x2 / (x2 + sigma * sigma)
}

fn loss_value(loss: RobustLoss, x: f64, sigma: f64) -> f64 {
    match loss {
        RobustLoss::GemanMcClure => robust_loss(x, sigma),
        RobustLoss::Quadratic => x * x,
    }
}

fn loss_weight(loss: RobustLoss, x: f64, sigma: f64) -> f64 {
    match loss {
        RobustLoss::GemanMcClure => robust_weight(x, sigma),
        RobustLoss::Quadratic => 1.0,
    }
}

/// `Σ_ij ρ(‖e_ij‖)` in edge order.
pub fn objective(g: &ViewGraph, rotations: &[Rotation], loss: RobustLoss, sigma: f64) -> f64 {
    g.edges()
        .map(|e| loss_value(loss, edge_residual(&rotations[e.i()], &rotations[e.j()], e.rotation()).norm(), sigma))
        .sum()
}

/// One linearisation: block rows `−I` at `i`, `+I` at `j`, target
/// `b_ij = −e_ij` and weight `w_ij`; the anchor column is removed.
#[derive(Clone, Debug)]
pub struct LinearizedSystem {
    pub n: usize,
    pub anchor: usize,
    pub edges: Vec<(usize, usize)>,
    pub rhs: Vec<Tangent>,
    pub weights: Vec<f64>,
}

impl LinearizedSystem {
    pub fn build(g: &ViewGraph, rotations: &[Rotation], anchor: usize, loss: RobustLoss, sigma: f64) -> Self {
        let mut edges = Vec::with_capacity(g.num_edges());
        let mut rhs = Vec::with_capacity(g.num_edges());
        let mut weights = Vec::with_capacity(g.num_edges());
        for e in g.edges() {
            let r = edge_residual(&rotations[e.i()], &rotations[e.j()], e.rotation());
            edges.push((e.i(), e.j()));
            weights.push(loss_weight(loss, r.norm(), sigma));
            rhs.push(-r);
        }
        LinearizedSystem { n: g.n(), anchor, edges, rhs, weights }
    }

    /// `y = Lx` for the reduced weighted Laplacian, coordinate `c`.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            let d = w * (x[j] - x[i]);
            y[j] += d;
            y[i] -= d;
        }
        y[self.anchor] = 0.0;
    }

    fn normal_rhs(&self, c: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for ((&(i, j), &w), b) in self.edges.iter().zip(&self.weights).zip(&self.rhs) {
            r[j] += w * b[c];
            r[i] -= w * b[c];
        }
        r[self.anchor] = 0.0;
        r
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// Solves the normal equations `AᵀWAδ = AᵀWb` with `δ_anchor = 0`.
    pub fn solve(&self) -> Result<Vec<Tangent>> {
        let diag = self.diagonal();
        if let Some(k) = (0..self.n).find(|&k| k != self.anchor && !(diag[k] > 0.0)) {
            return Err(Error::Solver(format!("normal equations are singular: node {k} has no weighted edges")));
        }
        let mut delta = vec![Vector3::zeros(); self.n];
        for c in 0..3 {
            let b = self.normal_rhs(c);
            let x = pcg(self, &b, &diag)?;
            for (d, v) in delta.iter_mut().zip(x) {
                d[c] = v;
            }
        }
        Ok(delta)
    }

    /// Largest absolute entry of `AᵀWAδ − AᵀWb` over the free nodes.
    pub fn normal_residual(&self, delta: &[Tangent]) -> f64 {
        let mut worst: f64 = 0.0;
        let mut y = vec![0.0; self.n];
        for c in 0..3 {
            let mut x: Vec<f64> = delta.iter().map(|d| d[c]).collect();
            x[self.anchor] = 0.0;
            self.apply(&x, &mut y);
            let b = self.normal_rhs(c);
            for k in 0..self.n {
                if k != self.anchor {
                    worst = worst.max((y[k] - b[k]).abs());
                }
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(sys: &LinearizedSystem, b: &[f64], diag: &[f64]) -> Result<Vec<f64>> {
    let n = sys.n;
    let anchor = sys.anchor;
    let precond = |r: &[f64], z: &mut [f64]| {
        for k in 0..n {
            z[k] = if k == anchor { 0.0 } else { r[k] / diag[k] };
        }
    };
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let tol = 1e-13 * b_norm;
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = 10 * n + 100;
    for _ in 0..max_iter {
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver("normal equations are not positive definite".into()));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if dot(&r, &r).sqrt() <= tol {
            return Ok(x);
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    // accept a slightly looser solution rather than failing outright
    if dot(&r, &r).sqrt() <= 1e-8 * b_norm {
        log::warn!("conjugate gradients stopped at relative residual {:e}", dot(&r, &r).sqrt() / b_norm);
        return Ok(x);
    }
    Err(Error::Solver("conjugate gradients did not converge".into()))
}

fn apply_step(rotations: &[Rotation], delta: &[Tangent], scale: f64, anchor: usize) -> Vec<Rotation> {
    rotations
        .iter()
        .zip(delta)
        .enumerate()
        .map(|(k, (r, d))| if k == anchor { *r } else { *r * exp_map(&(scale * d)) })
        .collect()
}

/// Iteratively reweighted Gauss–Newton on `Σ ρ(‖e_ij‖)`.
pub fn irls_solve(initial: &[Rotation], g: &ViewGraph, cfg: &IrlsConfig) -> Result<IrlsResult> {
    cfg.validate()?;
    if initial.len() != g.n() {
        return Err(Error::LengthMismatch(initial.len(), g.n()));
    }
    if g.n() == 0 {
        return Err(Error::Graph("empty graph".into()));
    }
    if cfg.anchor >= g.n() {
        return Err(Error::Config(format!("anchor {} out of range for {} nodes", cfg.anchor, g.n())));
    }
    let (_, components) = g.connected_components();
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let sigma = cfg.sigma();
    let mut rotations = initial.to_vec();
    let initial_objective = objective(g, &rotations, cfg.loss, sigma);
    let mut current = initial_objective;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_outer_iters {
        iterations += 1;
        let sys = LinearizedSystem::build(g, &rotations, cfg.anchor, cfg.loss, sigma);
        let delta = sys.solve()?;
        let step = delta.iter().map(|d| d.norm()).fold(0.0, f64::max);
        if step < cfg.step_tol {
            converged = true;
            break;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = apply_step(&rotations, &delta, scale, cfg.anchor);
            let f = objective(g, &trial, cfg.loss, sigma);
            if f <= current {
                accepted = Some((trial, f));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, f)) => {
                rotations = trial;
                current = f;
                if scale * step < cfg.step_tol {
                    converged = true;
                    break;
                }
            }
            None => {
                log::debug!("no descent after {} halvings; stopping", cfg.max_halvings);
                converged = true;
                break;
            }
        }
    }
    Ok(IrlsResult { rotations, iterations, converged, initial_objective, objective: current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{geodesic_angle, random_axis, random_rotation, random_rotation_with_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> (ViewGraph, Vec<Rotation>) {
        let truth: Vec<Rotation> = (0..n).map(|_| random_rotation(rng)).collect();
        let mut g = ViewGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                if b == a + 1 || rng.random::<f64>() < p {
                    g.add_edge(a, b, truth[b] * truth[a].transpose(), 1).unwrap();
                }
            }
        }
        (g, truth)
    }

    fn aligned_error_deg(est: &[Rotation], truth: &[Rotation]) -> f64 {
        // anchor 0 fixes the gauge: compare R_i·R_0ᵀ
        est.iter()
            .zip(truth)
            .map(|(e, t)| geodesic_angle(&(*e * est[0].transpose()), &(*t * truth[0].transpose())).to_degrees())
            .fold(0.0, f64::max)
    }

    #[test]
    fn consistent_residual_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        assert!(edge_residual(&a, &b, &(b * a.transpose())).norm() < 1e-14);
    }

    #[test]
    fn residual_norm_is_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (a, b, r) = (random_rotation(&mut rng), random_rotation(&mut rng), random_rotation(&mut rng));
            let lhs = edge_residual(&a, &b, &r).norm();
            let rhs = geodesic_angle(&r, &(b * a.transpose()));
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn residual_first_order_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
            let r = b * a.transpose();
            let eta = 1e-4 * random_axis(&mut rng);
            let e = edge_residual(&a, &(b * exp_map(&eta)), &r);
            assert!((e - eta).norm() < 1e-7);
            let e = edge_residual(&(a * exp_map(&eta)), &b, &r);
            assert!((e + eta).norm() < 1e-7);
        }
    }

    #[test]
    fn finite_difference_jacobian() {
        // small but nonzero residual; the Jacobian is ±I up to O(‖e‖)
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_rotation(&mut rng), random_rotation(&mut rng));
        let r = exp_map(&(1e-3 * random_axis(&mut rng))) * b * a.transpose();
        let e0 = edge_residual(&a, &b, &r);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = Vector3::zeros();
            d[k] = h;
            let dj = (edge_residual(&a, &(b * exp_map(&d)), &r) - e0) / h;
            let di = (edge_residual(&(a * exp_map(&d)), &b, &r) - e0) / h;
            let mut unit = Vector3::zeros();
            unit[k] = 1.0;
            assert!((dj - unit).norm() < 1e-2);
            assert!((di + unit).norm() < 1e-2);
            assert!((dj - unit).norm() < 5.0 * e0.norm());
        }
    }

    #[test]
    fn weight_examples() {
        let s = 0.3;
        assert!((robust_weight(0.0, s) - 1.0 / (s * s)).abs() < 1e-12);
        assert!((robust_weight(s, s) - 1.0 / (4.0 * s * s)).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let w = robust_weight(k as f64 * 0.05, s);
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn weight_is_derivative_ratio() {
        // ρ'(x)/(2x) by central differences
        let s = 0.2;
        for x in [0.01, 0.1, 0.2, 0.5, 1.5] {
            let h = 1e-6;
            let d = (robust_loss(x + h, s) - robust_loss(x - h, s)) / (2.0 * h);
            assert!((d / (2.0 * x) - robust_weight(x, s)).abs() < 1e-5 * robust_weight(x, s).max(1.0));
        }
    }

    #[test]
    fn fixed_point_on_consistent_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (g, truth) = graph(&mut rng, 25, 0.2);
        let res = irls_solve(&truth, &g, &IrlsConfig::default()).unwrap();
        assert!(res.converged);
        for (a, b) in res.rotations.iter().zip(&truth) {
            assert!((a.matrix() - b.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn exact_recovery_from_perturbed_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (g, truth) = graph(&mut rng, 40, 0.15);
        let init: Vec<Rotation> = truth
            .iter()
            .map(|r| *r * random_rotation_with_angle(&mut rng, 1e-3, 10f64.to_radians()).unwrap())
            .collect();
        let res = irls_solve(&init, &g, &IrlsConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.rotations[0], init[0]);
        assert!(aligned_error_deg(&res.rotations, &truth) < 1e-8);
    }

    #[test]
    fn anchor_choice_does_not_matter_on_clean_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (g, truth) = graph(&mut rng, 20, 0.3);
        let init: Vec<Rotation> = truth
            .iter()
            .map(|r| *r * random_rotation_with_angle(&mut rng, 1e-3, 0.1).unwrap())
            .collect();
        let a = irls_solve(&init, &g, &IrlsConfig::default()).unwrap();
        let b = irls_solve(&init, &g, &IrlsConfig { anchor: 7, ..Default::default() }).unwrap();
        assert_eq!(b.rotations[7], init[7]);
        assert!(aligned_error_deg(&a.rotations, &b.rotations) < 1e-8);
    }

    #[test]
    fn normal_equations_are_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (g, truth) = graph(&mut rng, 60, 0.1);
        let init: Vec<Rotation> = truth
            .iter()
            .map(|r| *r * random_rotation_with_angle(&mut rng, 1e-3, 0.5).unwrap())
            .collect();
        let sys = LinearizedSystem::build(&g, &init, 0, RobustLoss::GemanMcClure, 0.1);
        let delta = sys.solve().unwrap();
        assert_eq!(delta[0], Vector3::zeros());
        assert!(sys.normal_residual(&delta) < 1e-10, "{}", sys.normal_residual(&delta));
    }

    #[test]
    fn objective_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut g, truth) = graph(&mut rng, 30, 0.25);
        // corrupt a few edges
        let keys: Vec<_> = g.edges().map(|e| e.key()).collect();
        let mut g2 = ViewGraph::new(30);
        for (k, key) in keys.iter().enumerate() {
            let e = g.edge(key.0, key.1).unwrap();
            let r = if k % 5 == 3 {
                random_rotation_with_angle(&mut rng, 1.0, 1.5).unwrap() * *e.rotation()
            } else {
                *e.rotation()
            };
            g2.add_edge(key.0, key.1, r, 1).unwrap();
        }
        g = g2;
        let init: Vec<Rotation> = truth
            .iter()
            .map(|r| *r * random_rotation_with_angle(&mut rng, 1e-3, 0.3).unwrap())
            .collect();
        for max_outer_iters in 1..6 {
            let res = irls_solve(&init, &g, &IrlsConfig { max_outer_iters, ..Default::default() }).unwrap();
            assert!(res.objective <= res.initial_objective);
        }
    }

    #[test]
    fn robust_beats_least_squares_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 40;
        let truth: Vec<Rotation> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let mut g = ViewGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                if b == a + 1 || rng.random::<f64>() < 0.2 {
                    let mut r = exp_map(&(2f64.to_radians() * rng.random::<f64>() * random_axis(&mut rng)))
                        * truth[b]
                        * truth[a].transpose();
                    if b != a + 1 && rng.random::<f64>() < 0.3 {
                        r = random_rotation_with_angle(&mut rng, 60f64.to_radians(), 90f64.to_radians()).unwrap() * r;
                    }
                    g.add_edge(a, b, r, 1).unwrap();
                }
            }
        }
        let init: Vec<Rotation> = truth
            .iter()
            .map(|r| *r * random_rotation_with_angle(&mut rng, 1e-3, 5f64.to_radians()).unwrap())
            .collect();
        let robust = irls_solve(&init, &g, &IrlsConfig::default()).unwrap();
        let ls = irls_solve(&init, &g, &IrlsConfig { loss: RobustLoss::Quadratic, ..Default::default() }).unwrap();
        assert!(aligned_error_deg(&robust.rotations, &truth) <= aligned_error_deg(&ls.rotations, &truth));
    }

    #[test]
    fn rejects_bad_input() {
        let mut g = ViewGraph::new(3);
        g.add_edge(0, 1, Rotation::identity(), 1).unwrap();
        let init = vec![Rotation::identity(); 3];
        assert!(matches!(irls_solve(&init, &g, &IrlsConfig::default()), Err(Error::Disconnected { .. })));
        assert!(irls_solve(&init[..2], &g, &IrlsConfig::default()).is_err());
        assert!(irls_solve(&init, &g, &IrlsConfig { sigma_deg: 0.0, ..Default::default() }).is_err());
    }
}
