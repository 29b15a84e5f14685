//! Levenberg–Marquardt with a Schur complement over landmarks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use super::cost::{
    apply_update, rotation_jacobians, total_cost, visual_jacobians, visual_loss_derivative, BaConfig, Gauge,
    Matrix6x3, CAM_DOF,
};
use super::scene::Scene;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// Damping grew past its ceiling without finding a descent step.
    Stalled { lambda: f64, gradient_max: f64 },
}

#[derive(Clone, Debug)]
pub struct BaResult {
    pub scene: Scene,
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub accepted_steps: usize,
    pub iterations: usize,
    pub termination: Termination,
}

const LAMBDA_MAX: f64 = 1e16;

/// Gauss–Newton normal equations with robust weights, halved
/// (`H = Σ ρ'·JᵀJ + w·JᵀJ`, `b = −(Σ ρ'·Jᵀr + w·Jᵀr)`).
struct Normal {
    hcc: DMatrix<f64>,
    bc: DVector<f64>,
    hpp: Vec<Matrix3<f64>>,
    bp: Vec<Vector3<f64>>,
    /// Per observation: camera, point, `H_cp` block.
    hcp: Vec<(usize, usize, Matrix6x3)>,
}

fn linearize(scene: &Scene, gauge: &Gauge, cfg: &BaConfig) -> Result<Normal> {
    let nc = scene.cameras.len();
    let np = scene.points.len();
    let mut n = Normal {
        hcc: DMatrix::zeros(CAM_DOF * nc, CAM_DOF * nc),
        bc: DVector::zeros(CAM_DOF * nc),
        hpp: vec![Matrix3::zeros(); np],
        bp: vec![Vector3::zeros(); np],
        hcp: Vec::with_capacity(scene.observations.len()),
    };
    for k in 0..scene.observations.len() {
        let (r, jc, jp) = visual_jacobians(scene, gauge, k)?;
        let w = visual_loss_derivative(r.norm_squared(), cfg.loss_sigma_px);
        let o = &scene.observations[k];
        let c0 = CAM_DOF * o.camera;
        let mut block = n.hcc.fixed_view_mut::<6, 6>(c0, c0);
        block += w * jc.transpose() * jc;
        let mut bc = n.bc.fixed_rows_mut::<6>(c0);
        bc -= w * jc.transpose() * r;
        n.hpp[o.point] += w * jp.transpose() * jp;
        n.bp[o.point] -= w * jp.transpose() * r;
        n.hcp.push((o.camera, o.point, w * jc.transpose() * jp));
    }
    if cfg.weight > 0.0 {
        for &pair in &scene.pairs {
            let (r, ji, jj) = rotation_jacobians(scene, pair);
            let jac = [(pair.0, ji), (pair.1, jj)];
            for &(a, ja) in &jac {
                let mut ba = n.bc.fixed_rows_mut::<3>(CAM_DOF * a);
                ba -= cfg.weight * ja.transpose() * r;
                for &(b, jb) in &jac {
                    let mut block = n.hcc.fixed_view_mut::<3, 3>(CAM_DOF * a, CAM_DOF * b);
                    block += cfg.weight * ja.transpose() * jb;
                }
            }
        }
    }
    // frozen parameters: identity rows, zero right-hand side
    for idx in 0..CAM_DOF * nc {
        if !gauge.is_free(idx) {
            n.hcc.row_mut(idx).fill(0.0);
            n.hcc.column_mut(idx).fill(0.0);
            n.bc[idx] = 0.0;
        }
    }
    for (cam, _, block) in &mut n.hcp {
        for c in 0..CAM_DOF {
            if !gauge.is_free(CAM_DOF * *cam + c) {
                block.row_mut(c).fill(0.0);
            }
        }
    }
    Ok(n)
}

fn gradient_max(n: &Normal) -> f64 {
    // b is half the negative gradient
    let cams = n.bc.amax();
    let pts = n.bp.iter().map(|v| v.amax()).fold(0.0, f64::max);
    2.0 * cams.max(pts)
}

/// Solves the damped system by eliminating landmarks first.
fn solve_damped(n: &Normal, gauge: &Gauge, lambda: f64) -> Option<DVector<f64>> {
    let nc = n.bc.len();
    let np = n.hpp.len();
    let damp = |d: f64| d + lambda * d.max(1e-9);
    let mut hpp_inv = Vec::with_capacity(np);
    for h in &n.hpp {
        let mut hd = *h;
        for k in 0..3 {
            hd[(k, k)] = damp(h[(k, k)]);
        }
        hpp_inv.push(hd.try_inverse()?);
    }
    let mut s = n.hcc.clone();
    for k in 0..nc {
        s[(k, k)] = if gauge.is_free(k) { damp(n.hcc[(k, k)]) } else { 1.0 };
    }
    let mut rhs = n.bc.clone();
    // group observation blocks by point
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); np];
    for (k, (_, p, _)) in n.hcp.iter().enumerate() {
        by_point[*p].push(k);
    }
    for (l, obs) in by_point.iter().enumerate() {
        let inv = &hpp_inv[l];
        let scaled: Vec<(usize, Matrix6x3)> = obs.iter().map(|&k| (n.hcp[k].0, n.hcp[k].2 * inv)).collect();
        for (ca, wa) in &scaled {
            let mut r = rhs.fixed_rows_mut::<6>(CAM_DOF * ca);
            r -= wa * n.bp[l];
            for &k in obs {
                let (cb, _, hb) = &n.hcp[k];
                let mut block = s.fixed_view_mut::<6, 6>(CAM_DOF * ca, CAM_DOF * cb);
                block -= wa * hb.transpose();
            }
        }
    }
    let dc = s.cholesky()?.solve(&rhs);
    let mut delta = DVector::zeros(nc + 3 * np);
    delta.rows_mut(0, nc).copy_from(&dc);
    for (l, obs) in by_point.iter().enumerate() {
        let mut b = n.bp[l];
        for &k in obs {
            let (c, _, h) = &n.hcp[k];
            b -= h.transpose() * dc.fixed_rows::<6>(CAM_DOF * c);
        }
        let dp = hpp_inv[l] * b;
        delta.fixed_rows_mut::<3>(nc + 3 * l).copy_from(&dp);
    }
    Some(delta)
}

/// Minimises the robust reprojection cost plus the known-rotation terms,
/// starting from the estimates stored in `scene`.
pub fn optimize(scene: &Scene, cfg: &BaConfig) -> Result<BaResult> {
    cfg.validate()?;
    scene.validate()?;
    let gauge = Gauge::new(scene)?;
    let mut state = scene.clone();
    let mut cost = total_cost(&state, cfg)?;
    let mut trace = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut accepted = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        let normal = linearize(&state, &gauge, cfg)?;
        let gmax = gradient_max(&normal);
        if gmax < cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        loop {
            if lambda > LAMBDA_MAX {
                log::warn!("bundle adjustment stalled: damping {lambda:e}, largest gradient entry {gmax:e}");
                termination = Termination::Stalled { lambda, gradient_max: gmax };
                break 'outer;
            }
            let Some(delta) = solve_damped(&normal, &gauge, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = apply_update(&state, &gauge, &delta);
            let new_cost = match total_cost(&candidate, cfg) {
                Ok(c) if c.is_finite() => c,
                Ok(_) | Err(Error::Cheirality { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if new_cost < cost {
                let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                state = candidate;
                cost = new_cost;
                trace.push(cost);
                accepted += 1;
                lambda = (lambda / 3.0).max(1e-15);
                if decrease < cfg.func_tol {
                    termination = Termination::CostTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
        }
    }
    Ok(BaResult { scene: state, cost_trace: trace, accepted_steps: accepted, iterations, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::drift::{drift_scenario, mean_rotation_error_deg, DriftConfig};
    use crate::so3::geodesic_angle;

    #[test]
    fn ground_truth_needs_no_steps() {
        let sc = drift_scenario(&DriftConfig { cameras: 12, points: 200, pixel_noise: 0.0, seed: 1, ..Default::default() })
            .unwrap();
        let res = optimize(&sc.truth, &BaConfig::default()).unwrap();
        assert_eq!(res.accepted_steps, 0);
        assert_eq!(res.termination, Termination::GradientTolerance);
        assert!(res.cost_trace[0] < 1e-12);
    }

    #[test]
    fn cost_trace_is_monotone_and_drift_is_reduced() {
        let sc = drift_scenario(&DriftConfig { seed: 2, ..Default::default() }).unwrap();
        let res = optimize(&sc.start, &BaConfig::default()).unwrap();
        for w in res.cost_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let before = mean_rotation_error_deg(&sc.start, &sc.truth);
        let after = mean_rotation_error_deg(&res.scene, &sc.truth);
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn zero_weight_matches_plain_adjustment() {
        let sc = drift_scenario(&DriftConfig { cameras: 10, points: 150, seed: 3, ..Default::default() }).unwrap();
        let a = optimize(&sc.start, &BaConfig { weight: 0.0, ..Default::default() }).unwrap();
        let mut plain = sc.start.clone();
        plain.pairs.clear();
        let b = optimize(&plain, &BaConfig::default()).unwrap();
        assert_eq!(a.cost_trace, b.cost_trace);
        assert_eq!(a.scene.cameras, b.scene.cameras);
        assert_eq!(a.scene.points, b.scene.points);
    }

    #[test]
    fn large_weight_enforces_averaged_rotations() {
        let sc = drift_scenario(&DriftConfig { cameras: 12, points: 200, seed: 4, ..Default::default() }).unwrap();
        let res = optimize(&sc.start, &BaConfig { weight: 1e9, max_iterations: 200, ..Default::default() }).unwrap();
        let s = &res.scene;
        for &(i, j) in &s.pairs {
            let est = s.cameras[j].rotation * s.cameras[i].rotation.transpose();
            let hat = s.priors[j].unwrap() * s.priors[i].unwrap().transpose();
            assert!(geodesic_angle(&est, &hat).to_degrees() < 0.01);
        }
    }
}
