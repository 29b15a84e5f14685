//! Synthetic ring scene with progressive rotation drift.
//!
//! Cameras sit on a horizontal ring and look outward at points on a
//! surrounding band. The start state composes camera `k` with a rotation of
//! angle `D·k/(N−1)` about a shared random axis, as if each registration had
//! inherited the error of the previous one; points follow the first camera
//! that sees them. Averaged rotations are the ground truth.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::camera::{reproject, Camera, Intrinsics};
use super::cost::{total_cost, BaConfig};
use super::lm::{optimize, Termination};
use super::scene::{Observation, Scene};
use crate::error::{Error, Result};
use crate::so3::{exp_map, geodesic_angle, random_axis, Rotation};

#[derive(Clone, Debug, PartialEq)]
pub struct DriftConfig {
    pub cameras: usize,
    pub ring_radius: f64,
    /// Radial band of the points.
    pub point_radius: (f64, f64),
    /// Points lie within `±point_height` of the ring plane.
    pub point_height: f64,
    pub points: usize,
    /// Drift of the last camera, degrees.
    pub drift_deg: f64,
    /// Standard deviation of pixel noise.
    pub pixel_noise: f64,
    pub focal: f64,
    pub image_size: (f64, f64),
    /// Shared points needed for a known-rotation pair.
    pub min_covisible: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            cameras: 20,
            ring_radius: 3.0,
            point_radius: (14.0, 18.0),
            point_height: 3.0,
            points: 400,
            drift_deg: 10.0,
            pixel_noise: 1.0,
            focal: 400.0,
            image_size: (640.0, 480.0),
            min_covisible: 5,
            seed: 0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras < 3 {
            return Err(Error::Config(format!("need at least 3 cameras, got {}", self.cameras)));
        }
        if !(self.ring_radius > 0.0 && self.point_radius.0 > self.ring_radius && self.point_radius.1 >= self.point_radius.0) {
            return Err(Error::Config("points must lie outside the camera ring".into()));
        }
        if !(self.drift_deg.is_finite() && self.drift_deg >= 0.0 && self.drift_deg < 90.0) {
            return Err(Error::Config(format!("drift must be in [0, 90) degrees, got {}", self.drift_deg)));
        }
        if !(self.pixel_noise.is_finite() && self.pixel_noise >= 0.0) {
            return Err(Error::Config("pixel noise must be >= 0".into()));
        }
        Intrinsics::new(self.focal, 0.0, 0.0)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DriftScenario {
    pub truth: Scene,
    pub start: Scene,
}

fn ring_camera(cfg: &DriftConfig, k: usize) -> Camera {
    let phi = 2.0 * PI * k as f64 / cfg.cameras as f64;
    let z = Vector3::new(phi.cos(), phi.sin(), 0.0);
    let y = Vector3::new(0.0, 0.0, -1.0);
    let x = y.cross(&z);
    let rotation = Rotation::from_matrix_unchecked(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
    Camera {
        rotation,
        center: cfg.ring_radius * z,
        intrinsics: Intrinsics { f: cfg.focal, c: Vector2::new(cfg.image_size.0 / 2.0, cfg.image_size.1 / 2.0) },
    }
}

fn in_image(cfg: &DriftConfig, uv: &Vector2<f64>) -> bool {
    uv.x >= 0.0 && uv.x <= cfg.image_size.0 && uv.y >= 0.0 && uv.y <= cfg.image_size.1
}

pub fn drift_scenario(cfg: &DriftConfig) -> Result<DriftScenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cameras: Vec<Camera> = (0..cfg.cameras).map(|k| ring_camera(cfg, k)).collect();
    let noise = Normal::new(0.0, cfg.pixel_noise.max(f64::MIN_POSITIVE)).expect("finite scale");

    let mut points = Vec::new();
    let mut observations = Vec::new();
    for _ in 0..cfg.points {
        let phi = rng.random_range(0.0..2.0 * PI);
        let rad = rng.random_range(cfg.point_radius.0..=cfg.point_radius.1);
        let h = rng.random_range(-cfg.point_height..=cfg.point_height);
        let x = Vector3::new(rad * phi.cos(), rad * phi.sin(), h);
        let mut obs = Vec::new();
        for (k, cam) in cameras.iter().enumerate() {
            let Ok(clean) = reproject(cam, &x, k) else { continue };
            if !in_image(cfg, &clean) {
                continue;
            }
            let mut uv = clean;
            if cfg.pixel_noise > 0.0 {
                uv += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            }
            obs.push(Observation { camera: k, point: points.len(), uv });
        }
        if obs.len() >= 2 {
            points.push(x);
            observations.extend(obs);
        }
    }

    let nc = cfg.cameras;
    let mut shared = vec![vec![0usize; nc]; nc];
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for o in &observations {
        by_point[o.point].push(o.camera);
    }
    for cams in &by_point {
        for (a, &i) in cams.iter().enumerate() {
            for &j in &cams[a + 1..] {
                shared[i.min(j)][i.max(j)] += 1;
            }
        }
    }
    let mut pairs = Vec::new();
    for i in 0..nc {
        for j in i + 1..nc {
            if shared[i][j] >= cfg.min_covisible {
                pairs.push((i, j));
            }
        }
    }

    let truth = Scene {
        priors: cameras.iter().map(|c| Some(c.rotation)).collect(),
        cameras,
        points,
        observations,
        pairs,
    };
    truth.validate()?;

    let axis = random_axis(&mut rng);
    let drift: Vec<Rotation> = (0..nc)
        .map(|k| exp_map(&(cfg.drift_deg.to_radians() * k as f64 / (nc - 1) as f64 * axis)))
        .collect();
    let mut start = truth.clone();
    for (cam, q) in start.cameras.iter_mut().zip(&drift) {
        cam.rotation = cam.rotation * q.transpose();
        cam.center = q * cam.center;
    }
    for (p, cams) in start.points.iter_mut().zip(&by_point) {
        let owner = cams.iter().copied().min().expect("observed point");
        *p = &drift[owner] * *p;
    }
    // the drifted start must be a valid starting point
    total_cost(&start, &BaConfig::default())?;
    Ok(DriftScenario { truth, start })
}

/// Mean geodesic error in degrees between corresponding camera rotations,
/// without gauge alignment (camera 0 anchors both).
pub fn mean_rotation_error_deg(est: &Scene, truth: &Scene) -> f64 {
    let n = est.cameras.len();
    est.cameras.iter().zip(&truth.cameras).map(|(a, b)| geodesic_angle(&a.rotation, &b.rotation).to_degrees()).sum::<f64>()
        / n as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftOutcome {
    pub weight: f64,
    pub initial_error_deg: f64,
    pub final_error_deg: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
}

/// Optimises the same drifted start once per known-rotation weight.
pub fn run_drift(cfg: &DriftConfig, weights: &[f64], ba: &BaConfig) -> Result<(DriftScenario, Vec<DriftOutcome>)> {
    let sc = drift_scenario(cfg)?;
    let initial_error_deg = mean_rotation_error_deg(&sc.start, &sc.truth);
    let mut out = Vec::with_capacity(weights.len());
    for &weight in weights {
        let res = optimize(&sc.start, &BaConfig { weight, ..ba.clone() })?;
        out.push(DriftOutcome {
            weight,
            initial_error_deg,
            final_error_deg: mean_rotation_error_deg(&res.scene, &sc.truth),
            initial_cost: res.cost_trace[0],
            final_cost: *res.cost_trace.last().expect("non-empty trace"),
            iterations: res.iterations,
            accepted_steps: res.accepted_steps,
            termination: res.termination,
        });
    }
    Ok((sc, out))
}
