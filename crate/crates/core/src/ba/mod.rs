//! Rotation-regularised bundle adjustment on small synthetic scenes.
//!
//! The objective is `Σ ρ_v(‖u − Π(R, C, X)‖²) + w·Σ ‖log(R̂_i R̂_jᵀ R_j R_iᵀ)‖²`
//! over observations and known-rotation pairs, minimised by
//! Levenberg–Marquardt with landmark elimination.

pub mod camera;
pub mod cost;
pub mod drift;
pub mod lm;
pub mod scene;

pub use camera::{project, reproject, Camera, Intrinsics};
pub use cost::{gradient, known_rotation_residual, total_cost, visual_loss, visual_residual, BaConfig, Gauge};
pub use drift::{drift_scenario, mean_rotation_error_deg, run_drift, DriftConfig, DriftOutcome, DriftScenario};
pub use lm::{optimize, BaResult, Termination};
pub use scene::{parse_scene, parse_scene_str, serialize_scene, Observation, Scene};
