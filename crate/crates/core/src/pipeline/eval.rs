//! Gauge alignment and error statistics against ground truth.

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::so3::{geodesic_angle, project_to_so3, Rotation};

/// `S = proj_SO(3)(Σ_i R_est,iᵀ·R_gt,i)`, minimising `Σ‖R_est,i·S − R_gt,i‖²_F`.
pub fn align_rotations(est: &[Rotation], gt: &[Rotation]) -> Result<Rotation> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(Error::Degenerate("cannot align empty rotation sets".into()));
    }
    let sum = est.iter().zip(gt).fold(Matrix3::zeros(), |acc, (e, g)| acc + e.matrix().transpose() * g.matrix());
    project_to_so3(&sum)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub count: usize,
    pub mean_err_deg: f64,
    pub median_err_deg: f64,
    pub max_err_deg: f64,
    pub final_cost: Option<f64>,
    pub sweeps: Option<usize>,
    pub time_filter_s: f64,
    pub time_global_s: f64,
    pub time_refine_s: f64,
}

/// Per-rotation geodesic errors in degrees after alignment.
pub fn aligned_errors_deg(est: &[Rotation], gt: &[Rotation]) -> Result<Vec<f64>> {
    let s = align_rotations(est, gt)?;
    Ok(est.iter().zip(gt).map(|(e, g)| geodesic_angle(&(*e * s), g).to_degrees()).collect())
}

pub fn evaluate(est: &[Rotation], gt: &[Rotation]) -> Result<EvalReport> {
    Ok(summarize(aligned_errors_deg(est, gt)?))
}

/// Mean, median and max of a non-empty error list.
pub fn summarize(mut errs: Vec<f64>) -> EvalReport {
    let count = errs.len();
    if count == 0 {
        return EvalReport::default();
    }
    let mean = errs.iter().sum::<f64>() / count as f64;
    errs.sort_by(f64::total_cmp);
    let median = if count % 2 == 1 { errs[count / 2] } else { 0.5 * (errs[count / 2 - 1] + errs[count / 2]) };
    EvalReport { count, mean_err_deg: mean, median_err_deg: median, max_err_deg: errs[count - 1], ..Default::default() }
}
