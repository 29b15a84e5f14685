//! Bundle-adjustment scenes and their text format.
//!
//! ```text
//! CAMERA id r11 r12 r13 r21 r22 r23 r31 r32 r33 cx cy cz f px py
//! POINT  id x y z
//! OBS    camera point u v
//! PRIOR  camera r11 r12 r13 r21 r22 r23 r31 r32 r33
//! PAIR   i j
//! ```
//!
//! `CAMERA` holds the world-to-camera rotation (row-major), the centre and
//! the intrinsics; `PRIOR` an averaged rotation; `PAIR` a known-rotation term
//! between two cameras. Rotations are stored as matrices so that files
//! round-trip bit for bit; entries within `1e-6` of orthonormal are projected
//! onto SO(3). Camera and point ids must be dense (`0..count`) and each
//! appear once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::camera::{reproject, Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::graph_io::{fmt_float, parse_err, records, Fields};
use crate::so3::{project_to_so3, Rotation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub uv: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub points: Vec<Vector3<f64>>,
    pub observations: Vec<Observation>,
    /// Averaged rotation per camera, where known.
    pub priors: Vec<Option<Rotation>>,
    /// Camera pairs carrying a known-rotation term; `i < j`.
    pub pairs: Vec<(usize, usize)>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let (nc, np) = (self.cameras.len(), self.points.len());
        if self.priors.len() != nc {
            return Err(Error::LengthMismatch(self.priors.len(), nc));
        }
        let mut seen = vec![0usize; np];
        for o in &self.observations {
            if o.camera >= nc || o.point >= np {
                return Err(Error::Graph(format!("observation ({}, {}) references a missing camera or point", o.camera, o.point)));
            }
            seen[o.point] += 1;
        }
        if let Some(p) = seen.iter().position(|&c| c < 2) {
            return Err(Error::Graph(format!("point {p} has {} observations; at least 2 required", seen[p])));
        }
        for &(i, j) in &self.pairs {
            if i >= j || j >= nc {
                return Err(Error::Graph(format!("invalid camera pair ({i}, {j})")));
            }
            if self.priors[i].is_none() || self.priors[j].is_none() {
                return Err(Error::Graph(format!("pair ({i}, {j}) needs averaged rotations for both cameras")));
            }
        }
        Ok(())
    }

    /// Exact reprojection of every observed point under the current estimate.
    pub fn reprojections(&self) -> Result<Vec<Vector2<f64>>> {
        self.observations.iter().map(|o| reproject(&self.cameras[o.camera], &self.points[o.point], o.camera)).collect()
    }

    pub fn rotations(&self) -> Vec<Rotation> {
        self.cameras.iter().map(|c| c.rotation).collect()
    }
}

fn dense<T>(map: BTreeMap<usize, T>, what: &str) -> Result<Vec<T>> {
    let n = map.len();
    if let Some((&last, _)) = map.last_key_value() {
        if last + 1 != n {
            return Err(Error::Graph(format!("{what} ids must be 0..{n}, found id {last}")));
        }
    }
    Ok(map.into_values().collect())
}

const ROTATION_TOL: f64 = 1e-6;

fn rotation(f: &mut Fields<'_>) -> Result<Rotation> {
    let mut m = Matrix3::zeros();
    for k in 0..9 {
        m[(k / 3, k % 3)] = f.float("rotation entry")?;
    }
    let r = Rotation::from_matrix_unchecked(m);
    r.validate(ROTATION_TOL).map_err(|e| parse_err(f.line, e.to_string()))?;
    if r.validate(1e-12).is_ok() {
        Ok(r)
    } else {
        project_to_so3(&m)
    }
}

fn write_rotation(out: &mut String, r: &Rotation) {
    let m = r.matrix();
    for k in 0..9 {
        let _ = write!(out, " {}", fmt_float(m[(k / 3, k % 3)]));
    }
}

pub fn parse_scene<R: BufRead>(reader: R) -> Result<Scene> {
    let mut cameras = BTreeMap::new();
    let mut points = BTreeMap::new();
    let mut observations = Vec::new();
    let mut priors: BTreeMap<usize, Rotation> = BTreeMap::new();
    let mut pairs = Vec::new();
    for rec in records(reader) {
        let (line, kw, rest) = rec?;
        let mut f = Fields { line, it: rest.split_whitespace() };
        match kw.as_str() {
            "CAMERA" => {
                let id: usize = f.next("camera id")?;
                let rot = rotation(&mut f)?;
                let center = Vector3::new(f.float("cx")?, f.float("cy")?, f.float("cz")?);
                let intr = Intrinsics::new(f.float("f")?, f.float("px")?, f.float("py")?)
                    .map_err(|e| parse_err(line, e.to_string()))?;
                f.finish()?;
                let cam = Camera { rotation: rot, center, intrinsics: intr };
                if cameras.insert(id, cam).is_some() {
                    return Err(parse_err(line, format!("duplicate camera {id}")));
                }
            }
            "POINT" => {
                let id: usize = f.next("point id")?;
                let p = Vector3::new(f.float("x")?, f.float("y")?, f.float("z")?);
                f.finish()?;
                if points.insert(id, p).is_some() {
                    return Err(parse_err(line, format!("duplicate point {id}")));
                }
            }
            "OBS" => {
                let camera = f.next("camera id")?;
                let point = f.next("point id")?;
                let uv = Vector2::new(f.float("u")?, f.float("v")?);
                f.finish()?;
                observations.push(Observation { camera, point, uv });
            }
            "PRIOR" => {
                let id: usize = f.next("camera id")?;
                let rot = rotation(&mut f)?;
                f.finish()?;
                if priors.insert(id, rot).is_some() {
                    return Err(parse_err(line, format!("duplicate prior for camera {id}")));
                }
            }
            "PAIR" => {
                let i: usize = f.next("camera id")?;
                let j: usize = f.next("camera id")?;
                f.finish()?;
                if i == j {
                    return Err(parse_err(line, "pair joins a camera to itself"));
                }
                pairs.push((i.min(j), i.max(j)));
            }
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
    }
    let cameras = dense(cameras, "camera")?;
    let points = dense(points, "point")?;
    if let Some(&k) = priors.keys().find(|&&k| k >= cameras.len()) {
        return Err(Error::Graph(format!("prior for missing camera {k}")));
    }
    let priors = (0..cameras.len()).map(|k| priors.get(&k).copied()).collect();
    let scene = Scene { cameras, points, observations, priors, pairs };
    scene.validate()?;
    Ok(scene)
}

pub fn parse_scene_str(text: &str) -> Result<Scene> {
    parse_scene(text.as_bytes())
}

pub fn serialize_scene(scene: &Scene) -> String {
    let mut out = String::new();
    for (k, c) in scene.cameras.iter().enumerate() {
        let _ = write!(out, "CAMERA {k}");
        write_rotation(&mut out, &c.rotation);
        let i = &c.intrinsics;
        let _ = writeln!(
            out,
            " {} {} {} {} {} {}",
            fmt_float(c.center.x),
            fmt_float(c.center.y),
            fmt_float(c.center.z),
            fmt_float(i.f),
            fmt_float(i.c.x),
            fmt_float(i.c.y)
        );
    }
    for (k, p) in scene.points.iter().enumerate() {
        let _ = writeln!(out, "POINT {k} {} {} {}", fmt_float(p.x), fmt_float(p.y), fmt_float(p.z));
    }
    for o in &scene.observations {
        let _ = writeln!(out, "OBS {} {} {} {}", o.camera, o.point, fmt_float(o.uv.x), fmt_float(o.uv.y));
    }
    for (k, p) in scene.priors.iter().enumerate() {
        if let Some(r) = p {
            let _ = write!(out, "PRIOR {k}");
            write_rotation(&mut out, r);
            out.push('\n');
        }
    }
    for (i, j) in &scene.pairs {
        let _ = writeln!(out, "PAIR {i} {j}");
    }
    out
}
