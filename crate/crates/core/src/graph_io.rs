//! Line-oriented text formats for view graphs and absolute rotations.
//!
//! ```text
//! # comment
//! NODES <n>
//! EDGE <i> <j> <qw> <qx> <qy> <qz> <weight>
//! ROT <i> <qw> <qx> <qy> <qz>
//! ```
//!
//! `EDGE` carries `R_ij = R_j·R_iᵀ` as a Hamilton scalar-first unit
//! quaternion and an integer weight. `NODES` is optional on input (the node
//! count defaults to the largest id + 1) and always written on output, so
//! isolated trailing nodes survive a round trip. Graph files hold `NODES` and
//! `EDGE` records; rotation files hold `ROT` records. Floats are written in
//! shortest round-trip form, which reproduces every bit of the value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::so3::{Rotation, UnitQuat};
use crate::view_graph::ViewGraph;

/// Quaternions whose norm deviates from 1 by more than this are rejected.
pub const QUAT_NORM_TOL: f64 = 1e-6;

pub type RotationMap = BTreeMap<usize, Rotation>;
/// Rotation records as written, for exact re-serialization.
pub type QuatMap = BTreeMap<usize, UnitQuat>;

pub(crate) fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub(crate) struct Fields<'a> {
    pub(crate) line: usize,
    pub(crate) it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub(crate) fn next<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.it.next().ok_or_else(|| parse_err(self.line, format!("missing {what}")))?;
        tok.parse::<T>()
            .map_err(|_| parse_err(self.line, format!("invalid {what} '{tok}'")))
    }

    pub(crate) fn float(&mut self, what: &str) -> Result<f64> {
        let v: f64 = self.next(what)?;
        if !v.is_finite() {
            return Err(parse_err(self.line, format!("non-finite {what}")));
        }
        Ok(v)
    }

    pub(crate) fn quat(&mut self) -> Result<UnitQuat> {
        let q = UnitQuat {
            w: self.float("qw")?,
            x: self.float("qx")?,
            y: self.float("qy")?,
            z: self.float("qz")?,
        };
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(parse_err(self.line, format!("quaternion norm {norm} is not 1")));
        }
        // leave already-normalized input untouched so that output reproduces it
        let q = if (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z - 1.0).abs() > 4.0 * f64::EPSILON {
            UnitQuat { w: q.w / norm, x: q.x / norm, y: q.y / norm, z: q.z / norm }
        } else {
            q
        };
        Ok(q)
    }

    pub(crate) fn finish(mut self) -> Result<()> {
        match self.it.next() {
            Some(tok) => Err(parse_err(self.line, format!("unexpected trailing field '{tok}'"))),
            None => Ok(()),
        }
    }
}

/// Yields `(line number, record keyword, fields)` for every non-blank,
/// non-comment line.
pub(crate) fn records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, String, String)>> {
    reader.lines().enumerate().filter_map(|(k, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            return None;
        }
        let (kw, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        Some(Ok((k + 1, kw.to_string(), rest.to_string())))
    })
}

pub fn parse_graph<R: BufRead>(reader: R) -> Result<ViewGraph> {
    let mut declared: Option<(usize, usize)> = None;
    let mut pending = Vec::new();
    let mut max_id = None;
    for rec in records(reader) {
        let (line, kw, rest) = rec?;
        let mut f = Fields { line, it: rest.split_whitespace() };
        match kw.as_str() {
            "NODES" => {
                let n: usize = f.next("node count")?;
                f.finish()?;
                if declared.is_some() {
                    return Err(parse_err(line, "repeated NODES record"));
                }
                declared = Some((n, line));
            }
            "EDGE" => {
                let i: usize = f.next("node id i")?;
                let j: usize = f.next("node id j")?;
                let q = f.quat()?;
                let w: u64 = f.next("weight")?;
                f.finish()?;
                if i == j {
                    return Err(parse_err(line, format!("self-loop on node {i}")));
                }
                max_id = max_id.max(Some(i.max(j)));
                pending.push((line, i, j, q, w));
            }
            other => return Err(parse_err(line, format!("unknown record '{other}'"))),
        }
    }
    let inferred = max_id.map_or(0, |m| m + 1);
    let n = match declared {
        Some((n, line)) if n < inferred => {
            return Err(parse_err(line, format!("NODES {n} but edges reference node {}", inferred - 1)))
        }
        Some((n, _)) => n,
        None => inferred,
    };
    let mut g = ViewGraph::new(n);
    for (line, i, j, q, w) in pending {
        g.add_edge_quat(i, j, q, w).map_err(|e| parse_err(line, e.to_string()))?;
    }
    Ok(g)
}

pub fn parse_graph_str(text: &str) -> Result<ViewGraph> {
    parse_graph(text.as_bytes())
}

/// Shortest round-trip decimal; exponent form for tiny magnitudes.
pub fn fmt_float(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-5 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub(crate) fn write_quat(out: &mut String, q: &UnitQuat) {
    let _ = write!(
        out,
        "{} {} {} {}",
        fmt_float(q.w),
        fmt_float(q.x),
        fmt_float(q.y),
        fmt_float(q.z)
    );
}

pub fn serialize_graph(g: &ViewGraph) -> String {
    let mut out = String::new();
    out.push_str("# rotavg view graph: EDGE i j qw qx qy qz weight, R_ij = R_j * R_i^T\n");
    let _ = writeln!(out, "NODES {}", g.n());
    for e in g.edges() {
        let _ = write!(out, "EDGE {} {} ", e.i(), e.j());
        write_quat(&mut out, &e.quat());
        let _ = writeln!(out, " {}", e.weight());
    }
    out
}

pub fn parse_rotation_quats<R: BufRead>(reader: R) -> Result<QuatMap> {
    let mut map = QuatMap::new();
    for rec in records(reader) {
        let (line, kw, rest) = rec?;
        if kw != "ROT" {
            return Err(parse_err(line, format!("unknown record '{kw}'")));
        }
        let mut f = Fields { line, it: rest.split_whitespace() };
        let id: usize = f.next("node id")?;
        let q = f.quat()?;
        f.finish()?;
        if map.insert(id, q).is_some() {
            return Err(parse_err(line, format!("duplicate rotation for node {id}")));
        }
    }
    Ok(map)
}

pub fn parse_rotations<R: BufRead>(reader: R) -> Result<RotationMap> {
    Ok(parse_rotation_quats(reader)?.into_iter().map(|(k, q)| (k, q.to_rotation())).collect())
}

pub fn parse_rotations_str(text: &str) -> Result<RotationMap> {
    parse_rotations(text.as_bytes())
}

pub fn serialize_rotations<'a>(rots: impl IntoIterator<Item = (usize, &'a Rotation)>) -> String {
    serialize_quats(rots.into_iter().map(|(id, r)| (id, r.to_quat())))
}

pub fn serialize_quats(quats: impl IntoIterator<Item = (usize, UnitQuat)>) -> String {
    let mut out = String::from("# rotavg rotations: ROT i qw qx qy qz\n");
    for (id, q) in quats {
        let _ = write!(out, "ROT {id} ");
        write_quat(&mut out, &q);
        out.push('\n');
    }
    out
}
