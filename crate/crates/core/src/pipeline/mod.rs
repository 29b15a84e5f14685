//! Filter → global → refine pipeline and its baselines.

pub mod bench;
pub mod eval;
pub mod synth;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_solver::{solve_graph, InitStrategy, SolveConfig, SolveResult};
use crate::local_refine::{irls_solve, IrlsConfig};
use crate::so3::Rotation;
use crate::vgf::{filter, FilterConfig, FilterReport};
use crate::view_graph::{induced_subgraph, largest_connected_component, NodeMap, ViewGraph};

pub use eval::{align_rotations, evaluate, EvalReport};
pub use synth::{generate_synthetic, SynthConfig, SynthProblem, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// BCM only, on the largest component of the raw graph.
    Global,
    /// Filtering, BCM, then robust refinement.
    Hybrid,
    /// Robust refinement from a spanning-tree chain initialisation.
    IrlsOnly,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Global, Method::Hybrid, Method::IrlsOnly];

    pub fn name(self) -> &'static str {
        match self {
            Method::Global => "global",
            Method::Hybrid => "hybrid",
            Method::IrlsOnly => "irls-only",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected global, hybrid or irls-only)")))
    }
}

/// Edge set used by the refinement stage of the hybrid pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineEdges {
    /// Every input edge between registered nodes; the robust loss handles
    /// edges the filter rejected or could not verify.
    #[default]
    Input,
    /// Only the edges that survived filtering.
    Filtered,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HybridConfig {
    pub filter: FilterConfig,
    pub solve: SolveConfig,
    pub irls: IrlsConfig,
    pub refine_edges: RefineEdges,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageTimes {
    pub filter_s: f64,
    pub global_s: f64,
    pub refine_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineResult {
    /// Indexed by input node id; `None` for unregistered nodes.
    #[serde(skip)]
    pub rotations: Vec<Option<Rotation>>,
    pub unregistered: Vec<usize>,
    pub edges_solved: usize,
    pub filter_report: Option<FilterReport>,
    pub global_cost: Option<f64>,
    pub sweeps: Option<usize>,
    pub refine_iterations: Option<usize>,
    pub times: StageTimes,
}

impl PipelineResult {
    /// Registered node ids with their rotations.
    pub fn registered(&self) -> impl Iterator<Item = (usize, &Rotation)> {
        self.rotations.iter().enumerate().filter_map(|(k, r)| r.as_ref().map(|r| (k, r)))
    }
}

fn scatter(map: &NodeMap, n: usize, sub: Vec<Rotation>) -> (Vec<Option<Rotation>>, Vec<usize>) {
    let mut out = vec![None; n];
    for (new, r) in sub.into_iter().enumerate() {
        out[map.new_to_old[new]] = Some(r);
    }
    let unregistered = (0..n).filter(|k| out[*k].is_none()).collect();
    (out, unregistered)
}

fn mapped_anchor(map: &NodeMap, anchor: usize) -> usize {
    map.old_to_new.get(anchor).copied().flatten().unwrap_or(0)
}

/// BCM with one retry from the spanning-tree chain when rounding finds
/// blocks of both determinant signs.
pub fn solve_with_fallback(g: &ViewGraph, cfg: &SolveConfig) -> Result<SolveResult> {
    match solve_graph(g, cfg) {
        Err(Error::Solver(msg)) if cfg.init != InitStrategy::MstChain && msg.contains("mixed determinant") => {
            log::warn!("{msg}; retrying from the spanning-tree chain");
            solve_graph(g, &SolveConfig { init: InitStrategy::MstChain, ..cfg.clone() })
        }
        other => other,
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Filtering, largest component, BCM, robust refinement.
pub fn hybrid_solve(g: &ViewGraph, cfg: &HybridConfig) -> Result<PipelineResult> {
    if g.n() == 0 {
        return Err(Error::Graph("empty graph".into()));
    }
    let t = Instant::now();
    let (filtered, report) = filter(g, &cfg.filter)?;
    let (sub, map) = largest_connected_component(&filtered);
    let filter_s = secs(t);

    let t = Instant::now();
    let global = solve_with_fallback(&sub, &cfg.solve)?;
    let global_s = secs(t);

    let t = Instant::now();
    let irls_cfg = IrlsConfig { anchor: mapped_anchor(&map, cfg.irls.anchor), ..cfg.irls.clone() };
    let refined = match cfg.refine_edges {
        RefineEdges::Filtered => irls_solve(&global.rotations, &sub, &irls_cfg)?,
        RefineEdges::Input => {
            let keep: Vec<bool> = map.old_to_new.iter().map(Option::is_some).collect();
            let (full, _) = induced_subgraph(g, &keep);
            irls_solve(&global.rotations, &full, &irls_cfg)?
        }
    };
    let refine_s = secs(t);

    let (rotations, unregistered) = scatter(&map, g.n(), refined.rotations);
    Ok(PipelineResult {
        rotations,
        unregistered,
        edges_solved: sub.num_edges(),
        filter_report: Some(report),
        global_cost: Some(global.cost),
        sweeps: Some(global.sweeps),
        refine_iterations: Some(refined.iterations),
        times: StageTimes { filter_s, global_s, refine_s },
    })
}

/// BCM alone on the largest component.
pub fn global_only(g: &ViewGraph, cfg: &SolveConfig) -> Result<PipelineResult> {
    let (sub, map) = largest_connected_component(g);
    let t = Instant::now();
    let global = solve_with_fallback(&sub, cfg)?;
    let global_s = secs(t);
    let (rotations, unregistered) = scatter(&map, g.n(), global.rotations);
    Ok(PipelineResult {
        rotations,
        unregistered,
        edges_solved: sub.num_edges(),
        filter_report: None,
        global_cost: Some(global.cost),
        sweeps: Some(global.sweeps),
        refine_iterations: None,
        times: StageTimes { global_s, ..Default::default() },
    })
}

/// Robust refinement from the maximum-spanning-tree chain on the largest
/// component.
pub fn irls_only(g: &ViewGraph, cfg: &IrlsConfig) -> Result<PipelineResult> {
    let (sub, map) = largest_connected_component(g);
    let t = Instant::now();
    let blocks = crate::global_solver::mst_chain_blocks(&sub)?;
    let init: Vec<Rotation> = blocks.iter().map(|y| Rotation::from_matrix_unchecked(y.transpose())).collect();
    let irls_cfg = IrlsConfig { anchor: mapped_anchor(&map, cfg.anchor), ..cfg.clone() };
    let refined = irls_solve(&init, &sub, &irls_cfg)?;
    let refine_s = secs(t);
    let (rotations, unregistered) = scatter(&map, g.n(), refined.rotations);
    Ok(PipelineResult {
        rotations,
        unregistered,
        edges_solved: sub.num_edges(),
        filter_report: None,
        global_cost: None,
        sweeps: None,
        refine_iterations: Some(refined.iterations),
        times: StageTimes { refine_s, ..Default::default() },
    })
}

pub fn run_method(method: Method, g: &ViewGraph, cfg: &HybridConfig) -> Result<PipelineResult> {
    match method {
        Method::Global => global_only(g, &cfg.solve),
        Method::Hybrid => hybrid_solve(g, cfg),
        Method::IrlsOnly => irls_only(g, &cfg.irls),
    }
}

/// Errors over the registered nodes only.
pub fn evaluate_result(result: &PipelineResult, truth: &[Rotation]) -> Result<EvalReport> {
    let (est, gt): (Vec<Rotation>, Vec<Rotation>) = result.registered().map(|(k, r)| (*r, truth[k])).unzip();
    let mut report = evaluate(&est, &gt)?;
    report.final_cost = result.global_cost;
    report.sweeps = result.sweeps;
    report.time_filter_s = result.times.filter_s;
    report.time_global_s = result.times.global_s;
    report.time_refine_s = result.times.refine_s;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(noise: f64, outliers: f64, seed: u64) -> SynthProblem {
        generate_synthetic(&SynthConfig { n: 60, m: 240, noise_sigma: noise, outlier_ratio: outliers, seed, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn all_methods_recover_noiseless_problems() {
        let p = problem(0.0, 0.0, 1);
        let cfg = HybridConfig::default();
        for m in Method::ALL {
            let r = run_method(m, &p.graph, &cfg).unwrap();
            assert!(r.unregistered.is_empty());
            let e = evaluate_result(&r, &p.truth).unwrap();
            assert!(e.mean_err_deg < 1e-8, "{m:?}: {}", e.mean_err_deg);
        }
    }

    #[test]
    fn refinement_is_a_fixed_point_on_clean_graphs() {
        let p = problem(0.0, 0.0, 2);
        let cfg = HybridConfig { filter: FilterConfig { keep_unverified: true, ..Default::default() }, ..Default::default() };
        let h = hybrid_solve(&p.graph, &cfg).unwrap();
        let g = global_only(&p.graph, &cfg.solve).unwrap();
        for (a, b) in h.rotations.iter().zip(&g.rotations) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!(crate::so3::geodesic_angle(&a, &b).to_degrees() < 1e-9);
        }
    }

    #[test]
    fn hybrid_handles_outliers() {
        let p = problem(1f64.to_radians(), 0.3, 3);
        let cfg = HybridConfig::default();
        let h = evaluate_result(&hybrid_solve(&p.graph, &cfg).unwrap(), &p.truth).unwrap();
        let g = evaluate_result(&global_only(&p.graph, &cfg.solve).unwrap(), &p.truth).unwrap();
        assert!(h.mean_err_deg <= g.mean_err_deg, "{} vs {}", h.mean_err_deg, g.mean_err_deg);
        assert!(h.mean_err_deg < 5.0);
    }

    #[test]
    fn unregistered_nodes_are_reported() {
        let mut g = ViewGraph::new(5);
        g.add_edge(0, 1, Rotation::identity(), 10).unwrap();
        g.add_edge(1, 2, Rotation::identity(), 10).unwrap();
        g.add_edge(3, 4, Rotation::identity(), 10).unwrap();
        let r = hybrid_solve(&g, &HybridConfig::default()).unwrap();
        assert_eq!(r.unregistered, vec![3, 4]);
        assert!(r.rotations[0].is_some() && r.rotations[3].is_none());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }
}
