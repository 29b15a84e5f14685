//! Subcommand implementations.

use std::fmt::Write as _;

use serde::Serialize;

use rotavg::ba::{drift_scenario, mean_rotation_error_deg, optimize, serialize_scene, BaConfig, DriftConfig, Termination};
use rotavg::global_solver::{solve_graph, InitStrategy, SolveConfig};
use rotavg::graph_io::{fmt_float, parse_graph_str, parse_rotations_str, serialize_graph, serialize_rotations};
use rotavg::local_refine::{irls_solve, IrlsConfig, RobustLoss};
use rotavg::pipeline::bench::{outlier_sweep_grid, run_benchmark, size_grid, summarize, write_csv, BenchConfig};
use rotavg::pipeline::{evaluate, run_method, HybridConfig, Method, RefineEdges, SynthConfig, Topology};
use rotavg::so3::Rotation;
use rotavg::vgf::{self, FilterConfig};

use crate::io::{data, parse_file, to_json, usage, CliResult, Outputs};
use crate::{
    BaDemoArgs, BenchArgs, EvalArgs, FilterArgs, FilterOpts, GridArg, HybridArgs, InitArg, LossArg, MethodArg,
    RefineArgs, RefineEdgesArg, RefineOpts, SolveArgs, SolveOpts, SynthArgs, TopologyArg,
};

fn filter_config(o: &FilterOpts) -> FilterConfig {
    FilterConfig { epsilon_deg: o.eps_deg, iterations: o.iters, keep_unverified: o.keep_unverified }
}

fn solve_config(o: &SolveOpts) -> SolveConfig {
    let init = match o.init {
        InitArg::Random => InitStrategy::Random,
        InitArg::MstChain => InitStrategy::MstChain,
    };
    SolveConfig { max_sweeps: o.max_sweeps, rel_cost_tol: o.tol, block_tol: o.block_tol, init, seed: o.seed }
}

fn irls_config(o: &RefineOpts, anchor: usize) -> IrlsConfig {
    let loss = match o.loss {
        LossArg::GemanMcclure => RobustLoss::GemanMcClure,
        LossArg::Quadratic => RobustLoss::Quadratic,
    };
    IrlsConfig { sigma_deg: o.sigma_deg, max_outer_iters: o.max_iters, anchor, loss, ..Default::default() }
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Hybrid => Method::Hybrid,
        MethodArg::Global => Method::Global,
        MethodArg::IrlsOnly => Method::IrlsOnly,
    }
}

#[derive(Serialize)]
struct SynthReport {
    n: usize,
    m: usize,
    tree: Vec<(usize, usize)>,
    outliers: Vec<(usize, usize)>,
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let topology = match a.topology {
        TopologyArg::Random => Topology::Random,
        TopologyArg::Sequential => Topology::Sequential { window: a.window },
    };
    let cfg = SynthConfig {
        n: a.n,
        m: a.m,
        noise_sigma: a.noise_deg.to_radians(),
        outlier_ratio: a.outlier_ratio,
        outlier_angle_range: (a.outlier_min_deg, a.outlier_max_deg),
        outliers_off_tree: !a.allow_tree_outliers,
        topology,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let p = rotavg::pipeline::generate_synthetic(&cfg)?;
    let mut out = Outputs::default();
    out.add(&a.output, serialize_graph(&p.graph));
    if let Some(path) = &a.gt {
        out.add(path, serialize_rotations(p.truth.iter().enumerate()));
    }
    if let Some(path) = &a.report {
        let rep = SynthReport {
            n: p.graph.n(),
            m: p.graph.num_edges(),
            tree: p.tree.iter().copied().collect(),
            outliers: p.outliers.iter().copied().collect(),
        };
        out.add(path, to_json(&rep));
    }
    out.commit()
}

#[derive(Serialize)]
struct FilterSummary<'a> {
    kept: usize,
    removed: &'a [(usize, usize)],
    unverified: &'a [(usize, usize)],
}

pub fn filter(a: FilterArgs) -> CliResult<()> {
    let cfg = filter_config(&a.opts);
    cfg.validate()?;
    let g = parse_file(&a.input, parse_graph_str)?;
    let (kept, report) = vgf::filter(&g, &cfg)?;
    let mut lines = String::new();
    for it in &report.iterations {
        lines.push_str(&serde_json::to_string(it).expect("serialisable"));
        lines.push('\n');
    }
    let summary = FilterSummary { kept: report.kept.len(), removed: &report.removed, unverified: &report.unverified };
    lines.push_str(&serde_json::to_string(&summary).expect("serialisable"));
    lines.push('\n');
    let mut out = Outputs::default();
    out.add(&a.output, serialize_graph(&kept));
    match &a.report {
        Some(path) => out.add(path, lines),
        None => eprint!("{lines}"),
    }
    out.commit()
}

pub fn solve(a: SolveArgs) -> CliResult<()> {
    let cfg = solve_config(&a.opts);
    cfg.validate()?;
    let g = parse_file(&a.input, parse_graph_str)?;
    let res = solve_graph(&g, &cfg)?;
    if !res.converged {
        log::warn!("stopped after {} sweeps without meeting the tolerances", res.sweeps);
    }
    log::info!("cost {} after {} sweeps", res.cost, res.sweeps);
    let mut out = Outputs::default();
    out.add(&a.output, serialize_rotations(res.rotations.iter().enumerate()));
    if let Some(path) = &a.trace {
        let mut csv = String::from("sweep,cost\n");
        let _ = writeln!(csv, "0,{}", fmt_float(res.initial_cost));
        for (k, c) in res.cost_trace.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", k + 1, fmt_float(*c));
        }
        out.add(path, csv);
    }
    out.commit()
}

pub fn refine(a: RefineArgs) -> CliResult<()> {
    let cfg = irls_config(&a.opts, a.anchor);
    cfg.validate()?;
    let g = parse_file(&a.input, parse_graph_str)?;
    if a.anchor >= g.n() {
        return Err(usage(format!("anchor {} is not a node of the {}-node graph", a.anchor, g.n())));
    }
    let init_map = parse_file(&a.init, parse_rotations_str)?;
    let mut init = Vec::with_capacity(g.n());
    for k in 0..g.n() {
        let r = init_map.get(&k).ok_or_else(|| data(format!("{}: no rotation for node {k}", a.init.display())))?;
        init.push(*r);
    }
    let res = irls_solve(&init, &g, &cfg)?;
    if !res.converged {
        log::warn!("stopped after {} iterations without meeting the step tolerance", res.iterations);
    }
    let mut out = Outputs::default();
    out.add(&a.output, serialize_rotations(res.rotations.iter().enumerate()));
    out.commit()
}

pub fn hybrid(a: HybridArgs) -> CliResult<()> {
    let cfg = HybridConfig {
        filter: filter_config(&a.filter),
        solve: solve_config(&a.solve),
        irls: irls_config(&a.refine, 0),
        refine_edges: match a.refine_edges {
            RefineEdgesArg::Input => RefineEdges::Input,
            RefineEdgesArg::Filtered => RefineEdges::Filtered,
        },
    };
    cfg.filter.validate()?;
    cfg.solve.validate()?;
    cfg.irls.validate()?;
    let g = parse_file(&a.input, parse_graph_str)?;
    let res = run_method(method(a.method), &g, &cfg)?;
    if !res.unregistered.is_empty() {
        log::warn!("{} views left unregistered", res.unregistered.len());
    }
    let mut out = Outputs::default();
    out.add(&a.output, serialize_rotations(res.registered()));
    if let Some(path) = &a.report {
        out.add(path, to_json(&res));
    }
    out.commit()
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    report: rotavg::pipeline::EvalReport,
    /// Ground-truth views without an estimate.
    missing: Vec<usize>,
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let est = parse_file(&a.est, parse_rotations_str)?;
    let gt = parse_file(&a.gt, parse_rotations_str)?;
    if let Some(id) = est.keys().find(|k| !gt.contains_key(k)) {
        return Err(data(format!("estimate for view {id} has no ground truth")));
    }
    if est.is_empty() {
        return Err(data("no estimated rotations"));
    }
    let (e, t): (Vec<Rotation>, Vec<Rotation>) = est.iter().map(|(k, r)| (*r, gt[k])).unzip();
    let report = evaluate(&e, &t)?;
    let missing = gt.keys().filter(|k| !est.contains_key(k)).copied().collect();
    let mut out = Outputs::default();
    out.add_or_stdout(a.output.as_deref(), to_json(&EvalOutput { report, missing }))?;
    out.commit()
}

pub fn bench(a: BenchArgs) -> CliResult<()> {
    let sigma = a.noise_deg.to_radians();
    let cells = match a.grid {
        GridArg::Outliers => outlier_sweep_grid(sigma),
        GridArg::Sizes => size_grid(sigma).into_iter().map(|c| SynthConfig { outlier_ratio: 0.1, ..c }).collect(),
        GridArg::Custom => a
            .outlier_ratios
            .iter()
            .map(|&r| SynthConfig { n: a.n, m: a.m, noise_sigma: sigma, outlier_ratio: r, ..Default::default() })
            .collect(),
    };
    if a.trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let cfg = BenchConfig {
        cells,
        methods: a.methods.iter().map(|&m| method(m)).collect(),
        trials: a.trials,
        base_seed: a.seed,
        jobs: a.jobs,
        timing: !a.no_timing,
        pipeline: HybridConfig::default(),
    };
    let rows = run_benchmark(&cfg)?;
    let mut csv = Vec::new();
    write_csv(&rows, &mut csv)?;
    let mut out = Outputs::default();
    if let Some(path) = &a.summary {
        out.add(path, to_json(&summarize(&rows)));
    }
    out.add_or_stdout(a.output.as_deref(), csv)?;
    out.commit()
}

fn termination_name(t: &Termination) -> &'static str {
    match t {
        Termination::GradientTolerance => "gradient-tolerance",
        Termination::CostTolerance => "cost-tolerance",
        Termination::MaxIterations => "max-iterations",
        Termination::Stalled { .. } => "stalled",
    }
}

pub fn ba_demo(a: BaDemoArgs) -> CliResult<()> {
    let cfg = DriftConfig {
        cameras: a.cameras,
        points: a.points,
        drift_deg: a.drift_deg,
        pixel_noise: a.pixel_noise,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let mut weights = vec![0.0];
    weights.extend(a.weight.iter().copied().filter(|&w| w != 0.0));
    let base = BaConfig { max_iterations: a.max_iters, ..Default::default() };
    for &w in &weights {
        BaConfig { weight: w, ..base.clone() }.validate()?;
    }
    let sc = drift_scenario(&cfg)?;
    let initial = mean_rotation_error_deg(&sc.start, &sc.truth);
    let mut csv = String::from(
        "weight,initial_error_deg,final_error_deg,initial_cost,final_cost,iterations,accepted_steps,termination\n",
    );
    let mut last = None;
    for &w in &weights {
        let res = optimize(&sc.start, &BaConfig { weight: w, ..base.clone() })?;
        if let Termination::Stalled { lambda, gradient_max } = res.termination {
            log::warn!("w={w}: damping reached {lambda:e} with gradient {gradient_max:e}");
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            fmt_float(w),
            fmt_float(initial),
            fmt_float(mean_rotation_error_deg(&res.scene, &sc.truth)),
            fmt_float(res.cost_trace[0]),
            fmt_float(*res.cost_trace.last().expect("non-empty trace")),
            res.iterations,
            res.accepted_steps,
            termination_name(&res.termination),
        );
        last = Some(res.scene);
    }
    let mut out = Outputs::default();
    if let Some(path) = &a.save_start {
        out.add(path, serialize_scene(&sc.start));
    }
    if let Some(path) = &a.save_truth {
        out.add(path, serialize_scene(&sc.truth));
    }
    if let (Some(path), Some(scene)) = (&a.save_result, &last) {
        out.add(path, serialize_scene(scene));
    }
    out.add_or_stdout(a.report.as_deref(), csv)?;
    out.commit()
}
