//! Benchmark harness: synthetic grid × methods × seeded trials → CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate_result, generate_synthetic, run_method, HybridConfig, Method, SynthConfig};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "n,m,noise_sigma,outlier_ratio,method,trial,mean_err_deg,median_err_deg,max_err_deg,\
time_filter_s,time_global_s,time_refine_s,sweeps";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// Cell templates; the seed field is ignored.
    pub cells: Vec<SynthConfig>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    /// Write measured stage times; otherwise zeros, which makes output
    /// byte-reproducible.
    pub timing: bool,
    pub pipeline: HybridConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            cells: Vec::new(),
            methods: Method::ALL.to_vec(),
            trials: 30,
            base_seed: 0,
            jobs: 0,
            timing: true,
            pipeline: HybridConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub noise_sigma: f64,
    pub outlier_ratio: f64,
    pub method: &'static str,
    pub trial: usize,
    pub mean_err_deg: f64,
    pub median_err_deg: f64,
    pub max_err_deg: f64,
    pub time_filter_s: f64,
    pub time_global_s: f64,
    pub time_refine_s: f64,
    pub sweeps: usize,
}

/// Seed of trial `trial` in cell `cell`; all methods share the instance.
pub fn trial_seed(base_seed: u64, cell: usize, trial: usize) -> u64 {
    base_seed.wrapping_add((cell as u64).wrapping_mul(1_000_003)).wrapping_add(trial as u64)
}

/// Outlier ratios 0, 5%, …, 50% at `n = 100`, `m = 300`, 60–90° outliers.
pub fn outlier_sweep_grid(noise_sigma: f64) -> Vec<SynthConfig> {
    (0..=10)
        .map(|k| SynthConfig { n: 100, m: 300, noise_sigma, outlier_ratio: k as f64 * 0.05, ..Default::default() })
        .collect()
}

/// Problem sizes of the synthetic size table.
pub fn size_grid(noise_sigma: f64) -> Vec<SynthConfig> {
    [(20, 30), (100, 300), (500, 1000), (1000, 4000), (5000, 20000), (10000, 40000)]
        .into_iter()
        .map(|(n, m)| SynthConfig { n, m, noise_sigma, ..Default::default() })
        .collect()
}

fn run_trial(cfg: &BenchConfig, cell: usize, trial: usize, method: Method) -> BenchRow {
    let template = &cfg.cells[cell];
    let seed = trial_seed(cfg.base_seed, cell, trial);
    let synth = SynthConfig { seed, ..template.clone() };
    let mut pipeline = cfg.pipeline.clone();
    pipeline.solve.seed = seed;
    let outcome = generate_synthetic(&synth).and_then(|p| {
        let r = run_method(method, &p.graph, &pipeline)?;
        evaluate_result(&r, &p.truth)
    });
    let mut row = BenchRow {
        n: template.n,
        m: template.m,
        noise_sigma: template.noise_sigma,
        outlier_ratio: template.outlier_ratio,
        method: method.name(),
        trial,
        mean_err_deg: f64::NAN,
        median_err_deg: f64::NAN,
        max_err_deg: f64::NAN,
        time_filter_s: 0.0,
        time_global_s: 0.0,
        time_refine_s: 0.0,
        sweeps: 0,
    };
    match outcome {
        Ok(e) => {
            row.mean_err_deg = e.mean_err_deg;
            row.median_err_deg = e.median_err_deg;
            row.max_err_deg = e.max_err_deg;
            row.sweeps = e.sweeps.unwrap_or(0);
            if cfg.timing {
                row.time_filter_s = e.time_filter_s;
                row.time_global_s = e.time_global_s;
                row.time_refine_s = e.time_refine_s;
            }
        }
        Err(err) => log::warn!("cell {cell} trial {trial} {}: {err}", method.name()),
    }
    row
}

/// Runs every (cell, method, trial); rows come back in that nesting order
/// regardless of scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    for c in &cfg.cells {
        c.validate()?;
    }
    cfg.pipeline.filter.validate()?;
    cfg.pipeline.solve.validate()?;
    cfg.pipeline.irls.validate()?;
    let tasks: Vec<(usize, Method, usize)> = (0..cfg.cells.len())
        .flat_map(|c| cfg.methods.iter().flat_map(move |m| (0..cfg.trials).map(move |t| (c, *m, t))))
        .collect();
    let run = || tasks.par_iter().map(|&(c, m, t)| run_trial(cfg, c, t, m)).collect::<Vec<_>>();
    if cfg.jobs == 0 {
        return Ok(run());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(run))
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub n: usize,
    pub m: usize,
    pub noise_sigma: f64,
    pub outlier_ratio: f64,
    pub method: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub mean_err_deg: f64,
}

/// Mean of per-trial mean errors for every (cell, method), failed trials
/// excluded.
pub fn summarize(rows: &[BenchRow]) -> Vec<CellSummary> {
    let mut out: Vec<CellSummary> = Vec::new();
    for r in rows {
        let same = |s: &CellSummary| {
            s.n == r.n && s.m == r.m && s.noise_sigma == r.noise_sigma && s.outlier_ratio == r.outlier_ratio && s.method == r.method
        };
        let idx = match out.iter().position(same) {
            Some(i) => i,
            None => {
                out.push(CellSummary {
                    n: r.n,
                    m: r.m,
                    noise_sigma: r.noise_sigma,
                    outlier_ratio: r.outlier_ratio,
                    method: r.method,
                    trials: 0,
                    failures: 0,
                    mean_err_deg: 0.0,
                });
                out.len() - 1
            }
        };
        let s = &mut out[idx];
        s.trials += 1;
        if r.mean_err_deg.is_nan() {
            s.failures += 1;
        } else {
            s.mean_err_deg += r.mean_err_deg;
        }
    }
    for s in &mut out {
        let ok = s.trials - s.failures;
        s.mean_err_deg = if ok > 0 { s.mean_err_deg / ok as f64 } else { f64::NAN };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            cells: vec![
                SynthConfig { n: 30, m: 80, noise_sigma: 0.01, ..Default::default() },
                SynthConfig { n: 30, m: 80, noise_sigma: 0.01, outlier_ratio: 0.2, ..Default::default() },
            ],
            trials: 3,
            base_seed: 11,
            timing: false,
            ..Default::default()
        }
    }

    #[test]
    fn csv_schema() {
        let rows = run_benchmark(&BenchConfig { trials: 1, ..small() }).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), 2 * 3);
    }

    #[test]
    fn row_order_and_determinism() {
        let cfg = small();
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&BenchConfig { jobs: 1, ..cfg.clone() }).unwrap();
        assert_eq!(a.len(), 2 * 3 * 3);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_csv(&a, &mut x).unwrap();
        write_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a[0].method, "global");
        assert_eq!(a[3].method, "hybrid");
        assert_eq!(a[9].outlier_ratio, 0.2);
        assert!(a.iter().all(|r| r.time_global_s == 0.0));
    }

    #[test]
    fn grids() {
        let g = outlier_sweep_grid(0.0);
        assert_eq!(g.len(), 11);
        assert!((g[10].outlier_ratio - 0.5).abs() < 1e-12);
        assert!(g.iter().all(|c| c.validate().is_ok()));
        assert_eq!(size_grid(0.2).last().unwrap().n, 10000);
    }

    #[test]
    fn summary_means() {
        let rows = run_benchmark(&small()).unwrap();
        let s = summarize(&rows);
        assert_eq!(s.len(), 6);
        assert!(s.iter().all(|c| c.trials == 3 && c.failures == 0));
    }
}
