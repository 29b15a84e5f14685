//! Checks shared by the integration tests and the acceptance report. Each
//! returns a one-line summary or the first violation.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rand::Rng;
use rotavg::global_solver::{random_blocks, BcmSolver, SolveConfig};
use rotavg::pipeline::solve_with_fallback;
use rotavg::so3::{exp_map, random_axis, random_rotation};
use rotavg::view_graph::{assemble_connection_matrix, ViewGraph};

use super::{angle_deg, connection_block, dense_connection, edge_cost, nearest_orthogonal, random_instance, rng};

pub type Check = Result<String, String>;

fn q_reference(g: &ViewGraph, blocks: &[Matrix3<f64>]) -> Vec<Matrix3<f64>> {
    (0..g.n())
        .map(|j| {
            (0..g.n()).filter_map(|i| connection_block(g, i, j).map(|gij| blocks[i] * gij)).fold(Matrix3::zeros(), |a, b| a + b)
        })
        .collect()
}

/// Every block update descends, and no sampled orthogonal replacement of the
/// fresh block does better.
pub fn bcm_descent_and_block_optimality(instances: u64) -> Check {
    let mut r = rng(11);
    let (mut updates, mut worst_rise, mut worst_gain) = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for case in 0..instances {
        let n = r.random_range(3..=20);
        let extra = r.random_range(0..=(n * (n - 1) / 2 - (n - 1)).min(2 * n));
        let sigma = r.random_range(0.0..=0.5);
        let inst = random_instance(&mut r, n, extra, sigma, 0.0);
        let cm = assemble_connection_matrix(&inst.graph);
        let mut solver = BcmSolver::new(&cm, random_blocks(n, case)).map_err(|e| e.to_string())?;
        let mut cost = edge_cost(&inst.graph, &solver.state().blocks);
        for _sweep in 0..3 {
            for j in 0..n {
                solver.update(j);
                updates += 1;
                let blocks = solver.state().blocks.clone();
                let after = edge_cost(&inst.graph, &blocks);
                worst_rise = worst_rise.max(after - cost);
                if after > cost + 1e-12 {
                    return Err(format!("case {case} block {j}: cost rose {cost} -> {after}"));
                }
                cost = after;
                for p in 0..100 {
                    let mut trial = blocks.clone();
                    trial[j] = match p % 3 {
                        0 => blocks[j] * exp_map(&(r.random_range(1e-6..1e-2) * random_axis(&mut r))).matrix(),
                        1 => blocks[j] * exp_map(&(r.random_range(0.01..3.1) * random_axis(&mut r))).matrix(),
                        _ => -random_rotation(&mut r).into_matrix(),
                    };
                    let c = edge_cost(&inst.graph, &trial);
                    worst_gain = worst_gain.max(cost - c);
                    if c < cost - 1e-12 {
                        return Err(format!("case {case} block {j}: perturbation lowered cost {cost} -> {c}"));
                    }
                }
            }
        }
    }
    Ok(format!("{instances} instances, {updates} updates; max rise {worst_rise:.1e}, max perturbation gain {worst_gain:.1e}"))
}

/// Incremental `Q_j` against direct summation after every sweep.
pub fn bcm_cache_coherence(instances: u64, sweeps: usize) -> Check {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let n = r.random_range(5..=40);
        let inst = random_instance(&mut r, n, 2 * n, 0.2, 0.2);
        let cm = assemble_connection_matrix(&inst.graph);
        let mut solver = BcmSolver::new(&cm, random_blocks(n, case)).map_err(|e| e.to_string())?;
        for sweep in 0..sweeps {
            solver.sweep();
            let state = solver.state();
            let reference = q_reference(&inst.graph, &state.blocks);
            for (j, (q, q_ref)) in state.q.iter().zip(&reference).enumerate() {
                let d = (q - q_ref).norm();
                worst = worst.max(d);
                if d >= 1e-10 {
                    return Err(format!("case {case} sweep {sweep} node {j}: |dQ| = {d:.2e}"));
                }
            }
            let cached = -state.blocks.iter().zip(&state.q).map(|(y, q)| y.dot(q)).sum::<f64>();
            let direct = edge_cost(&inst.graph, &state.blocks);
            if (cached - direct).abs() >= 1e-9 {
                return Err(format!("case {case} sweep {sweep}: cached cost {cached} vs {direct}"));
            }
        }
    }
    Ok(format!("{instances} instances x {sweeps} sweeps; max |dQ| {worst:.1e}"))
}

/// Maximises `tr(Y·C·Yᵀ)` over `Y = [Y_1 … Y_n]` with orthogonal blocks.
fn power_iterations(c: &DMatrix<f64>, shift: f64, mut y: DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows() / 3;
    let shifted = c + DMatrix::identity(3 * n, 3 * n) * shift;
    for _ in 0..20_000 {
        let z = &y * &shifted;
        let mut next = DMatrix::zeros(3, 3 * n);
        for i in 0..n {
            let block: Matrix3<f64> = z.fixed_view::<3, 3>(0, 3 * i).into_owned();
            next.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&nearest_orthogonal(&block, false));
        }
        let change = (&next - &y).norm();
        y = next;
        if change < 1e-13 {
            break;
        }
    }
    y
}

fn blocks_of(y: &DMatrix<f64>) -> Vec<Matrix3<f64>> {
    (0..y.ncols() / 3).map(|i| y.fixed_view::<3, 3>(0, 3 * i).into_owned()).collect()
}

/// Returns the best cost and its blocks.
fn reference(c: &DMatrix<f64>, seed: u64) -> (f64, Vec<Matrix3<f64>>) {
    let n = c.nrows() / 3;
    let eig = SymmetricEigen::new(c.clone());
    let shift = (-eig.eigenvalues.min()).max(0.0) + 1e-9;
    let mut order: Vec<usize> = (0..3 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut spectral = DMatrix::zeros(3, 3 * n);
    for r in 0..3 {
        spectral.row_mut(r).copy_from(&eig.eigenvectors.column(order[r]).transpose());
    }
    let mut starts = vec![spectral];
    let mut g = rng(seed);
    for _ in 0..10 {
        let mut y = DMatrix::zeros(3, 3 * n);
        for i in 0..n {
            y.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(random_rotation(&mut g).matrix());
        }
        starts.push(y);
    }
    let mut best: Option<(f64, Vec<Matrix3<f64>>)> = None;
    for y0 in starts {
        let y = power_iterations(c, shift, y0);
        let cost = -(&y * c * y.transpose()).trace();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, blocks_of(&y)));
        }
    }
    best.unwrap()
}

/// BCM on small graphs against the dense reference: cost and rounded
/// rotations.
pub fn bcm_dense_oracle(graphs: u64) -> Check {
    let mut r = rng(77);
    let (mut worst_cost, mut worst_rot) = (0.0f64, 0.0f64);
    for case in 0..graphs {
        let n = 3 + (case as usize % 4);
        let max_extra = n * (n - 1) / 2 - (n - 1);
        let extra = 1 + case as usize % max_extra;
        let sigma = [0.05, 0.1, 0.2, 0.3][case as usize % 4];
        let inst = random_instance(&mut r, n, extra, sigma, 0.0);
        let c = dense_connection(&inst.graph);

        let (ref_cost, ref_blocks) = reference(&c, case);
        // independent cost evaluation agrees with the dense form
        if (edge_cost(&inst.graph, &ref_blocks) - ref_cost).abs() >= 1e-9 {
            return Err(format!("case {case}: dense and edgewise reference costs disagree"));
        }

        let res = solve_with_fallback(&inst.graph, &SolveConfig { seed: case, ..Default::default() }).map_err(|e| e.to_string())?;
        worst_cost = worst_cost.max((res.cost - ref_cost).abs());
        if (res.cost - ref_cost).abs() >= 1e-6 {
            return Err(format!("case {case}: bcm {} reference {ref_cost}", res.cost));
        }

        // rounding of the reference: R_i = proj(Y_iᵀ·Y_0)
        let ref_rots: Vec<Matrix3<f64>> =
            ref_blocks.iter().map(|y| nearest_orthogonal(&(y.transpose() * ref_blocks[0]), true)).collect();
        // both are anchored at R_0 = I, so they agree without further alignment
        for (k, (a, b)) in res.rotations.iter().zip(&ref_rots).enumerate() {
            let err = angle_deg(a.matrix(), b);
            worst_rot = worst_rot.max(err);
            if err >= 1e-3 {
                return Err(format!("case {case} node {k}: {err}°"));
            }
        }
    }
    Ok(format!("{graphs} graphs (n 3-6); max cost gap {worst_cost:.1e}, max rotation gap {worst_rot:.1e}°"))
}
