//! Experiment harness: numeric optimum solving, iterations-to-accuracy
//! bookkeeping, learning-rate grid search, and worker-count sweeps.

mod report;

pub use report::{
    parse_sweep_csv, svg_iterations_vs_workers, svg_loss_curves, write_csv, write_svg,
};

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{partition_even, Dataset};
use crate::error::{Error, Result};
use crate::federation::{
    run_with_stop, FederationConfig, Sampling, StopRule, Trajectory, UpdateRule,
};
use crate::linalg;
use crate::objectives::{global_hessian, LossKind, Objective};
use crate::rng::cell_seed;
use crate::schedules::Schedule;

/// Iteration cap for the full-batch reference solver.
const FSTAR_MAX_ITERS: u64 = 10_000_000;

/// Output of [`solve_fstar`]: the numeric optimum and its certificate.
#[derive(Debug, Clone)]
pub struct FStarSolution {
    pub f_star: f64,
    pub w_opt: Vec<f64>,
    pub grad_norm: f64,
    pub iters: u64,
}

/// The cached form stored beside a dataset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FStarCache {
    pub f_star: f64,
    pub grad_norm: f64,
    pub tol: f64,
}

/// Solve for the reference optimum `F*` by full-batch gradient descent with
/// step `1/L`, stopping once `||grad F|| <= tol`.
pub fn solve_fstar(objective: &Objective, tol: f64) -> Result<FStarSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    // global smoothness constant of F for the descent step
    let h = global_hessian(objective);
    let lambda_max = h
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));
    let l_global = match objective.kind() {
        LossKind::LeastSquares => lambda_max,
        LossKind::RegLogistic { lambda } => lambda + lambda_max / 4.0,
        LossKind::Logistic => lambda_max / 4.0,
    };
    if !(l_global > 0.0) {
        return Err(Error::DegenerateSpectrum(
            "objective has no curvature".into(),
        ));
    }
    let step = 1.0 / l_global;

    let mut w = vec![0.0; objective.dim()];
    for it in 0..FSTAR_MAX_ITERS {
        let g = objective.grad_global(&w)?;
        let gnorm = linalg::norm_sq(&g).sqrt();
        if gnorm <= tol {
            return Ok(FStarSolution {
                f_star: objective.value(&w)?,
                w_opt: w,
                grad_norm: gnorm,
                iters: it,
            });
        }
        linalg::axpy(&mut w, -step, &g);
    }
    let g = objective.grad_global(&w)?;
    Err(Error::ConvergenceFailure {
        iters: FSTAR_MAX_ITERS,
        grad_norm: linalg::norm_sq(&g).sqrt(),
        tol,
    })
}

pub fn write_fstar_cache(path: &Path, sol: &FStarSolution, tol: f64) -> Result<()> {
    let cache = FStarCache {
        f_star: sol.f_star,
        grad_norm: sol.grad_norm,
        tol,
    };
    let json = serde_json::to_string_pretty(&cache).expect("cache serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_fstar_cache(path: &Path) -> Result<FStarCache> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("bad f* cache {}: {e}", path.display())))
}

/// First recorded step at which `loss - f_star <= epsilon`, or `None` if the
/// trajectory never got there. With a sparse evaluation stride this reports
/// the first *recorded* point at or after the true crossing.
pub fn iterations_to_accuracy(traj: &Trajectory, f_star: f64, epsilon: f64) -> Option<u64> {
    traj.points
        .iter()
        .find(|p| p.loss - f_star <= epsilon)
        .map(|p| p.t)
}

/// One learning-rate grid cell of the experiment protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub eta0: f64,
    pub c: f64,
}

/// Result of one `(cell, seed)` run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub cell: GridCell,
    pub seed: u64,
    pub iters: Option<u64>,
}

/// Grid-search outcome: the winning cell (if anything reached the target)
/// plus every per-cell per-seed measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: Option<(GridCell, u64, u64)>,
    pub rows: Vec<GridRow>,
}

/// Run every `(eta0, c)` cell at every seed and return the cell with the
/// fewest iterations to `epsilon`-accuracy (best seed per cell, ties broken
/// by larger `c`, then larger `eta0`). Divergent cells count as not reached.
pub fn grid_search(
    base: &FederationConfig,
    objective: &Objective,
    grid: &[(f64, f64)],
    f_star: f64,
    epsilon: f64,
    seeds: &[u64],
    nesterov_beta: f64,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty learning-rate grid".into()));
    }
    let n_samples = objective.data().n();
    let jobs: Vec<(usize, GridCell, u64)> = grid
        .iter()
        .enumerate()
        .flat_map(|(ci, &(eta0, c))| seeds.iter().map(move |&s| (ci, GridCell { eta0, c }, s)))
        .collect();

    let rows: Result<Vec<GridRow>> = jobs
        .par_iter()
        .map(|&(ci, cell, seed)| {
            let mut cfg = base.clone();
            cfg.schedule = Schedule::ExperimentDecay {
                eta0: cell.eta0,
                n_samples,
                c: cell.c,
                beta: nesterov_beta,
            };
            cfg.master_seed = cell_seed(seed, ci as u64);
            let iters = match run_with_stop(&cfg, objective, Some(StopRule { f_star, epsilon })) {
                Ok(traj) => iterations_to_accuracy(&traj, f_star, epsilon),
                Err(Error::Divergence { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(GridRow { cell, seed, iters })
        })
        .collect();
    let rows = rows?;

    // best seed per cell, then best cell with the documented tie-breaks
    let mut best: Option<(GridCell, u64, u64)> = None;
    for &(eta0, c) in grid {
        let cell_best = rows
            .iter()
            .filter(|r| r.cell.eta0 == eta0 && r.cell.c == c)
            .filter_map(|r| r.iters.map(|t| (t, r.seed)))
            .min();
        if let Some((iters, seed)) = cell_best {
            let better = match &best {
                None => true,
                Some((bc, bt, _)) => {
                    iters < *bt
                        || (iters == *bt && c > bc.c)
                        || (iters == *bt && c == bc.c && eta0 > bc.eta0)
                }
            };
            if better {
                best = Some((GridCell { eta0, c }, iters, seed));
            }
        }
    }
    Ok(GridOutcome { best, rows })
}

/// One `(N, K)` configuration in a speedup sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub n_devices: usize,
    pub k_active: usize,
}

/// Sweep driver parameters shared by every point.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub points: Vec<SweepPoint>,
    pub e_local: u64,
    pub rule: UpdateRule,
    pub sampling: Sampling,
    pub epsilon: f64,
    pub grid: Vec<(f64, f64)>,
    pub seeds: Vec<u64>,
    pub t_max: u64,
    pub batch_size: usize,
    pub eval_stride: u64,
    pub nesterov_beta: f64,
}

/// Winning configuration for one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n_devices: usize,
    pub k_active: usize,
    pub e_local: u64,
    pub rule: UpdateRule,
    pub scheme: Sampling,
    pub eta0: f64,
    pub c: f64,
    pub seed: u64,
    pub iters: Option<u64>,
}

/// Sweep output: one row per `(N, K)` point, keyed uniquely.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub epsilon: f64,
    pub f_star: f64,
}

impl SweepResult {
    /// Speedup ratios `T(first point) / T(point)`; `None` where either side
    /// never reached the target.
    pub fn speedup_ratios(&self) -> Vec<Option<f64>> {
        let base = self.rows.first().and_then(|r| r.iters);
        self.rows
            .iter()
            .map(|r| match (base, r.iters) {
                (Some(b), Some(t)) if t > 0 => Some(b as f64 / t as f64),
                (Some(b), Some(_)) => Some(b as f64), // t == 0: immediate hit
                _ => None,
            })
            .collect()
    }
}

/// Run one grid search per sweep point, re-partitioning the dataset for each
/// device count. Rows come back in point order regardless of parallelism.
pub fn speedup_sweep(
    data: &Arc<Dataset>,
    kind: LossKind,
    f_star: f64,
    spec: &SweepSpec,
) -> Result<SweepResult> {
    if spec.points.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one point".into()));
    }
    // rows are keyed by (N, K, E, rule, scheme); duplicates would collide
    for (i, a) in spec.points.iter().enumerate() {
        if spec.points[..i].contains(a) {
            return Err(Error::InvalidInput(format!(
                "duplicate sweep point N={}, K={}",
                a.n_devices, a.k_active
            )));
        }
    }
    let mut rows = Vec::with_capacity(spec.points.len());
    for point in &spec.points {
        let part = Arc::new(partition_even(data, point.n_devices)?);
        let objective = Objective::new(kind, data.clone(), part);
        let base = FederationConfig {
            n_devices: point.n_devices,
            k_active: point.k_active,
            local_steps: spec.e_local,
            total_steps: spec.t_max,
            batch_size: spec.batch_size,
            rule: spec.rule,
            sampling: spec.sampling,
            schedule: Schedule::Fixed {
                alpha: 0.0,
                beta: 0.0,
                eta1: 0.0,
                eta2: 0.0,
                gamma: 0.0,
            },
            master_seed: 0,
            eval_stride: spec.eval_stride,
            record_iterates: false,
            mass_grad_at_w: false,
        };
        let outcome = grid_search(
            &base,
            &objective,
            &spec.grid,
            f_star,
            spec.epsilon,
            &spec.seeds,
            spec.nesterov_beta,
        )?;
        let row = match outcome.best {
            Some((cell, iters, seed)) => SweepRow {
                n_devices: point.n_devices,
                k_active: point.k_active,
                e_local: spec.e_local,
                rule: spec.rule,
                scheme: spec.sampling,
                eta0: cell.eta0,
                c: cell.c,
                seed,
                iters: Some(iters),
            },
            None => {
                // nothing reached the target; report the tie-break-preferred cell
                let pref = spec
                    .grid
                    .iter()
                    .copied()
                    .max_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).expect("finite grid"))
                    .expect("nonempty grid");
                SweepRow {
                    n_devices: point.n_devices,
                    k_active: point.k_active,
                    e_local: spec.e_local,
                    rule: spec.rule,
                    scheme: spec.sampling,
                    eta0: pref.0,
                    c: pref.1,
                    seed: spec.seeds.first().copied().unwrap_or(0),
                    iters: None,
                }
            }
        };
        log::info!(
            "sweep point N={} K={}: {}",
            point.n_devices,
            point.k_active,
            row.iters
                .map_or("not reached".to_string(), |t| format!("{t} iters"))
        );
        rows.push(row);
    }
    Ok(SweepResult {
        rows,
        epsilon: spec.epsilon,
        f_star,
    })
}
