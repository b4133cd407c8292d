//! Acceptance suite: one test per criterion, each printing a PASS/SKIP line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! The two w8a reference checks skip themselves when the dataset is not
//! present (searched under `$FEDSIM_DATA_DIR`, `./data`, and the workspace
//! `data/` directory); everything else runs on synthetic data.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use rand::Rng;

use fedsim_core::dataio::{
    gen_counterexample, gen_gaussian_quadratic, parse_libsvm, partition_even, Dataset,
};
use fedsim_core::experiments::{grid_search, iterations_to_accuracy, solve_fstar, GridCell};
use fedsim_core::federation::{
    aggregate, run_detailed, run_with_stop, sample_devices, FederationConfig, Sampling, StopRule,
    UpdateRule,
};
use fedsim_core::linalg;
use fedsim_core::objectives::{
    measure_bounds, psd_residual_min, second_moment_matrix, spectral_report,
    statistical_moment_matrix, LossKind, Objective,
};
use fedsim_core::rng::{cell_seed, stream, StreamKind};
use fedsim_core::schedules::{experiment_decay, lr_grid, Schedule};

fn pass(id: u32, name: &str) {
    println!("ACCEPTANCE {id:02} {name}: PASS");
}

fn skip(id: u32, name: &str, why: &str) {
    println!("ACCEPTANCE {id:02} {name}: SKIP ({why})");
}

// ---------------------------------------------------------------- fixtures

/// Binary classification data with Gaussian features and 20% label noise;
/// the noise keeps the gradient variance alive near the optimum, which is
/// the regime the speedup statements are about.
fn synthetic_logistic(n: usize, d: usize, seed: u64) -> Arc<Dataset> {
    let base = gen_gaussian_quadratic(n, d, &vec![1.0; d], seed).unwrap();
    let mut flip_rng = stream(seed ^ 0x5eed, StreamKind::GroundTruth, 1, 0);
    let rows: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|i| {
            let (idx, val) = base.row(i);
            idx.iter().copied().zip(val.iter().copied()).collect()
        })
        .collect();
    let labels: Vec<f64> = (0..n)
        .map(|i| {
            let y = if base.label(i) >= 0.0 { 1.0 } else { -1.0 };
            if flip_rng.random::<f64>() < 0.2 {
                -y
            } else {
                y
            }
        })
        .collect();
    Arc::new(Dataset::new(rows, labels, d).unwrap())
}

const SPEEDUP_N: usize = 4096;
const SPEEDUP_D: usize = 30;
const SPEEDUP_EPS: f64 = 0.01;
const SPEEDUP_T_MAX: u64 = 100_000;

fn speedup_lambda() -> f64 {
    1.0 / SPEEDUP_N as f64
}

fn speedup_data() -> &'static Arc<Dataset> {
    static DATA: OnceLock<Arc<Dataset>> = OnceLock::new();
    DATA.get_or_init(|| synthetic_logistic(SPEEDUP_N, SPEEDUP_D, 2024))
}

fn speedup_objective(n_devices: usize) -> Objective {
    let data = speedup_data().clone();
    let part = Arc::new(partition_even(&data, n_devices).unwrap());
    Objective::new(
        LossKind::RegLogistic {
            lambda: speedup_lambda(),
        },
        data,
        part,
    )
}

fn speedup_fstar() -> f64 {
    static FSTAR: OnceLock<f64> = OnceLock::new();
    *FSTAR.get_or_init(|| {
        let sol = solve_fstar(&speedup_objective(1), 1e-5).unwrap();
        sol.f_star
    })
}

fn speedup_grid() -> Vec<(f64, f64)> {
    lr_grid(&[1.0, 32.0], 0.125)
}

fn speedup_base(
    n_devices: usize,
    k_active: usize,
    e_local: u64,
    sampling: Sampling,
) -> FederationConfig {
    FederationConfig {
        n_devices,
        k_active,
        local_steps: e_local,
        total_steps: SPEEDUP_T_MAX,
        batch_size: 4,
        rule: UpdateRule::Sgd,
        sampling,
        schedule: Schedule::Fixed {
            alpha: 0.0,
            beta: 0.0,
            eta1: 0.0,
            eta2: 0.0,
            gamma: 0.0,
        },
        master_seed: 0,
        eval_stride: 50,
        record_iterates: false,
        mass_grad_at_w: false,
    }
}

/// Grid winners of the full-participation speedup experiment, shared between
/// criteria 2 and 8.
fn full_participation_winners() -> &'static Vec<(usize, GridCell, u64, u64)> {
    static WINNERS: OnceLock<Vec<(usize, GridCell, u64, u64)>> = OnceLock::new();
    WINNERS.get_or_init(|| {
        let f_star = speedup_fstar();
        [1usize, 2, 4, 8]
            .iter()
            .map(|&n| {
                let obj = speedup_objective(n);
                let base = speedup_base(n, n, 4, Sampling::Full);
                let out = grid_search(
                    &base,
                    &obj,
                    &speedup_grid(),
                    f_star,
                    SPEEDUP_EPS,
                    &[0, 1, 2],
                    0.0,
                )
                .unwrap();
                let (cell, iters, seed) = out
                    .best
                    .unwrap_or_else(|| panic!("no grid cell reached eps at N={n}"));
                (n, cell, iters, seed)
            })
            .collect()
    })
}

fn quad_flat() -> (Arc<Dataset>, Objective) {
    let ds = Arc::new(gen_gaussian_quadratic(512, 64, &vec![1.0; 64], 31).unwrap());
    let part = Arc::new(partition_even(&ds, 8).unwrap());
    let obj = Objective::new(LossKind::LeastSquares, ds.clone(), part);
    (ds, obj)
}

fn quad_skewed() -> Objective {
    let mut spectrum = vec![1.0 / 256.0; 16];
    spectrum[0] = 1.0;
    let ds = Arc::new(gen_gaussian_quadratic(512, 16, &spectrum, 57).unwrap());
    let part = Arc::new(partition_even(&ds, 8).unwrap());
    Objective::new(LossKind::LeastSquares, ds, part)
}

fn find_w8a() -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    if let Ok(env_dir) = std::env::var("FEDSIM_DATA_DIR") {
        dirs.push(PathBuf::from(env_dir));
    }
    dirs.push(PathBuf::from("data"));
    dirs.push(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    for dir in dirs {
        for name in ["w8a", "w8a.txt", "w8a.libsvm"] {
            let p = dir.join(name);
            if p.exists() {
                return Some(p);
            }
        }
    }
    None
}

// --------------------------------------------------------------- criteria

// Criterion 1: reference optima on w8a match the published values.
#[test]
fn acceptance_01_w8a_reference_optima() {
    let name = "w8a_reference_optima";
    let Some(path) = find_w8a() else {
        skip(1, name, "w8a dataset not found");
        return;
    };
    let text = std::fs::read_to_string(&path).unwrap();
    let data = Arc::new(parse_libsvm(&text).unwrap());
    assert_eq!((data.n(), data.dim()), (49749, 300), "unexpected w8a shape");
    let part = Arc::new(partition_even(&data, 1).unwrap());

    let reg = Objective::new(
        LossKind::RegLogistic {
            lambda: 1.0 / 49749.0,
        },
        data.clone(),
        part.clone(),
    );
    let sol = solve_fstar(&reg, 1e-9).unwrap();
    assert!(
        (sol.f_star - 0.126433176216545).abs() <= 1e-6,
        "regularized f* = {}",
        sol.f_star
    );

    let plain = Objective::new(LossKind::Logistic, data, part);
    let sol = solve_fstar(&plain, 1e-7).unwrap();
    assert!(
        (sol.f_star - 0.11379089057514849).abs() <= 1e-6,
        "unregularized f* = {}",
        sol.f_star
    );
    pass(1, name);
}

// Criterion 2: iterations-to-accuracy shrinks with the worker count under
// full participation, by at least 2.5x from N=1 to N=8.
#[test]
fn acceptance_02_linear_speedup_full_participation() {
    let winners = full_participation_winners();
    let iters: Vec<u64> = winners.iter().map(|&(_, _, t, _)| t).collect();
    for (i, w) in winners.iter().enumerate() {
        println!(
            "  N={}: {} iters (eta0={}, c={}, seed={})",
            w.0, w.2, w.1.eta0, w.1.c, w.3
        );
        if i > 0 {
            assert!(
                iters[i] <= iters[i - 1],
                "iterations increased from N={} to N={}",
                winners[i - 1].0,
                w.0
            );
        }
    }
    let ratio = iters[0] as f64 / iters[3] as f64;
    assert!(ratio >= 2.5, "T(1)/T(8) = {ratio:.2} < 2.5");
    pass(2, "linear_speedup_full_participation");
}

// Criterion 3: with N=16 fixed and K in {2,4,8} sampled without replacement
// at E=1, iterations shrink in K, by at least 2x from K=2 to K=8.
#[test]
fn acceptance_03_partial_participation_speedup() {
    let f_star = speedup_fstar();
    let mut iters = Vec::new();
    for &k in &[2usize, 4, 8] {
        let obj = speedup_objective(16);
        let base = speedup_base(16, k, 1, Sampling::WithoutReplacement);
        let out = grid_search(
            &base,
            &obj,
            &speedup_grid(),
            f_star,
            SPEEDUP_EPS,
            &[0, 1, 2],
            0.0,
        )
        .unwrap();
        let (cell, t, seed) = out
            .best
            .unwrap_or_else(|| panic!("no cell reached eps at K={k}"));
        println!(
            "  K={k}: {t} iters (eta0={}, c={}, seed={seed})",
            cell.eta0, cell.c
        );
        iters.push(t);
    }
    assert!(iters[1] <= iters[0], "T(4) > T(2)");
    assert!(iters[2] <= iters[1], "T(8) > T(4)");
    let ratio = iters[0] as f64 / iters[2] as f64;
    assert!(ratio >= 2.0, "T(2)/T(8) = {ratio:.2} < 2");
    pass(3, "partial_participation_speedup");
}

// Criterion 4: geometric convergence of FedAvg on an interpolating quadratic
// with the constant overparameterized step.
#[test]
fn acceptance_04_geometric_convergence_overparameterized() {
    let (_, obj) = quad_flat();
    let rep = spectral_report(&obj).unwrap();
    let f0 = obj.value(&vec![0.0; obj.dim()]).unwrap();
    let target = 1e-10 * f0;
    let cfg = FederationConfig {
        n_devices: 8,
        k_active: 8,
        local_steps: 4,
        total_steps: 50_000,
        batch_size: 4,
        rule: UpdateRule::Sgd,
        sampling: Sampling::Full,
        schedule: Schedule::OverparamConst {
            e_local: 4,
            n_devices: 8,
            l: rep.l,
            l_or_mu: rep.mu,
            nu_max: rep.nu_max,
            nu_min: rep.nu_min,
            c: 0.25,
        },
        master_seed: 5,
        eval_stride: 25,
        record_iterates: false,
        mass_grad_at_w: false,
    };
    let traj = run_with_stop(
        &cfg,
        &obj,
        Some(StopRule {
            f_star: 0.0,
            epsilon: target,
        }),
    )
    .unwrap();
    let hit = iterations_to_accuracy(&traj, 0.0, target);
    let t_hit = hit.unwrap_or_else(|| {
        panic!(
            "loss never reached {target:.3e} (last {:?})",
            traj.final_loss()
        )
    });
    println!("  reached 1e-10 * F(0) at t = {t_hit}");

    // log-linear fit over the convergent segment
    let pts: Vec<(f64, f64)> = traj
        .points
        .iter()
        .filter(|p| p.loss > 0.0)
        .map(|p| (p.t as f64, p.loss.log10()))
        .collect();
    let r2 = r_squared(&pts);
    println!("  log10 F fit: R^2 = {r2:.4} over {} points", pts.len());
    assert!(r2 >= 0.95, "R^2 = {r2:.4} < 0.95");
    pass(4, "geometric_convergence_overparameterized");
}

fn r_squared(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    sxy * sxy / (sxx * syy)
}

// Criterion 5: FedMaSS accelerates over FedAvg on a quadratic whose
// per-sample condition number dominates its statistical one.
#[test]
fn acceptance_05_fedmass_acceleration() {
    let obj = quad_skewed();
    let rep = spectral_report(&obj).unwrap();
    let cond_ratio = rep.kappa1 / rep.kappa_tilde;
    println!(
        "  kappa1 = {:.1}, kappa_tilde = {:.2}, ratio = {cond_ratio:.1}",
        rep.kappa1, rep.kappa_tilde
    );
    assert!(cond_ratio >= 16.0, "instance ratio {cond_ratio:.1} < 16");

    let f0 = obj.value(&vec![0.0; obj.dim()]).unwrap();
    let target = 1e-8 * f0;
    let mk = |rule: UpdateRule, schedule: Schedule| FederationConfig {
        n_devices: 8,
        k_active: 8,
        local_steps: 1,
        total_steps: 200_000,
        batch_size: 4,
        rule,
        sampling: Sampling::Full,
        schedule,
        master_seed: 5,
        eval_stride: 25,
        record_iterates: false,
        mass_grad_at_w: false,
    };
    let fedavg = mk(
        UpdateRule::Sgd,
        Schedule::OverparamConst {
            e_local: 1,
            n_devices: 8,
            l: rep.l,
            l_or_mu: rep.mu,
            nu_max: rep.nu_max,
            nu_min: rep.nu_min,
            c: 0.25,
        },
    );
    let fedmass = mk(
        UpdateRule::Mass,
        Schedule::MassConst {
            e_local: 1,
            n_devices: 8,
            l: rep.l,
            mu: rep.mu,
            nu_max: rep.nu_max,
            nu_min: rep.nu_min,
            kappa1: rep.kappa1,
            kappa_tilde: rep.kappa_tilde,
            c: 0.25,
        },
    );
    let stop = Some(StopRule {
        f_star: 0.0,
        epsilon: target,
    });
    let t_avg = iterations_to_accuracy(&run_with_stop(&fedavg, &obj, stop).unwrap(), 0.0, target)
        .expect("fedavg reaches the target");
    let t_mass = iterations_to_accuracy(&run_with_stop(&fedmass, &obj, stop).unwrap(), 0.0, target)
        .expect("fedmass reaches the target");
    let ratio = t_avg as f64 / t_mass as f64;
    println!("  fedavg {t_avg} iters, fedmass {t_mass} iters, ratio {ratio:.2}");
    assert!(
        t_mass < t_avg,
        "fedmass ({t_mass}) not faster than fedavg ({t_avg})"
    );
    assert!(ratio >= 1.3, "speedup {ratio:.2} < 1.3");
    pass(5, "fedmass_acceleration");
}

// Criterion 6a: a single-device E=1 federation is exactly centralized
// minibatch SGD under the shared draw contract.
#[test]
fn acceptance_06a_single_device_matches_sgd_oracle() {
    let data = synthetic_logistic(256, 10, 99);
    let lambda = 1.0 / 256.0;
    let part = Arc::new(partition_even(&data, 1).unwrap());
    let obj = Objective::new(LossKind::RegLogistic { lambda }, data.clone(), part);
    let (eta0, nc): (f64, f64) = (1.0, 0.03125);
    let seed = 7u64;
    let batch = 4usize;

    // standalone oracle: plain minibatch SGD over the whole dataset
    let oracle = |steps: u64| -> Vec<f64> {
        let d = data.dim();
        let n = data.n();
        let mut w = vec![0.0; d];
        for t in 0..steps {
            let mut rng = stream(seed, StreamKind::Batch, 0, t);
            let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
            let mut g = vec![0.0; d];
            for &i in &idx {
                let z = data.dot_row(i, &w);
                let y = data.label(i);
                data.add_row(i, -y / (1.0 + (y * z).exp()), &mut g);
            }
            for gi in g.iter_mut() {
                *gi /= batch as f64;
            }
            for (gi, wi) in g.iter_mut().zip(&w) {
                *gi += lambda * wi;
            }
            let alpha = eta0.min(n as f64 * nc / (1.0 + t as f64));
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= alpha * gi;
            }
        }
        w
    };

    for steps in [100u64, 500, 1000] {
        let cfg = FederationConfig {
            n_devices: 1,
            k_active: 1,
            local_steps: 1,
            total_steps: steps,
            batch_size: batch,
            rule: UpdateRule::Sgd,
            sampling: Sampling::Full,
            schedule: Schedule::ExperimentDecay {
                eta0,
                n_samples: data.n(),
                c: nc,
                beta: 0.0,
            },
            master_seed: seed,
            eval_stride: steps,
            record_iterates: false,
            mass_grad_at_w: false,
        };
        let (_, states) = run_detailed(&cfg, &obj, None).unwrap();
        let expect = oracle(steps);
        assert_eq!(states[0].w, expect, "bit mismatch at {steps} steps");
    }
    pass(6, "single_device_matches_sgd_oracle (6a)");
}

// Criterion 6b: FedMaSS with a zero compensation term reproduces Nesterov
// FedAvg through the three-sequence correspondence.
#[test]
fn acceptance_06b_fedmass_degenerates_to_nesterov() {
    let (alpha, beta) = (0.05, 0.3);
    let nest_sch = Schedule::Fixed {
        alpha,
        beta,
        eta1: 0.0,
        eta2: 0.0,
        gamma: 0.0,
    };
    let mass_sch = Schedule::Fixed {
        alpha: 0.0,
        beta: 0.0,
        eta1: alpha,
        eta2: 0.0,
        gamma: beta,
    };

    let check = |n_devices: usize, e_local: u64, steps: u64| {
        let data = synthetic_logistic(64, 6, 3);
        let part = Arc::new(partition_even(&data, n_devices).unwrap());
        let obj = Objective::new(LossKind::RegLogistic { lambda: 0.01 }, data.clone(), part);
        let mk = |rule: UpdateRule, schedule: Schedule| FederationConfig {
            n_devices,
            k_active: n_devices,
            local_steps: e_local,
            total_steps: steps,
            batch_size: 2,
            rule,
            sampling: Sampling::Full,
            schedule,
            master_seed: 11,
            eval_stride: steps,
            record_iterates: false,
            mass_grad_at_w: false,
        };
        let (_, nest) =
            run_detailed(&mk(UpdateRule::Nesterov, nest_sch.clone()), &obj, None).unwrap();
        let (_, mass) = run_detailed(&mk(UpdateRule::Mass, mass_sch.clone()), &obj, None).unwrap();
        for k in 0..n_devices {
            let du = linalg::max_abs_diff(mass[k].u.as_ref().unwrap(), &nest[k].w);
            let dv = linalg::max_abs_diff(&mass[k].w, nest[k].v_prev.as_ref().unwrap());
            assert!(
                du <= 1e-12,
                "N={n_devices} E={e_local} T={steps} device {k}: u-w diff {du}"
            );
            assert!(
                dv <= 1e-12,
                "N={n_devices} E={e_local} T={steps} device {k}: w-v diff {dv}"
            );
        }
    };

    // single device with live communication rounds, three horizons
    for steps in [100u64, 500, 1000] {
        check(1, 4, steps);
    }
    // multiple heterogeneous devices within one local window
    check(4, 1200, 1000);
    pass(6, "fedmass_degenerates_to_nesterov (6b)");
}

// Criterion 7: both partial-participation aggregates are unbiased for the
// weighted average, at Monte-Carlo resolution.
#[test]
fn acceptance_07_sampling_unbiasedness() {
    let n = 10;
    let dim = 8;
    let k_active = 3;
    let weights: Vec<f64> = {
        let raw: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let tot: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / tot).collect()
    };
    let mut vecs_rng = stream(31, StreamKind::BoundProbe, 0, 0);
    let iterates: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| vecs_rng.random::<f64>() * 4.0 - 2.0)
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = iterates.iter().map(|v| v.as_slice()).collect();
    let v_bar = linalg::weighted_mean(&refs, &weights, dim);

    let draws = 100_000u64;
    for scheme in [Sampling::WithReplacement, Sampling::WithoutReplacement] {
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for trial in 0..draws {
            let mut rng = stream(67, StreamKind::DeviceSampling, 0, trial);
            let picks = sample_devices(scheme, k_active, &weights, &mut rng).unwrap();
            let agg = aggregate(scheme, &picks, &iterates, &weights, k_active).unwrap();
            for j in 0..dim {
                mean[j] += agg[j];
                m2[j] += agg[j] * agg[j];
            }
        }
        for j in 0..dim {
            mean[j] /= draws as f64;
            let var = (m2[j] / draws as f64 - mean[j] * mean[j]).max(0.0);
            let tol = 4.0 * var.sqrt() / (draws as f64).sqrt();
            assert!(
                (mean[j] - v_bar[j]).abs() <= tol,
                "{scheme:?} coord {j}: |{} - {}| > {tol:.2e}",
                mean[j],
                v_bar[j]
            );
        }
    }
    pass(7, "sampling_unbiasedness");
}

// Criterion 8: measured drift stays under 4 E^2 alpha_t^2 G_hat^2 along the
// criterion-2 winning runs.
#[test]
fn acceptance_08_drift_bound() {
    let winners = full_participation_winners();
    let grid = speedup_grid();
    for &(n, cell, _, seed) in winners.iter() {
        let obj = speedup_objective(n);
        let ci = grid
            .iter()
            .position(|&(e, c)| e == cell.eta0 && c == cell.c)
            .unwrap();
        let mut cfg = speedup_base(n, n, 4, Sampling::Full);
        cfg.schedule = Schedule::ExperimentDecay {
            eta0: cell.eta0,
            n_samples: SPEEDUP_N,
            c: cell.c,
            beta: 0.0,
        };
        cfg.master_seed = cell_seed(seed, ci as u64);
        cfg.record_iterates = true;
        let traj = run_with_stop(
            &cfg,
            &obj,
            Some(StopRule {
                f_star: speedup_fstar(),
                epsilon: SPEEDUP_EPS,
            }),
        )
        .unwrap();

        // bound constant from measured iterate probes: start, middle, final
        let mut probes = vec![vec![0.0; SPEEDUP_D]];
        if !traj.iterates.is_empty() {
            probes.push(traj.iterates[traj.iterates.len() / 2].1.clone());
            probes.push(traj.iterates.last().unwrap().1.clone());
        }
        let (g_hat_sq, _) = measure_bounds(&obj, 1000, &probes, 17).unwrap();

        let e = cfg.local_steps as f64;
        for p in &traj.points {
            if p.t == 0 {
                assert_eq!(p.drift, 0.0);
                continue;
            }
            let alpha = experiment_decay(cell.eta0, SPEEDUP_N, cell.c, p.t).unwrap();
            let bound = 4.0 * e * e * alpha * alpha * g_hat_sq;
            assert!(
                p.drift <= bound,
                "N={n} t={}: drift {} > bound {}",
                p.t,
                p.drift,
                bound
            );
        }
        println!(
            "  N={n}: {} recorded points within the drift bound",
            traj.points.len()
        );
    }
    pass(8, "drift_bound");
}

// Criterion 9: condition-number orderings and semidefinite residuals on 100
// random quadratic instances, plus exactness on a single-sample instance.
#[test]
fn acceptance_09_condition_number_properties() {
    // single-sample instance is exactly unit-conditioned
    let one = Arc::new(parse_libsvm("2 1:3 2:4").unwrap());
    let part = Arc::new(partition_even(&one, 1).unwrap());
    let rep = spectral_report(&Objective::new(LossKind::LeastSquares, one, part)).unwrap();
    assert!((rep.kappa1 - 1.0).abs() <= 1e-12, "kappa1 = {}", rep.kappa1);
    assert!(
        (rep.kappa_tilde - 1.0).abs() <= 1e-12,
        "kappa_tilde = {}",
        rep.kappa_tilde
    );

    for trial in 0..100u64 {
        let mut rng = stream(4000 + trial, StreamKind::Features, 9, 0);
        let d = rng.random_range(2..9usize);
        let n = rng.random_range(d..3 * d + 5);
        let spectrum: Vec<f64> = (0..d).map(|_| rng.random_range(0.25..4.0)).collect();
        let ds = Arc::new(gen_gaussian_quadratic(n, d, &spectrum, 8000 + trial).unwrap());
        let devices = rng.random_range(1..=n.min(4));
        let part = Arc::new(partition_even(&ds, devices).unwrap());
        let obj = Objective::new(LossKind::LeastSquares, ds, part);
        let rep = spectral_report(&obj).unwrap();

        assert!(
            rep.kappa_tilde <= rep.kappa1 * (1.0 + 1e-9) + 1e-9,
            "trial {trial}: kappa_tilde {} > kappa1 {}",
            rep.kappa_tilde,
            rep.kappa1
        );
        assert!(
            rep.kappa <= rep.kappa1 * (1.0 + 1e-9) + 1e-9,
            "trial {trial}: kappa {} > kappa1 {}",
            rep.kappa,
            rep.kappa1
        );

        for k in 0..obj.n_devices() {
            let hk = fedsim_core::objectives::local_hessian(&obj, k);
            let a = second_moment_matrix(&obj, k);
            let r = psd_residual_min(rep.l, &a, &hk);
            assert!(r >= -1e-9, "trial {trial} device {k}: l-residual {r}");
        }
        let h = fedsim_core::objectives::global_hessian(&obj);
        let m = statistical_moment_matrix(&obj);
        let r = psd_residual_min(rep.kappa_tilde, &m, &h);
        assert!(r >= -1e-9, "trial {trial}: kappa_tilde residual {r}");
    }
    pass(9, "condition_number_properties");
}

// Criterion 10: the paired-centers dataset pins the averaged iterate at the
// origin exactly, and its drift at the first communication round scales as
// the promised power of T.
#[test]
fn acceptance_10_counterexample_lemma() {
    // exact zero average under deterministic full-batch local GD
    let (ds, part) = gen_counterexample(4, 2, 1.5).unwrap();
    let obj = Objective::new(LossKind::LeastSquares, Arc::new(ds), Arc::new(part));
    let cfg = FederationConfig {
        n_devices: 4,
        k_active: 4,
        local_steps: 5,
        total_steps: 50,
        batch_size: 2,
        rule: UpdateRule::Sgd,
        sampling: Sampling::Full,
        schedule: Schedule::Fixed {
            alpha: 0.02,
            beta: 0.0,
            eta1: 0.0,
            eta2: 0.0,
            gamma: 0.0,
        },
        master_seed: 0,
        eval_stride: 1,
        record_iterates: true,
        mass_grad_at_w: false,
    };
    let traj = run_with_stop(&cfg, &obj, None).unwrap();
    assert_eq!(traj.iterates.len(), 10);
    for (t, w_bar) in &traj.iterates {
        assert!(w_bar.iter().all(|&x| x == 0.0), "t={t}: w_bar = {w_bar:?}");
    }

    // drift at the first communication round times T^(2-2beta) at beta = 1/2
    // stays bounded away from zero
    let mut scaled = Vec::new();
    for &t_total in &[100u64, 400, 1600] {
        let e_local = (t_total as f64).sqrt().ceil() as u64;
        let (ds, part) = gen_counterexample(2, 1, 1.0).unwrap();
        let obj = Objective::new(LossKind::LeastSquares, Arc::new(ds), Arc::new(part));
        let cfg = FederationConfig {
            n_devices: 2,
            k_active: 2,
            local_steps: e_local,
            total_steps: t_total,
            batch_size: 1,
            rule: UpdateRule::Sgd,
            sampling: Sampling::Full,
            schedule: Schedule::Fixed {
                alpha: 1.0 / t_total as f64,
                beta: 0.0,
                eta1: 0.0,
                eta2: 0.0,
                gamma: 0.0,
            },
            master_seed: 0,
            eval_stride: t_total,
            record_iterates: false,
            mass_grad_at_w: false,
        };
        let traj = run_with_stop(&cfg, &obj, None).unwrap();
        let first_comm = traj
            .points
            .iter()
            .find(|p| p.t == e_local)
            .expect("first communication round recorded");
        let value = first_comm.drift * t_total as f64;
        println!("  T={t_total}: drift * T = {value:.3}");
        scaled.push(value);
    }
    assert!(
        scaled.iter().all(|&v| v >= 1.0),
        "scaled drift dipped below 1: {scaled:?}"
    );
    pass(10, "counterexample_lemma");
}

// Criterion 11: analytic gradients agree with central finite differences on
// 100 random (objective, probe) pairs.
#[test]
fn acceptance_11_gradient_correctness() {
    use rand_distr::StandardNormal;

    let kinds = [
        LossKind::RegLogistic { lambda: 0.1 },
        LossKind::Logistic,
        LossKind::LeastSquares,
    ];
    for trial in 0..100u64 {
        let mut rng = stream(6000 + trial, StreamKind::Features, 2, 0);
        let kind = kinds[(trial % 3) as usize];
        let d = rng.random_range(2..7usize);
        let n = rng.random_range(d..2 * d + 6);
        let spectrum: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let ds = Arc::new(gen_gaussian_quadratic(n, d, &spectrum, 9000 + trial).unwrap());
        let devices = rng.random_range(1..=n.min(3));
        let part = Arc::new(partition_even(&ds, devices).unwrap());
        let obj = Objective::new(kind, ds, part);

        let w: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for k in 0..obj.n_devices() {
            let g = obj.grad_full(k, &w).unwrap();
            for i in 0..d {
                let h = 1e-6 * (1.0 + w[i].abs());
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (obj.value_device(k, &wp).unwrap() - obj.value_device(k, &wm).unwrap())
                    / (2.0 * h);
                let denom = g[i].abs().max(fd.abs()).max(1e-7);
                assert!(
                    (g[i] - fd).abs() / denom <= 1e-5,
                    "trial {trial} kind {kind:?} device {k} coord {i}: {} vs {fd}",
                    g[i]
                );
            }
        }
    }
    pass(11, "gradient_correctness");
}
