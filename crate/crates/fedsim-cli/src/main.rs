//! `fedsim` — deterministic federated-optimization experiments from the
//! command line.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fedsim_core::dataio::{
    gen_counterexample, gen_gaussian_quadratic, gen_overparam_regression, parse_libsvm,
};
use fedsim_core::error::Error as CoreError;
use fedsim_core::experiments::{
    load_fstar_cache, solve_fstar, speedup_sweep, svg_loss_curves, write_csv, write_fstar_cache,
    write_svg, SweepPoint, SweepSpec,
};
use fedsim_core::federation::{run_with_stop, Sampling};
use fedsim_core::objectives::spectral_report;
use fedsim_core::schedules::lr_grid;

use config::{build_objective, load_config, load_dataset, resolve_data_path};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated averaging simulator and experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one run and emit the trajectory as CSV.
    Run(RunArgs),
    /// Grid-search learning rates over device counts and emit a sweep report.
    Sweep(SweepArgs),
    /// Solve for the reference optimum F* by full-batch gradient descent.
    Fstar(FstarArgs),
    /// Report curvature constants and condition numbers of the objective.
    Spectral(SpectralArgs),
    /// Generate datasets in libsvm format.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config with dataset, objective, federation and schedule sections.
    #[arg(long)]
    config: PathBuf,
    /// Write the trajectory CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also render the loss curve as an SVG chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON config; requires federation and experiment sections.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for sweep.csv and sweep.svg.
    #[arg(long)]
    out: PathBuf,
    /// Parallel grid cells (output is identical at any parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct FstarArgs {
    #[arg(long)]
    config: PathBuf,
    /// Gradient-norm stopping tolerance (defaults to the config value).
    #[arg(long)]
    tol: Option<f64>,
    /// Write the f* cache JSON here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SpectralArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(subcommand)]
    what: GenCmd,
}

#[derive(Subcommand)]
enum GenCmd {
    /// Interpolating regression labels over existing libsvm features.
    Overparam {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dense Gaussian features with a chosen coordinate spectrum.
    Gaussian {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Comma-separated per-coordinate variances, or one value for all.
        #[arg(long, default_value = "1.0")]
        spectrum: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired-centers dataset on which local updates cancel exactly.
    Counterexample {
        #[arg(long)]
        devices: usize,
        #[arg(long, default_value_t = 1)]
        per_device: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            // divergence is an expected outcome of unstable step sizes;
            // everything else is a usage or configuration problem
            let code = if err
                .downcast_ref::<CoreError>()
                .is_some_and(|e| matches!(e, CoreError::Divergence { .. }))
            {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            };
            eprintln!("error: {err:#}");
            code
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Fstar(args) => cmd_fstar(args),
        Cmd::Spectral(args) => cmd_spectral(args),
        Cmd::GenData(args) => cmd_gen_data(args),
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let fed = cfg
        .federation
        .as_ref()
        .context("run requires a `federation` section")?;
    let schedule = cfg
        .schedule
        .clone()
        .context("run requires a `schedule` section")?;
    let loaded = load_dataset(&cfg.dataset)?;
    let objective = build_objective(&loaded, cfg.objective.loss_kind()?, fed.n_devices)?;

    let mut sim = fed.to_config(schedule, loaded.data.n());
    if let Some(seed) = args.seed {
        sim.master_seed = seed;
    }
    let traj = run_with_stop(&sim, &objective, None)?;
    let csv = traj.to_csv();
    match &args.out {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    if let Some(path) = &args.svg {
        let svg = svg_loss_curves(&[(sim.rule.as_str().to_string(), &traj)])?;
        std::fs::write(path, svg).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let cfg = load_config(&args.config)?;
    let fed = cfg
        .federation
        .as_ref()
        .context("sweep requires a `federation` section")?;
    let exp = cfg
        .experiment
        .as_ref()
        .context("sweep requires an `experiment` section")?;
    let grid_cfg = exp
        .grid
        .as_ref()
        .context("sweep requires `experiment.grid`")?;
    let counts = exp
        .devices
        .clone()
        .context("sweep requires `experiment.devices`")?;
    let kind = cfg.objective.loss_kind()?;
    let loaded = load_dataset(&cfg.dataset)?;

    let f_star = reference_optimum(&cfg, &loaded, kind)?;
    let points: Vec<SweepPoint> = counts
        .iter()
        .map(|&n| {
            let k = if exp.participation >= 1.0 {
                n
            } else {
                ((n as f64 * exp.participation).round() as usize).clamp(1, n)
            };
            SweepPoint {
                n_devices: n,
                k_active: k,
            }
        })
        .collect();
    let sampling = if exp.participation >= 1.0 {
        fed.sampling
    } else {
        Sampling::WithoutReplacement
    };

    let spec = SweepSpec {
        points,
        e_local: fed.local_steps,
        rule: fed.rule,
        sampling,
        epsilon: exp.epsilon,
        grid: lr_grid(&grid_cfg.eta0s, grid_cfg.c0),
        seeds: exp.seeds.clone(),
        t_max: fed.total_steps,
        batch_size: fed.batch_size,
        eval_stride: fed
            .eval_stride
            .unwrap_or(if loaded.data.n() <= 10_000 { 1 } else { 10 }),
        nesterov_beta: exp.nesterov_beta,
    };
    let result = speedup_sweep(&loaded.data, kind, f_star, &spec)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_csv(&result, &args.out.join("sweep.csv"))?;
    match write_svg(&result, &args.out.join("sweep.svg")) {
        Ok(()) => {}
        Err(CoreError::EmptyResult(msg)) => log::warn!("skipping sweep.svg: {msg}"),
        Err(e) => return Err(e.into()),
    }
    for (row, ratio) in result.rows.iter().zip(result.speedup_ratios()) {
        println!(
            "N={} K={}: best eta0={} c={} seed={} iters={} speedup={}",
            row.n_devices,
            row.k_active,
            row.eta0,
            row.c,
            row.seed,
            row.iters.map_or("not_reached".into(), |t| t.to_string()),
            ratio.map_or("-".into(), |r| format!("{r:.2}")),
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// F* for a sweep: an explicit cache file wins, interpolating least squares
/// is exactly zero, everything else is solved numerically.
fn reference_optimum(
    cfg: &config::ConfigFile,
    loaded: &config::LoadedData,
    kind: fedsim_core::LossKind,
) -> anyhow::Result<f64> {
    let exp = cfg.experiment.as_ref().expect("caller checked");
    if let Some(path) = &exp.fstar_path {
        return Ok(load_fstar_cache(std::path::Path::new(path))?.f_star);
    }
    if matches!(kind, fedsim_core::LossKind::LeastSquares) && loaded.data.ground_truth().is_some() {
        return Ok(0.0);
    }
    let objective = build_objective(loaded, kind, 1)?;
    log::info!("solving for F* (tol {})", exp.fstar_tol);
    let sol = solve_fstar(&objective, exp.fstar_tol)?;
    log::info!("F* = {} after {} iterations", sol.f_star, sol.iters);
    Ok(sol.f_star)
}

fn cmd_fstar(args: FstarArgs) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let kind = cfg.objective.loss_kind()?;
    let loaded = load_dataset(&cfg.dataset)?;
    let n_devices = cfg.federation.as_ref().map_or(1, |f| f.n_devices);
    let objective = build_objective(&loaded, kind, n_devices)?;
    let tol = args
        .tol
        .or(cfg.experiment.as_ref().map(|e| e.fstar_tol))
        .unwrap_or(1e-9);
    let sol = solve_fstar(&objective, tol)?;
    let json = serde_json::json!({
        "f_star": sol.f_star,
        "grad_norm": sol.grad_norm,
        "tol": tol,
    });
    println!("{}", serde_json::to_string_pretty(&json)?);
    if let Some(path) = &args.out {
        write_fstar_cache(path, &sol, tol)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_spectral(args: SpectralArgs) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let kind = cfg.objective.loss_kind()?;
    let loaded = load_dataset(&cfg.dataset)?;
    let n_devices = cfg.federation.as_ref().map_or(1, |f| f.n_devices);
    let objective = build_objective(&loaded, kind, n_devices)?;
    let report = spectral_report(&objective)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_data(args: GenDataArgs) -> anyhow::Result<ExitCode> {
    let (dataset, out) = match args.what {
        GenCmd::Overparam {
            features,
            seed,
            out,
        } => {
            let resolved = resolve_data_path(&features.to_string_lossy())?;
            let text = std::fs::read_to_string(&resolved)?;
            let feats = parse_libsvm(&text)?;
            (gen_overparam_regression(&feats, seed)?, out)
        }
        GenCmd::Gaussian {
            n,
            d,
            spectrum,
            seed,
            out,
        } => {
            let values: Vec<f64> = spectrum
                .split(',')
                .map(|s| s.trim().parse::<f64>().context("bad spectrum entry"))
                .collect::<anyhow::Result<_>>()?;
            let spectrum = if values.len() == 1 {
                vec![values[0]; d]
            } else {
                values
            };
            (gen_gaussian_quadratic(n, d, &spectrum, seed)?, out)
        }
        GenCmd::Counterexample {
            devices,
            per_device,
            radius,
            out,
        } => {
            let (ds, _) = gen_counterexample(devices, per_device, radius)?;
            (ds, out)
        }
    };
    std::fs::write(&out, dataset.to_libsvm())
        .with_context(|| format!("cannot write {}", out.display()))?;
    log::info!(
        "wrote {} samples (d={}) to {}",
        dataset.n(),
        dataset.dim(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
