//! `magctl`: fit field models, validate them, and run closed-loop experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};
use magctl_core::field::FieldModel;
use magctl_core::field_oracle::{sample_grid, CoilSpec, Conductor, FieldSampleGrid, GridGeometry, SizeClass};
use magctl_core::harness::{
    read_results, report, run_experiment, sweep, write_results, write_run_outputs, ExperimentConfig, FieldSetup,
    SweepAxis, SweepSpec,
};
use magctl_core::math::{Mat2, Vec2};
use magctl_core::zernike::{FitOptions, FitReport, ZernikeFieldModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "magctl",
    version,
    about = "Zernike field models and NMPC experiments for planar magnetic robots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// First seed; a config's seed list becomes `seed, seed+1, ...` with the same length.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for runs and sweeps (all cores by default).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-coil Zernike models to field grids and write the model and fit report.
    FitField {
        /// Grid files (JSON). Without any, the built-in coil array is sampled.
        grids: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        order_small: u32,
        #[arg(long, default_value_t = 3)]
        order_large: u32,
        /// Divergence penalty weight; 0 is plain least squares.
        #[arg(long, default_value_t = 0.0)]
        lambda_div: f64,
        /// Also write the sampled grids of the built-in array to `<out-dir>/grids`.
        #[arg(long)]
        write_grids: bool,
    },
    /// Check a model's analytic gradients, divergence and accuracy at random points.
    ValidateField {
        /// Model file from `fit-field`; the built-in fit is used when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Run one experiment configuration for each of its seeds.
    Run {
        /// Experiment config (JSON); every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the fitted Zernike model with this model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sweep feedback rate or noise for several controllers.
    Sweep {
        /// `rate`, `noise` or `rate_at_fixed_noise`.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated controller names; all six by default.
        #[arg(long, value_delimiter = ',')]
        controllers: Option<Vec<String>>,
        /// Noise level for `rate_at_fixed_noise` (mm).
        #[arg(long, default_value_t = 2.0)]
        fixed_sigma: f64,
        /// Base experiment config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the fitted Zernike model with this model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Summarize a sweep results table into summary and figure files.
    Report {
        /// `sweep_results.csv` written by `sweep`.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns `Ok(false)` when the command finished but found faults or failed checks.
fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::FitField {
            grids,
            order_small,
            order_large,
            lambda_div,
            write_grids,
        } => fit_field(cli, grids, *order_small, *order_large, *lambda_div, *write_grids),
        Command::ValidateField { model, points } => validate_field(cli, model.as_deref(), *points),
        Command::Run { config, model } => run(cli, config.as_deref(), model.as_deref()),
        Command::Sweep {
            axis,
            values,
            controllers,
            fixed_sigma,
            config,
            model,
        } => {
            let mut spec = SweepSpec::new(SweepAxis::from_name(axis)?, load_config(cli, config.as_deref())?);
            if let Some(v) = values {
                spec.values = v.clone();
            }
            if let Some(c) = controllers {
                spec.controllers = c.clone();
            }
            spec.fixed_sigma = *fixed_sigma;
            run_sweep(cli, &spec, model.as_deref())
        }
        Command::Report { input } => {
            let rows = read_results(input).with_context(|| format!("reading {}", input.display()))?;
            let summary = report(&rows, &cli.out_dir)?;
            info!("{} conditions written to {}", summary.len(), cli.out_dir.display());
            Ok(true)
        }
    }
}

fn load_config(cli: &Cli, path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::read_json(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        let n = cfg.seeds.len().max(1) as u64;
        cfg.seeds = (s..s + n).collect();
    }
    cfg.out_dir = Some(cli.out_dir.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn load_setup(model: Option<&Path>) -> Result<FieldSetup> {
    let mut setup = FieldSetup::build(&CoilSpec::default_set())?;
    if let Some(p) = model {
        let m = ZernikeFieldModel::read_json(p).with_context(|| format!("reading model {}", p.display()))?;
        ensure!(
            m.coil_count() == setup.coils.len(),
            "model has {} coils, the array has {}",
            m.coil_count(),
            setup.coils.len()
        );
        setup.zernike = Arc::new(m);
    }
    Ok(setup)
}

#[derive(Serialize)]
struct FitRow {
    coil: String,
    order: u32,
    samples: usize,
    mae: f64,
    r_squared_bx: f64,
    r_squared_by: f64,
    max_abs_error: f64,
    peak_field: f64,
    divergence_rms_ratio: f64,
    condition: f64,
}

impl FitRow {
    fn new(coil: String, r: &FitReport) -> Self {
        Self {
            coil,
            order: r.order,
            samples: r.samples,
            mae: r.mae,
            r_squared_bx: r.r_squared[0],
            r_squared_by: r.r_squared[1],
            max_abs_error: r.max_abs_error,
            peak_field: r.peak_field,
            divergence_rms_ratio: r.divergence_rms_ratio,
            condition: r.condition,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fit_field(cli: &Cli, paths: &[PathBuf], small: u32, large: u32, lambda_div: f64, write_grids: bool) -> Result<bool> {
    fs::create_dir_all(&cli.out_dir)?;
    let grids: Vec<FieldSampleGrid> = if paths.is_empty() {
        let geometry = GridGeometry::workspace(2.0)?;
        let grids = CoilSpec::default_set()
            .iter()
            .map(|c| sample_grid(c, geometry))
            .collect::<magctl_core::Result<Vec<_>>>()?;
        if write_grids {
            let dir = cli.out_dir.join("grids");
            fs::create_dir_all(&dir)?;
            for g in &grids {
                let name = g.coil.map(|c| c.label()).unwrap_or_else(|| "grid".into());
                g.write_json(dir.join(format!("{name}.json")))?;
            }
        }
        grids
    } else {
        if write_grids {
            warn!("--write-grids only applies to the built-in array");
        }
        paths
            .iter()
            .map(|p| FieldSampleGrid::read_json(p).with_context(|| format!("reading grid {}", p.display())))
            .collect::<Result<Vec<_>>>()?
    };
    let options = FitOptions {
        lambda_div,
        ..FitOptions::default()
    };
    let order_for = |c: SizeClass| if c == SizeClass::Large { large } else { small };
    let (model, reports) = ZernikeFieldModel::fit_grids(&grids, order_for, &options)?;
    let model_path = cli.out_dir.join("model.json");
    model.write_json(&model_path)?;
    let rows: Vec<FitRow> = grids
        .iter()
        .zip(&reports)
        .enumerate()
        .map(|(i, (g, r))| FitRow::new(g.coil.map(|c| c.label()).unwrap_or_else(|| format!("grid{i}")), r))
        .collect();
    write_csv(&cli.out_dir.join("fit_report.csv"), &rows)?;
    for r in &rows {
        info!(
            "{}: order {} R2 {:.5}/{:.5} MAE {:.3e} T/A",
            r.coil, r.order, r.r_squared_bx, r.r_squared_by, r.mae
        );
    }
    info!("model written to {}", model_path.display());
    Ok(true)
}

#[derive(Serialize)]
struct CheckRow {
    check: &'static str,
    value: f64,
    limit: f64,
    pass: bool,
}

fn validate_field(cli: &Cli, model: Option<&Path>, points: usize) -> Result<bool> {
    ensure!(points > 0, "need at least one point");
    fs::create_dir_all(&cli.out_dir)?;
    let setup = load_setup(model)?;
    let m = setup.zernike.as_ref();
    let conductors = setup
        .coils
        .iter()
        .map(Conductor::new)
        .collect::<magctl_core::Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let (mut worst_grad, mut div2, mut grad2, mut err2, mut ref2): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    let h = 1e-3;
    for _ in 0..points {
        let p = Vec2::new(rng.random_range(-48.0..48.0), rng.random_range(-48.0..48.0));
        let i: Vec<f64> = (0..m.coil_count()).map(|_| rng.random_range(-30.0..30.0)).collect();
        let g = m.eval_gradient(p, &i)?;
        let mut fd = Mat2::zeros();
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = h;
            fd.set_column(
                k,
                &((m.eval_field(p + e, &i)? - m.eval_field(p - e, &i)?) / (2.0 * h * 1e-3)),
            );
        }
        worst_grad = worst_grad.max((g - fd).norm() / g.norm().max(f64::MIN_POSITIVE));
        div2 += g.trace().powi(2);
        grad2 += g.norm_squared();
        let mut truth = Vec2::zeros();
        for (c, a) in conductors.iter().zip(&i) {
            truth += c.field(p)? * *a;
        }
        err2 += (m.eval_field(p, &i)? - truth).norm_squared();
        ref2 += truth.norm_squared();
    }
    let checks = [
        CheckRow {
            check: "gradient_vs_finite_difference",
            value: worst_grad,
            limit: 1e-6,
            pass: worst_grad <= 1e-6,
        },
        {
            let v = (div2 / grad2).sqrt();
            CheckRow {
                check: "divergence_over_gradient_rms",
                value: v,
                limit: 0.05,
                pass: v <= 0.05,
            }
        },
        {
            let v = (err2 / ref2).sqrt();
            CheckRow {
                check: "field_error_over_field_rms",
                value: v,
                limit: 0.1,
                pass: v <= 0.1,
            }
        },
    ];
    write_csv(&cli.out_dir.join("validation.csv"), &checks)?;
    for c in &checks {
        info!(
            "{}: {:.3e} (limit {:.1e}) {}",
            c.check,
            c.value,
            c.limit,
            if c.pass { "ok" } else { "FAILED" }
        );
    }
    Ok(checks.iter().all(|c| c.pass))
}

fn run(cli: &Cli, config: Option<&Path>, model: Option<&Path>) -> Result<bool> {
    let cfg = load_config(cli, config)?;
    let setup = load_setup(model)?;
    let pool = rayon_pool(cli.workers)?;
    let runs = pool.install(|| run_experiment(&cfg, &setup))?;
    write_run_outputs(&cli.out_dir, &cfg, &runs)?;
    let mut clean = true;
    for r in &runs {
        info!(
            "{} seed {}: RMS {:.3} mm, {:.2} deg",
            r.controller, r.seed, r.metrics.rms_position, r.metrics.rms_orientation
        );
        if let Some(f) = &r.fault {
            warn!("{} seed {} faulted: {f}", r.controller, r.seed);
            clean = false;
        }
    }
    Ok(clean)
}

fn rayon_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()?)
}

fn run_sweep(cli: &Cli, spec: &SweepSpec, model: Option<&Path>) -> Result<bool> {
    let setup = load_setup(model)?;
    fs::create_dir_all(&cli.out_dir)?;
    let rows = sweep(spec, &setup, cli.workers)?;
    if rows.is_empty() {
        bail!("sweep produced no rows");
    }
    write_results(&cli.out_dir.join("sweep_results.csv"), &rows)?;
    report(&rows, &cli.out_dir)?;
    let faults = rows.iter().filter(|r| r.fault).count();
    if faults > 0 {
        warn!("{faults} of {} runs faulted", rows.len());
    }
    info!("{} runs written to {}", rows.len(), cli.out_dir.display());
    Ok(faults == 0)
}
