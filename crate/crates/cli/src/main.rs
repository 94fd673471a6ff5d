//! `traj`: simulate heterodyne weak-measurement records, reconstruct
//! trajectories with Bayesian or recurrent filters, and analyze the
//! resulting drift/diffusion statistics.

mod config;
mod plot;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use traj_core::analysis::{self, BinGrid, ValidationSample};
use traj_core::bayes::{BayesCalibration, DistinguishabilityTable, FilterVariant};
use traj_core::io::{self, CsvField, CsvWriter, Manifest, TrajectoryEntry};
use traj_core::lstm::{self, LstmModel};
use traj_core::model::{BlochState, DriveSpec, RegimeKind, Trajectory};
use traj_core::sim::{self, DatasetSpec, JointConfig};

#[derive(Parser)]
#[command(name = "traj", version, about = "Monitored-qubit trajectory pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Memoryless,
    Kernel,
    Boost,
}

impl From<RegimeArg> for RegimeKind {
    fn from(value: RegimeArg) -> Self {
        match value {
            RegimeArg::Memoryless => RegimeKind::Memoryless,
            RegimeArg::Kernel => RegimeKind::MemoryKernel,
            RegimeArg::Boost => RegimeKind::BoostUpdate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Standard,
    Numerics,
    Analytics,
    Lstm,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset (records + optional ground truth).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the master RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the repetitions per (t_m, axis) setting.
        #[arg(long)]
        n: Option<usize>,
        /// Override the generation regime.
        #[arg(long)]
        regime: Option<RegimeArg>,
        /// Simulate the raw digitizer stage: generate at dt/k and
        /// block-average k samples back into each record bin.
        #[arg(long, default_value_t = 1)]
        coarse: usize,
    },
    /// Produce the Bayesian-filter calibration (and optionally the
    /// efficiency calibration) from undriven runs.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        /// Also run the histogram-separation efficiency calibration.
        #[arg(long)]
        efficiency: bool,
    },
    /// Train the recurrent filter on a labeled dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Reconstruct trajectories from records with a chosen filter.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        variant: VariantArg,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Ground-truth sidecar; enables rms.csv.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Distinguishability table for the numerics variant (computed from
        /// the joint master equation when omitted).
        #[arg(long)]
        dtable: Option<PathBuf>,
    },
    /// Binned drift/diffusion analysis of trajectories.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bins per axis.
        #[arg(long)]
        grid: Option<usize>,
        /// Window length in seconds for time-resolved analysis.
        #[arg(long)]
        window: Option<f64>,
        /// Half-width of the origin region used for the tilt estimate.
        #[arg(long, default_value_t = 0.25)]
        tilt_region: f64,
        /// Config for the theory-map overlay.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Tomographic validation of final-step predictions.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Collate per-run outputs in a directory into summary tables and plots.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("TRAJ_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = classify(&err);
            eprintln!(
                "{}",
                serde_json::json!({ "error": format!("{err:#}"), "kind": kind })
            );
            ExitCode::FAILURE
        }
    }
}

/// Wrap a serializable payload with the format version.
fn versioned<T: serde::Serialize>(payload: &T) -> anyhow::Result<serde_json::Value> {
    let mut value = serde_json::to_value(payload)?;
    value
        .as_object_mut()
        .ok_or_else(|| anyhow!("payload must serialize to an object"))?
        .insert("schema_version".into(), serde_json::json!(1));
    Ok(value)
}

fn read_versioned<T: for<'de> serde::Deserialize<'de>>(text: &str) -> anyhow::Result<T> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = value.get("schema_version") {
        if v != 1 {
            bail!("unsupported schema_version {v}");
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn classify(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(io_err) = cause.downcast_ref::<std::io::Error>() {
            if io_err.kind() == std::io::ErrorKind::NotFound {
                return "missing_input";
            }
        }
    }
    let text = format!("{err:#}");
    if text.contains("cannot read") || text.contains("No such file") {
        "missing_input"
    } else if text.contains("schema") || text.contains("parse") || text.contains("kind '") {
        "schema_mismatch"
    } else {
        "runtime"
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            n,
            regime,
            coarse,
        } => simulate(&config, &out, seed, n, regime, coarse),
        Command::Calibrate {
            config,
            out,
            seed,
            n,
            efficiency,
        } => calibrate(&config, &out, seed, n, efficiency),
        Command::Train {
            config,
            input,
            out,
            seed,
        } => train(&config, &input, &out, seed),
        Command::Reconstruct {
            config,
            input,
            out,
            variant,
            calibration,
            model,
            truth,
            dtable,
        } => reconstruct(
            &config,
            &input,
            &out,
            variant,
            calibration.as_deref(),
            model.as_deref(),
            truth.as_deref(),
            dtable.as_deref(),
        ),
        Command::Analyze {
            input,
            out,
            grid,
            window,
            tilt_region,
            config,
        } => analyze(&input, &out, grid, window, tilt_region, config.as_deref()),
        Command::Validate {
            input,
            records,
            out,
            bins,
        } => validate(&input, &records, &out, bins),
        Command::Report { dir } => report::report(&dir),
    }
}

fn simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    regime: Option<RegimeArg>,
    coarse: usize,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.regime.rng_seed = seed;
    }
    if let Some(n) = n {
        cfg.regime.n_traj = n;
    }
    if let Some(r) = regime {
        cfg.regime.kind = r.into();
    }
    if coarse == 0 {
        bail!("--coarse must be >= 1");
    }
    std::fs::create_dir_all(out)?;
    // the raw-digitizer stage on demand: acquire at dt/coarse, then
    // block-average back to the configured record step
    let mut params = cfg.params.clone();
    params.dt /= coarse as f64;
    let spec = DatasetSpec {
        params,
        regime: cfg.regime,
        t_m_grid: cfg.t_m_grid.clone(),
        axes: cfg.axes.clone(),
        init_state: cfg.init_state,
        options: cfg.options,
        retain_truth: cfg.retain_truth,
    };
    let mut dataset = sim::generate_dataset(&spec)?;
    if coarse > 1 {
        for rec in &mut dataset.records {
            let (coarsened, dropped) = io::coarse_grain(rec, coarse)?;
            if dropped > 0 {
                eprintln!("warning: record {}: dropped {dropped} trailing raw samples", rec.id);
            }
            *rec = coarsened;
        }
        if let Some(truths) = &mut dataset.truths {
            for t in truths.iter_mut() {
                t.states = t.states.iter().step_by(coarse).copied().collect();
                t.dt *= coarse as f64;
            }
        }
    }
    io::write_records(&out.join("records.jsonl"), &dataset.records)?;
    if let Some(truths) = &dataset.truths {
        let ids: Vec<u64> = dataset.records.iter().map(|r| r.id).collect();
        io::write_truths(&out.join("truth.jsonl"), &ids, truths)?;
    }
    let manifest = Manifest::new(
        &cfg.params,
        &cfg.regime,
        dataset.records.len(),
        cfg.canonical_hash()?,
    );
    io::write_manifest(&out.join("manifest.json"), &manifest)?;
    println!(
        "simulate: {} records ({:?}) -> {}",
        dataset.records.len(),
        cfg.regime.kind,
        out.display()
    );
    Ok(())
}

fn calibrate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    n: Option<usize>,
    efficiency: bool,
) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    std::fs::create_dir_all(out)?;
    let mut params = cfg.params.clone();
    params.omega_rabi = DriveSpec::constant(0.0);
    let n = n.unwrap_or(1000);
    let seed = seed.unwrap_or(cfg.regime.rng_seed);
    let t_m = cfg
        .t_m_grid
        .last()
        .copied()
        .ok_or_else(|| anyhow!("config has an empty t_m grid"))?;

    // pole-conditioned record levels
    let mut records = Vec::new();
    for (idx, init) in [BlochState::plus_z(), BlochState::minus_z()].iter().enumerate() {
        let spec = DatasetSpec {
            params: params.clone(),
            regime: sim::SimRegime::new(cfg.regime.kind, seed.wrapping_add(idx as u64 + 1), n),
            t_m_grid: vec![t_m],
            axes: vec![traj_core::model::TomoAxis::Z],
            init_state: *init,
            options: cfg.options,
            retain_truth: false,
        };
        records.extend(sim::generate_dataset(&spec)?.records);
    }
    let calib = BayesCalibration::from_undriven_records(&records)?;
    std::fs::write(
        out.join("calibration.json"),
        serde_json::to_string_pretty(&versioned(&calib)?)?,
    )?;
    println!(
        "calibrate: i0 = {:.4}, i1 = {:.4}, sigma2 = {:.4} -> {}",
        calib.i0,
        calib.i1,
        calib.sigma2,
        out.display()
    );

    if efficiency {
        let tau_m_pred = params.tau_record();
        let gamma_d = params.gamma_d();
        let mut grid: Vec<f64> = (1..=7)
            .map(|k| k as f64 * 0.06 * tau_m_pred)
            .chain((1..=4).map(|k| k as f64 * 0.35 / gamma_d))
            .map(|t| (t / params.dt).round().max(3.0) * params.dt)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let spec = DatasetSpec {
            params: params.clone(),
            regime: sim::SimRegime::new(RegimeKind::Memoryless, seed.wrapping_add(9), n.max(4000)),
            t_m_grid: grid,
            axes: vec![traj_core::model::TomoAxis::Y, traj_core::model::TomoAxis::Z],
            init_state: BlochState::plus_y(),
            options: sim::TrajOptions {
                substeps: 4,
                boost_tilt: false,
            },
            retain_truth: false,
        };
        let dataset = sim::generate_dataset(&spec)?;
        let fit = analysis::efficiency_calibration(&dataset.records)?;
        std::fs::write(
            out.join("efficiency.json"),
            serde_json::to_string_pretty(&versioned(&fit)?)?,
        )?;
        let mut csv = CsvWriter::create(&out.join("s_curve.csv"), &["t_m", "s"])?;
        for (t, s) in &fit.s_points {
            csv.row(&[CsvField::Float(*t), CsvField::Float(*s)])?;
        }
        csv.finish()?;
        plot::line_chart(
            &out.join("s_curve.svg"),
            "Conditioned histogram separation",
            "T_m (s)",
            "S = (dV/sigma)^2",
            &[("S(T_m)", fit.s_points.clone())],
        )?;
        println!(
            "calibrate --efficiency: tau_m = {:.3e} s, gamma_d = {:.4e}, eta = {:.4}",
            fit.tau_m, fit.gamma_d, fit.eta
        );
    }
    Ok(())
}

fn train(config: &Path, input: &Path, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let cfg = RunConfig::load(config)?;
    let records = io::read_records(input)
        .with_context(|| format!("cannot read records from {}", input.display()))?;
    std::fs::create_dir_all(out)?;
    let seed = seed.unwrap_or(cfg.regime.rng_seed);
    let (model, curves) = lstm::train(&records, &cfg.network, &cfg.training, seed)?;
    std::fs::write(out.join("model.json"), model.to_json()?)?;
    let mut csv = CsvWriter::create(
        &out.join("training_log.csv"),
        &[
            "epoch",
            "lr",
            "train_total",
            "train_ce",
            "train_init",
            "train_purity",
            "val_total",
            "val_ce",
            "val_init",
            "val_purity",
        ],
    )?;
    for c in &curves {
        csv.row(&[
            CsvField::Int(c.epoch as i64),
            CsvField::Float(c.lr),
            CsvField::Float(c.train.total),
            CsvField::Float(c.train.l_ce),
            CsvField::Float(c.train.l_init),
            CsvField::Float(c.train.l_purity),
            CsvField::Float(c.val.total),
            CsvField::Float(c.val.l_ce),
            CsvField::Float(c.val.l_init),
            CsvField::Float(c.val.l_purity),
        ])?;
    }
    csv.finish()?;
    let last = curves.last().map(|c| c.val.total).unwrap_or(f64::NAN);
    println!(
        "train: {} epochs, final val loss {:.4} -> {}",
        curves.len(),
        last,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn reconstruct(
    config: &Path,
    input: &Path,
    out: &Path,
    variant: VariantArg,
    calibration: Option<&Path>,
    model: Option<&Path>,
    truth: Option<&Path>,
    dtable: Option<&Path>,
) -> anyhow::Result<()> {
    use rayon::prelude::*;
    let cfg = RunConfig::load(config)?;
    let records = io::read_records(input)
        .with_context(|| format!("cannot read records from {}", input.display()))?;
    if records.is_empty() {
        bail!("no records in {}", input.display());
    }
    std::fs::create_dir_all(out)?;

    let load_calib = |path: Option<&Path>| -> anyhow::Result<BayesCalibration> {
        let path = path.ok_or_else(|| {
            anyhow!("this variant needs --calibration (run `traj calibrate` first)")
        })?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read calibration {}", path.display()))?;
        read_versioned(&text)
    };

    let (label, trajectories): (&str, Vec<(u64, Trajectory)>) = match variant {
        VariantArg::Lstm => {
            let path = model
                .ok_or_else(|| anyhow!("--variant lstm needs --model (run `traj train` first)"))?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read model {}", path.display()))?;
            let model = LstmModel::from_json(&text)?;
            ("lstm", lstm::predict_dataset(&records, &model)?)
        }
        _ => {
            let calib = load_calib(calibration)?;
            let filter = match variant {
                VariantArg::Standard => FilterVariant::Standard,
                VariantArg::Analytics => FilterVariant::Analytics,
                VariantArg::Numerics => {
                    let table = match dtable {
                        Some(path) => {
                            let text = std::fs::read_to_string(path).with_context(|| {
                                format!("cannot read distinguishability table {}", path.display())
                            })?;
                            read_versioned::<DistinguishabilityTable>(&text)?
                        }
                        None => {
                            let mut omegas: Vec<f64> = records
                                .iter()
                                .map(|r| r.drive_meta.constant_part().abs())
                                .collect();
                            omegas.sort_by(f64::total_cmp);
                            omegas.dedup_by(|a, b| (*a - *b).abs() < 1.0);
                            let joint = JointConfig::new(12, 16.0 / cfg.params.kappa, BlochState::plus_z());
                            let table =
                                sim::distinguishability_table(&cfg.params, &omegas, &joint)?;
                            std::fs::write(
                                out.join("dtable.json"),
                                serde_json::to_string_pretty(&versioned(&table)?)?,
                            )?;
                            table
                        }
                    };
                    FilterVariant::Numerics(table)
                }
                VariantArg::Lstm => unreachable!(),
            };
            let name = match variant {
                VariantArg::Standard => "standard",
                VariantArg::Numerics => "numerics",
                VariantArg::Analytics => "analytics",
                VariantArg::Lstm => unreachable!(),
            };
            let result: Result<Vec<(u64, Trajectory)>, traj_core::TrajError> = records
                .par_iter()
                .map(|rec| Ok((rec.id, traj_core::bayes::run_filter(rec, &cfg.params, &calib, &filter)?)))
                .collect();
            (name, result?)
        }
    };

    let entries: Vec<TrajectoryEntry> = trajectories
        .iter()
        .map(|(id, traj)| TrajectoryEntry::new(*id, label, traj))
        .collect();
    io::write_trajectories(&out.join("trajectories.jsonl"), &entries)?;

    if let Some(truth_path) = truth {
        let truths = io::read_truths(truth_path)
            .with_context(|| format!("cannot read sidecar {}", truth_path.display()))?;
        let by_id: std::collections::HashMap<u64, Trajectory> = truths
            .iter()
            .map(|t| (t.id, t.to_trajectory()))
            .collect();
        let mut csv = CsvWriter::create(
            &out.join("rms.csv"),
            &["id", "variant", "rms_x", "rms_y", "rms_z"],
        )?;
        let mut mean = [0.0f64; 3];
        let mut count = 0usize;
        for (id, traj) in &trajectories {
            let Some(truth) = by_id.get(id) else {
                bail!("sidecar is missing trajectory id {id}");
            };
            let rms = analysis::rms_vs_truth(traj, truth)?;
            csv.row(&[
                CsvField::Int(*id as i64),
                CsvField::Str(label.into()),
                CsvField::Float(rms[0]),
                CsvField::Float(rms[1]),
                CsvField::Float(rms[2]),
            ])?;
            for i in 0..3 {
                mean[i] += rms[i];
            }
            count += 1;
        }
        csv.finish()?;
        for m in &mut mean {
            *m /= count.max(1) as f64;
        }
        println!(
            "reconstruct [{label}]: {} trajectories, mean rms = ({:.4}, {:.4}, {:.4})",
            count, mean[0], mean[1], mean[2]
        );
    } else {
        println!(
            "reconstruct [{label}]: {} trajectories -> {}",
            trajectories.len(),
            out.display()
        );
    }
    Ok(())
}

fn read_any_trajectories(path: &Path) -> anyhow::Result<Vec<(u64, Trajectory)>> {
    if let Ok(entries) = io::read_trajectories(path) {
        return Ok(entries.iter().map(|e| (e.id, e.to_trajectory())).collect());
    }
    let truths = io::read_truths(path)
        .with_context(|| format!("{} holds neither trajectories nor truth", path.display()))?;
    Ok(truths.iter().map(|t| (t.id, t.to_trajectory())).collect())
}

fn analyze(
    input: &Path,
    out: &Path,
    grid_n: Option<usize>,
    window: Option<f64>,
    tilt_region: f64,
    config: Option<&Path>,
) -> anyhow::Result<()> {
    let trajs: Vec<Trajectory> = read_any_trajectories(input)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    if trajs.is_empty() {
        bail!("no trajectories in {}", input.display());
    }
    std::fs::create_dir_all(out)?;
    let cfg = config.map(RunConfig::load).transpose()?;
    let grid_cfg = cfg.as_ref().map(|c| c.grid).unwrap_or_else(|| config::GridConfig {
        plane: traj_core::analysis::Plane::Yz,
        n_bins: 20,
        min_samples: 50,
    });
    let grid = BinGrid::new(
        grid_cfg.plane,
        grid_n.unwrap_or(grid_cfg.n_bins),
        grid_cfg.min_samples,
    )?;

    let bins = analysis::bin_increments(&trajs, &grid)?;
    let mut csv = CsvWriter::create(
        &out.join("bins.csv"),
        &[
            "u", "v", "count", "drift_u", "drift_v", "cov_uu", "cov_uv", "cov_vv", "v_u", "v_v",
        ],
    )?;
    for b in &bins {
        csv.row(&[
            CsvField::Float(b.center.0),
            CsvField::Float(b.center.1),
            CsvField::Int(b.count as i64),
            CsvField::Float(b.mean_drift.0),
            CsvField::Float(b.mean_drift.1),
            CsvField::Float(b.cov[0][0]),
            CsvField::Float(b.cov[0][1]),
            CsvField::Float(b.cov[1][1]),
            CsvField::Float(b.v.0),
            CsvField::Float(b.v.1),
        ])?;
    }
    csv.finish()?;

    let dt = trajs[0].dt;
    let drift = analysis::fit_drift(&bins, dt)?;
    let mut csv = CsvWriter::create(
        &out.join("drift_fit.csv"),
        &["omega", "omega_err", "gamma_d", "gamma_d_err", "n_bins"],
    )?;
    csv.row(&[
        CsvField::Float(drift.omega),
        CsvField::Float(drift.omega_err),
        CsvField::Float(drift.gamma_d),
        CsvField::Float(drift.gamma_d_err),
        CsvField::Int(bins.len() as i64),
    ])?;
    csv.finish()?;

    // without origin-region coverage the tilt is unavailable; fall back to
    // an untilted diffusion fit
    let (theta, theta_err) = analysis::extract_tilt(&bins, tilt_region).unwrap_or((0.0, f64::NAN));
    let diffusion = analysis::fit_diffusion(&bins, theta, dt)?;
    let mut csv = CsvWriter::create(
        &out.join("diffusion_fit.csv"),
        &["theta", "theta_err", "rate", "rate_err"],
    )?;
    csv.row(&[
        CsvField::Float(theta),
        CsvField::Float(theta_err),
        CsvField::Float(diffusion.rate),
        CsvField::Float(diffusion.rate_err),
    ])?;
    csv.finish()?;

    if let Some(window) = window.filter(|w| *w > 0.0) {
        let points = analysis::windowed_analysis(&trajs, &grid, window)?;
        let mut csv = CsvWriter::create(
            &out.join("windowed.csv"),
            &["t", "omega", "omega_err", "rate", "rate_err", "theta", "n_bins", "ok"],
        )?;
        for p in &points {
            csv.row(&[
                CsvField::Float(p.t_center),
                CsvField::Float(p.omega),
                CsvField::Float(p.omega_err),
                CsvField::Float(p.rate),
                CsvField::Float(p.rate_err),
                CsvField::Float(p.theta),
                CsvField::Int(p.n_bins as i64),
                CsvField::Int(i64::from(p.ok)),
            ])?;
        }
        csv.finish()?;
        let usable: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.ok)
            .map(|p| (p.t_center, p.omega))
            .collect();
        let rates: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.ok)
            .map(|p| (p.t_center, p.rate))
            .collect();
        plot::line_chart(
            &out.join("windowed.svg"),
            "Windowed drift/diffusion extraction",
            "t (s)",
            "rate (rad/s)",
            &[("omega(t)", usable), ("2 eta Gamma_m(t)", rates)],
        )?;
    }

    // quiver of empirical diffusion vectors, with the theory field overlay
    let arrows: Vec<(f64, f64, f64, f64)> = bins
        .iter()
        .map(|b| (b.center.0, b.center.1, b.v.0, b.v.1))
        .collect();
    let overlay: Vec<(f64, f64, f64, f64)> = match &cfg {
        Some(c) => analysis::backaction_theory_maps(grid_cfg.plane, &c.params, grid.n_bins)
            .iter()
            .map(|q| (q.center.0, q.center.1, q.std_vec.0, q.std_vec.1))
            .collect(),
        None => Vec::new(),
    };
    let scale = 0.08
        / arrows
            .iter()
            .map(|a| (a.2 * a.2 + a.3 * a.3).sqrt())
            .fold(1e-12, f64::max);
    plot::quiver(
        &out.join("quiver.svg"),
        "Diffusion eigenvectors",
        &arrows,
        &overlay,
        scale,
    )?;

    let radii: Vec<f64> = trajs
        .iter()
        .flat_map(|t| t.states.iter().map(|s| s.purity().sqrt()))
        .collect();
    plot::histogram(
        &out.join("hist.svg"),
        "Bloch radius distribution",
        "|r|",
        &radii,
        60,
    )?;

    println!(
        "analyze: {} bins; omega/2pi = {:.4} MHz, gamma_d/2pi = {:.4} MHz, theta = {:.2} deg, \
         rate/2pi = {:.4} MHz -> {}",
        bins.len(),
        drift.omega / (2.0 * std::f64::consts::PI * 1e6),
        drift.gamma_d / (2.0 * std::f64::consts::PI * 1e6),
        theta.to_degrees(),
        diffusion.rate / (2.0 * std::f64::consts::PI * 1e6),
        out.display()
    );
    Ok(())
}

fn validate(input: &Path, records_path: &Path, out: &Path, bins: usize) -> anyhow::Result<()> {
    let trajs = read_any_trajectories(input)?;
    let records = io::read_records(records_path)?;
    std::fs::create_dir_all(out)?;
    let by_id: std::collections::HashMap<u64, &Trajectory> =
        trajs.iter().map(|(id, t)| (*id, t)).collect();
    let mut samples = Vec::new();
    for rec in &records {
        let (Some(axis), Some(outcome)) = (rec.tomo_axis, rec.tomo_outcome) else {
            continue;
        };
        let Some(traj) = by_id.get(&rec.id) else {
            continue;
        };
        let idx = rec.n_m().min(traj.states.len() - 1);
        samples.push(ValidationSample {
            prediction: traj.states[idx].component(axis),
            axis,
            outcome,
        });
    }
    if samples.is_empty() {
        bail!("no labeled records match the trajectories");
    }
    let report = analysis::validate(&samples, bins)?;
    let mut csv = CsvWriter::create(
        &out.join("validation.csv"),
        &["axis", "prediction", "tomography", "count", "bernoulli_sigma"],
    )?;
    let mut series = Vec::new();
    for axis in &report.per_axis {
        let name = format!("{:?} (eps = {:.4})", axis.axis, axis.epsilon);
        let pts: Vec<(f64, f64)> = axis
            .bins
            .iter()
            .map(|b| (b.prediction, b.tomography))
            .collect();
        series.push((name, pts));
        for b in &axis.bins {
            csv.row(&[
                CsvField::Str(format!("{:?}", axis.axis).to_lowercase()),
                CsvField::Float(b.prediction),
                CsvField::Float(b.tomography),
                CsvField::Int(b.count as i64),
                CsvField::Float(b.bernoulli_sigma),
            ])?;
        }
    }
    csv.finish()?;
    let mut chart: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(n, p)| (n.as_str(), p.clone()))
        .collect();
    let diagonal = vec![(-1.0, -1.0), (1.0, 1.0)];
    chart.push(("ideal", diagonal));
    plot::line_chart(
        &out.join("validation.svg"),
        "Tomographic validation",
        "prediction",
        "averaged tomography",
        &chart,
    )?;
    for axis in &report.per_axis {
        println!(
            "validate: eps_{:?} = {:.4} over {} bins",
            axis.axis,
            axis.epsilon,
            axis.bins.len()
        );
    }
    Ok(())
}
