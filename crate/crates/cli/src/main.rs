//! `groundslam`: run the keyframe pipeline on a replay dataset,
//! synthesize datasets, and evaluate trajectories.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use groundslam_core::dataset::{export_simulation, read_points_file, Dataset};
use groundslam_core::eval::{ate_rmse, read_kitti_poses};
use groundslam_core::geometry::CameraIntrinsics;
use groundslam_core::ground_plane::{fit_plane_ransac, RansacConfig};
use groundslam_core::pipeline::{run, ExecMode, PipelineConfig, RunOptions};
use groundslam_core::refine::adaptive_threshold;
use groundslam_core::sim::{generate_world, DriftModel, SimConfig};

#[derive(Parser)]
#[command(name = "groundslam", version, about = "Keyframe-parallel monocular SLAM with ground-plane scale correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a replay dataset and write the report set.
    Run(RunArgs),
    /// Generate a synthetic world and export it as a replay dataset.
    Simulate(SimulateArgs),
    /// Print the ATE in meters between two KITTI-format pose files.
    Evaluate(EvaluateArgs),
    /// Print the adaptive low-parallax threshold over a baseline range.
    ThresholdTable(ThresholdArgs),
    /// Fit a ground plane to a point file with RANSAC.
    PlaneFit(PlaneFitArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Pipeline config; defaults to `<dataset>/config.ini`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Execute mapping/segmentation tasks on real threads and log
    /// measured durations (scheduling still follows the virtual clock).
    #[arg(long)]
    wallclock: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-frame log-scale drift noise injected into the replay poses.
    #[arg(long, default_value_t = 0.0)]
    drift_sigma: f64,
    /// Override the simulator and config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    /// Camera intrinsics as `f,px,py` (pixels).
    #[arg(long)]
    intrinsics: String,
    /// Low-parallax feature determination distance in meters.
    #[arg(long)]
    d: f64,
    /// Baseline range as `start:end:step` in meters.
    #[arg(long)]
    l_range: String,
}

#[derive(Args)]
struct PlaneFitArgs {
    /// Text file with one `x y z` point per line.
    #[arg(long)]
    points: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum AppError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Internal(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> AppError {
    AppError::Data(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::ThresholdTable(args) => cmd_threshold_table(args),
        Command::PlaneFit(args) => cmd_plane_fit(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let dataset = Dataset::open(&args.dataset).map_err(data_err)?;
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(data_err)?,
        None => dataset.config.clone().ok_or_else(|| {
            AppError::Data("no --config given and the dataset has no config.ini".to_string())
        })?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let options = RunOptions {
        mode: if args.wallclock {
            ExecMode::Wallclock
        } else {
            ExecMode::Virtual
        },
        displacements: dataset.displacements.clone(),
    };
    let report = run(&config, dataset.source(), options)
        .map_err(|e| AppError::Data(e.to_string()))?;
    groundslam_core::pipeline::write_reports(&report, &args.out)
        .map_err(|e| AppError::Internal(e.to_string()))?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "frames {} keyframes {} corrections {} points {}{}",
        report.counters.frames_total,
        report.counters.keyframes,
        report.counters.corrections_applied,
        report.map.points.len(),
        report
            .ate()
            .map(|a| format!(" ate {a:.6}"))
            .unwrap_or_default()
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), AppError> {
    let text = std::fs::read_to_string(&args.config).map_err(data_err)?;
    let mut sim_config = SimConfig::from_ini_str(&text).map_err(data_err)?;
    let mut pipeline_config = PipelineConfig::from_ini_str(&text).map_err(data_err)?;
    if let Some(seed) = args.seed {
        sim_config.seed = seed;
        pipeline_config.seed = seed;
    }
    if args.drift_sigma < 0.0 {
        return Err(AppError::Usage("--drift-sigma must be >= 0".to_string()));
    }
    let world = generate_world(&sim_config, sim_config.seed).map_err(data_err)?;
    let drift = (args.drift_sigma > 0.0).then_some(DriftModel {
        sigma: args.drift_sigma,
        seed: sim_config.seed.wrapping_add(1),
    });
    export_simulation(&world, drift, &pipeline_config, &args.out).map_err(data_err)?;
    println!(
        "exported {} frames to {}",
        sim_config.frames,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let est = read_kitti_poses(&args.est).map_err(data_err)?;
    let gt = read_kitti_poses(&args.gt).map_err(data_err)?;
    let ate = ate_rmse(&est, &gt).map_err(data_err)?;
    println!("{ate:.6}");
    Ok(())
}

fn cmd_threshold_table(args: ThresholdArgs) -> Result<(), AppError> {
    let parts: Vec<f64> = args
        .intrinsics
        .split(',')
        .map_while(|s| s.trim().parse().ok())
        .collect();
    if parts.len() != 3 {
        return Err(AppError::Usage(
            "--intrinsics expects `f,px,py`".to_string(),
        ));
    }
    let intr = CameraIntrinsics::new(parts[0], parts[1], parts[2]);
    let range: Vec<f64> = args
        .l_range
        .split(':')
        .map_while(|s| s.trim().parse().ok())
        .collect();
    let [start, end, step] = range[..] else {
        return Err(AppError::Usage(
            "--l-range expects `start:end:step`".to_string(),
        ));
    };
    if step <= 0.0 || end < start || args.d <= 0.0 || start < 0.0 {
        return Err(AppError::Usage("invalid --l-range or --d".to_string()));
    }
    println!("l_m,threshold_px");
    let mut l = start;
    while l <= end + 1e-9 {
        println!("{l:.6},{:.6}", adaptive_threshold(&intr, l, args.d));
        l += step;
    }
    Ok(())
}

fn cmd_plane_fit(args: PlaneFitArgs) -> Result<(), AppError> {
    let points = read_points_file(&args.points).map_err(data_err)?;
    let config = RansacConfig {
        seed: args.seed,
        ..Default::default()
    };
    let (plane, inliers) = fit_plane_ransac(&points, &config).map_err(data_err)?;
    println!(
        "normal: {:.6} {:.6} {:.6}",
        plane.normal.x, plane.normal.y, plane.normal.z
    );
    println!("offset: {:.6}", plane.offset);
    println!("inliers: {} of {}", inliers.len(), points.len());
    Ok(())
}
