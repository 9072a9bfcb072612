//! Command-line driver for the rotation-regression experiments, rotation
//! averaging utilities, and pose-graph fusion.
//!
//! Every run writes a `manifest.json` (command, crate version, seed, and the
//! full config snapshot) beside its outputs so results can be reproduced
//! byte for byte.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rotreg_core::averaging::{
    chordal_mean, karcher_mean, quat_mean, RotationSample, KARCHER_MAX_ITER, KARCHER_TOL,
};
use rotreg_core::experiments::{run_1d, run_hemisphere, Config1D, HemisphereConfig};
use rotreg_core::fusion::{io as graph_io, relax_graph, traj_metrics, GnOptions, PoseGraph};
use rotreg_core::nnet::standard_grad_checks;
use rotreg_core::so3::UnitQuaternion;

#[derive(Parser)]
#[command(name = "rotreg", version, about = "Probabilistic rotation regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the 1D five-estimator uncertainty benchmark.
    Exp1d(Exp1dArgs),
    /// Run the hemisphere orientation-regression experiment.
    Hemisphere(HemisphereArgs),
    /// Average rotations from a CSV of quaternions.
    Average(AverageArgs),
    /// Relax a pose graph, fusing odometry with rotation edges.
    Fuse(FuseArgs),
    /// Run the finite-difference gradient check battery.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
struct Exp1dArgs {
    /// JSON config file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out/exp1d")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(clap::Args)]
struct HemisphereArgs {
    /// JSON config file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out/hemisphere")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Quat,
    Chordal,
    Karcher,
}

#[derive(clap::Args)]
struct AverageArgs {
    /// Rotation mean to compute.
    #[arg(long, value_enum, default_value = "quat")]
    metric: MetricArg,
    /// CSV of `qw,qx,qy,qz[,weight]` rows (header optional).
    #[arg(long)]
    input: PathBuf,
}

#[derive(clap::Args)]
struct FuseArgs {
    /// Pose-graph file with NODE / EDGE_SE3 / EDGE_ROT records.
    #[arg(long)]
    graph: PathBuf,
    /// Output directory (created if absent).
    #[arg(long, default_value = "out/fuse")]
    out: PathBuf,
    /// Optional ground-truth trajectory (NODE records) for error metrics.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct Manifest<C: Serialize> {
    command: String,
    version: String,
    seed: u64,
    config: C,
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: C) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
    };
    let file = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)?;
    Ok(())
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> anyhow::Result<T> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            Ok(serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing config {}", p.display()))?)
        }
        None => Ok(T::default()),
    }
}

fn cmd_exp1d(args: Exp1dArgs) -> anyhow::Result<()> {
    let mut config: Config1D = load_config(&args.config)?;
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.reps {
        config.repetitions = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.noise_sigma {
        config.noise_sigma = v;
    }
    if let Some(v) = args.n_train {
        config.n_train = v;
    }
    if let Some(v) = args.n_test {
        config.n_test = v;
    }

    write_manifest(&args.out, "exp1d", config.seed, &config)?;
    let report = run_1d(&config)?;
    report.write_csvs(&args.out)?;
    for b in &report.box_stats {
        println!(
            "{:<22} median NLL {:9.4}  [{:9.4}, {:9.4}]  median MSE {:9.4}",
            b.method, b.median_nll, b.q1_nll, b.q3_nll, b.median_mse
        );
    }
    println!("ood sigma_e ratio: {:.3}", report.ood_sigma_ratio);
    println!("runtime: {:.1}s; outputs in {}", report.runtime_seconds, args.out.display());
    Ok(())
}

fn cmd_hemisphere(args: HemisphereArgs) -> anyhow::Result<()> {
    let mut config: HemisphereConfig = load_config(&args.config)?;
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.n_train {
        config.n_train = v;
    }
    if let Some(v) = args.n_test {
        config.n_test = v;
    }
    if let Some(v) = args.heads {
        config.heads = v;
    }

    write_manifest(&args.out, "hemisphere", config.seed, &config)?;
    let (report, net) = run_hemisphere(&config)?;
    report.write_csvs(&args.out)?;
    let checkpoint = File::create(args.out.join("checkpoint.json"))?;
    net.model.save_checkpoint(BufWriter::new(checkpoint))?;
    println!("mean angular error: {:.4} deg", report.mean_angular_error_deg);
    println!("mean NLL: {:.4}", report.mean_nll);
    println!(
        "within 3 sigma: [{:.4}, {:.4}, {:.4}]",
        report.within_3_sigma[0], report.within_3_sigma[1], report.within_3_sigma[2]
    );
    println!(
        "epistemic trace in-dist {:.3e}, out-of-dist {:.3e} (ratio {:.2})",
        report.mean_trace_epistemic_in_dist,
        report.mean_trace_epistemic_ood,
        report.ood_trace_ratio()
    );
    println!("runtime: {:.1}s; outputs in {}", report.runtime_seconds, args.out.display());
    Ok(())
}

fn read_quat_csv(path: &Path) -> anyhow::Result<Vec<RotationSample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if i == 0 && fields[0].parse::<f64>().is_err() {
            continue; // header row
        }
        if fields.len() != 4 && fields.len() != 5 {
            bail!("line {}: expected 4 or 5 comma-separated fields", i + 1);
        }
        let v: Vec<f64> = fields
            .iter()
            .map(|f| f.parse::<f64>().with_context(|| format!("line {}: bad float {f:?}", i + 1)))
            .collect::<anyhow::Result<_>>()?;
        let q = UnitQuaternion::from_wxyz(v[0], v[1], v[2], v[3])
            .with_context(|| format!("line {}: degenerate quaternion", i + 1))?;
        let weight = if v.len() == 5 { v[4] } else { 1.0 };
        samples.push(RotationSample::weighted(q, weight));
    }
    if samples.is_empty() {
        bail!("no quaternions in {}", path.display());
    }
    Ok(samples)
}

fn cmd_average(args: AverageArgs) -> anyhow::Result<()> {
    let samples = read_quat_csv(&args.input)?;
    let mean = match args.metric {
        MetricArg::Quat => {
            let out = quat_mean(&samples)?;
            if out.dispersion_warning {
                eprintln!("warning: samples exceed the pi/2 dispersion bound of the closed form");
            }
            out.mean
        }
        MetricArg::Chordal => UnitQuaternion::from_matrix(&chordal_mean(&samples)?)?,
        MetricArg::Karcher => {
            let out = karcher_mean(&samples, KARCHER_TOL, KARCHER_MAX_ITER)?;
            eprintln!("converged in {} iterations", out.iterations);
            out.mean
        }
    };
    println!("{mean}");
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> anyhow::Result<()> {
    let file = File::open(&args.graph).with_context(|| format!("opening {}", args.graph.display()))?;
    let graph: PoseGraph = graph_io::read_graph(BufReader::new(file))?;
    write_manifest(&args.out, "fuse", 0, serde_json::json!({
        "graph": args.graph.display().to_string(),
        "nodes": graph.nodes.len(),
        "odom_edges": graph.odom_edges.len(),
        "rot_edges": graph.rot_edges.len(),
    }))?;

    let fused = relax_graph(&graph, &GnOptions::default())?;
    let out_file = File::create(args.out.join("fused.txt"))?;
    let mut writer = BufWriter::new(out_file);
    graph_io::write_trajectory(&mut writer, &fused)?;
    writer.flush()?;

    // Odometry-only baseline for comparison.
    let mut odom_only = graph.clone();
    odom_only.rot_edges.clear();
    let dead_reckoned = relax_graph(&odom_only, &GnOptions::default())?;
    let out_file = File::create(args.out.join("odometry_only.txt"))?;
    let mut writer = BufWriter::new(out_file);
    graph_io::write_trajectory(&mut writer, &dead_reckoned)?;
    writer.flush()?;

    if let Some(gt_path) = &args.gt {
        let gt_file = File::open(gt_path).with_context(|| format!("opening {}", gt_path.display()))?;
        let gt: Vec<_> = graph_io::read_trajectory(BufReader::new(gt_file))?
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let fused_poses: Vec<_> = fused.iter().map(|(_, p)| *p).collect();
        let odom_poses: Vec<_> = dead_reckoned.iter().map(|(_, p)| *p).collect();
        let fused_metrics = traj_metrics(&fused_poses, &gt)?;
        let odom_metrics = traj_metrics(&odom_poses, &gt)?;

        let metrics_file = File::create(args.out.join("metrics.csv"))?;
        let mut w = BufWriter::new(metrics_file);
        writeln!(
            w,
            "trajectory,mate_translation_m,mate_rotation_deg,seg_translation_percent,seg_rotation_deg_per_100m"
        )?;
        for (name, m) in [("fused", &fused_metrics), ("odometry_only", &odom_metrics)] {
            writeln!(
                w,
                "{},{},{},{},{}",
                name,
                m.mate_translation_m,
                m.mate_rotation_deg,
                m.seg_translation_percent,
                m.seg_rotation_deg_per_100m
            )?;
        }
        w.flush()?;
        println!(
            "fused m-ATE: {:.4} m / {:.4} deg; odometry-only: {:.4} m / {:.4} deg",
            fused_metrics.mate_translation_m,
            fused_metrics.mate_rotation_deg,
            odom_metrics.mate_translation_m,
            odom_metrics.mate_rotation_deg
        );
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<()> {
    let checks = standard_grad_checks(args.seed)?;
    let mut worst: f64 = 0.0;
    for (name, report) in &checks {
        println!(
            "{:<24} max relative error {:.3e} ({} parameters checked)",
            name, report.max_relative_error, report.checked
        );
        worst = worst.max(report.max_relative_error);
    }
    if worst >= 1e-4 {
        bail!("gradient check failed: max relative error {worst:.3e}");
    }
    println!("all gradient checks below 1e-4");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Exp1d(args) => cmd_exp1d(args),
        Command::Hemisphere(args) => cmd_hemisphere(args),
        Command::Average(args) => cmd_average(args),
        Command::Fuse(args) => cmd_fuse(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn main() {
    // clap exits with code 2 on usage errors.
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
