//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use mesh_denoise::eval::{
    export_error_map, mean_angular_difference, run_sweep, write_sweep_csv, SweepConfig, SweepSuite,
};
use mesh_denoise::geodesic::GeodesicBackend;
use mesh_denoise::io::{load_mesh_auto, save_mesh_auto};
use mesh_denoise::mesh::TriMesh;
use mesh_denoise::net::ModelParams;
use mesh_denoise::noise::{add_noise, NoiseKind, NoiseSpec};
use mesh_denoise::pipeline::{
    assemble_dataset, denoise_mesh, train, DenoiseOptions, TrainConfig, TrainPreset,
};
use mesh_denoise::{dataset, Error};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "mesh-denoise",
    version,
    about = "Patch-based normal-filtering mesh denoiser",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop a training dataset from paired noisy/clean mesh directories.
    MakeDataset(MakeDatasetArgs),
    /// Add synthetic noise to a clean mesh (writes a regeneration sidecar).
    SynthNoise(SynthNoiseArgs),
    /// Train a model on a patch dataset.
    Train(TrainArgs),
    /// Denoise a mesh with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Compare a denoised mesh against ground truth.
    Eval(EvalArgs),
    /// Run a robustness sweep with a fixed checkpoint.
    Sweep(SweepArgs),
}

fn parse_kind(s: &str) -> Result<NoiseKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<TrainPreset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_suite(s: &str) -> Result<SweepSuite, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct MakeDatasetArgs {
    /// Directory of noisy meshes (obj/off/ply).
    #[arg(long)]
    noisy: PathBuf,
    /// Directory of clean meshes; file names must match the noisy ones.
    #[arg(long)]
    clean: PathBuf,
    /// Dataset shape: paper-synthetic, paper-real, or desk.
    #[arg(long, value_parser = parse_preset)]
    preset: TrainPreset,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthNoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// gaussian-normal, gaussian-iso, impulsive, or uniform.
    #[arg(long, value_parser = parse_kind)]
    kind: NoiseKind,
    /// Noise level as a multiple of the mean edge length.
    #[arg(long)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of vertices hit by impulsive noise.
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Patch dataset produced by make-dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Training config (TOML). Defaults to the desk preset when omitted.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a config file.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<TrainPreset>,
    /// Directory for checkpoints and the loss curve.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Vertex-update sweeps.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Faces per coverage patch (clamped to the mesh's face count).
    #[arg(long, default_value_t = 256)]
    patch_size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the integrated face normals as CSV.
    #[arg(long)]
    dump_normals: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    denoised: PathBuf,
    /// Write a per-face error-colored PLY here.
    #[arg(long)]
    error_map: Option<PathBuf>,
    /// Write per-face angles as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Color-ramp clamp in degrees.
    #[arg(long, default_value_t = 60.0)]
    max_angle: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// resolution, noise-level, or noise-pattern.
    #[arg(long, value_parser = parse_suite)]
    suite: SweepSuite,
    /// Sweep config (TOML): checkpoint, meshes, levels/kinds, seeds.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code scheme reserves 2 for usage; this tool
            // uses 1 for usage and 2 for data errors.
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> mesh_denoise::Result<()> {
    match command {
        Command::MakeDataset(args) => make_dataset(args),
        Command::SynthNoise(args) => synth_noise(args),
        Command::Train(args) => run_train(args),
        Command::Denoise(args) => run_denoise(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep_cmd(args),
    }
}

const MESH_EXTENSIONS: [&str; 3] = ["obj", "off", "ply"];

fn list_meshes(dir: &Path) -> mesh_denoise::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| MESH_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::DataFormat(format!(
            "no obj/off/ply meshes in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn make_dataset(args: MakeDatasetArgs) -> mesh_denoise::Result<()> {
    let noisy_files = list_meshes(&args.noisy)?;
    let mut pairs: Vec<(TriMesh, TriMesh)> = Vec::new();
    let mut names = Vec::new();
    for noisy_path in &noisy_files {
        let name = noisy_path.file_name().expect("listed file has a name");
        let clean_path = args.clean.join(name);
        if !clean_path.exists() {
            return Err(Error::DataFormat(format!(
                "no clean counterpart for {}",
                noisy_path.display()
            )));
        }
        pairs.push((load_mesh_auto(noisy_path)?, load_mesh_auto(&clean_path)?));
        names.push(name.to_string_lossy().into_owned());
    }
    let plan = args.preset.dataset_plan();
    let provenance = format!(
        "preset={} seed={} meshes=[{}]",
        args.preset,
        args.seed,
        names.join(",")
    );
    let ds = assemble_dataset(
        &pairs,
        plan,
        GeodesicBackend::default(),
        args.seed,
        provenance,
    )?;
    dataset::write_dataset(&args.out, &ds)?;
    println!(
        "wrote {} patches (N={}, K={}) to {}",
        ds.len(),
        ds.patch_size,
        ds.neighbor_count,
        args.out.display()
    );
    Ok(())
}

fn synth_noise(args: SynthNoiseArgs) -> mesh_denoise::Result<()> {
    let mesh = load_mesh_auto(&args.input)?;
    let spec = NoiseSpec {
        kind: args.kind,
        level: args.level,
        impulse_fraction: args.fraction,
        rng_seed: args.seed,
    };
    let noisy = add_noise(&mesh, &spec)?;
    save_mesh_auto(&noisy, &args.out)?;
    // Sidecar lets anyone regenerate this exact mesh from the clean input.
    let sidecar = sidecar_path(&args.out);
    let text = toml::to_string(&spec)
        .map_err(|e| Error::Config(format!("spec serialization failed: {e}")))?;
    std::fs::write(&sidecar, text)?;
    println!(
        "wrote {} (+ sidecar {})",
        args.out.display(),
        sidecar.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".noise.toml");
    out.with_file_name(name)
}

fn run_train(args: TrainArgs) -> mesh_denoise::Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => args.preset.unwrap_or(TrainPreset::Desk).config(),
    };
    config.dataset = args.dataset;
    config.out_dir = args.out;
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }
    let report = train(&config)?;
    println!(
        "trained {} epochs ({} optimizer steps); final loss {}",
        config.epochs,
        report.optimizer_steps,
        report.epoch_losses.last().expect("at least one epoch")
    );
    println!("checkpoint: {}", report.checkpoint.display());
    println!("loss curve: {}", report.loss_csv.display());
    Ok(())
}

fn run_denoise(args: DenoiseArgs) -> mesh_denoise::Result<()> {
    let mesh = load_mesh_auto(&args.input)?;
    let params = ModelParams::<f32>::load(&args.ckpt)?;
    let options = DenoiseOptions {
        iterations: args.iters,
        patch_size: args.patch_size,
        ..DenoiseOptions::default()
    };
    let result = denoise_mesh(&mesh, &params, &options)?;
    save_mesh_auto(&result.mesh, &args.out)?;
    if let Some(csv) = &args.dump_normals {
        let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
        writeln!(w, "face,nx,ny,nz")?;
        for (fid, n) in result.normals.iter().enumerate() {
            writeln!(w, "{fid},{},{},{}", n.x, n.y, n.z)?;
        }
        w.flush()?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> mesh_denoise::Result<()> {
    let gt = load_mesh_auto(&args.gt)?;
    let denoised = load_mesh_auto(&args.denoised)?;
    let record = match &args.error_map {
        Some(ply) => export_error_map(
            &gt,
            &denoised,
            ply,
            args.csv.as_deref(),
            args.max_angle,
        )?,
        None => {
            let record = mean_angular_difference(&gt, &denoised)?;
            if let Some(csv) = &args.csv {
                let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
                writeln!(w, "face,angle_degrees")?;
                for (fid, a) in record.per_face_degrees.iter().enumerate() {
                    writeln!(w, "{fid},{a}")?;
                }
                w.flush()?;
            }
            record
        }
    };
    let counted = record
        .per_face_degrees
        .iter()
        .filter(|a| !a.is_nan())
        .count();
    println!(
        "theta = {} degrees (mean over {counted} of {} faces)",
        record.theta_degrees,
        record.per_face_degrees.len()
    );
    Ok(())
}

fn run_sweep_cmd(args: SweepArgs) -> mesh_denoise::Result<()> {
    let mut config = SweepConfig::load(&args.config)?;
    config.suite = args.suite;
    if config.meshes.is_empty() {
        return Err(Error::Config("sweep config lists no meshes".into()));
    }
    let cleans = config
        .meshes
        .iter()
        .map(load_mesh_auto)
        .collect::<mesh_denoise::Result<Vec<_>>>()?;
    let params = ModelParams::<f32>::load(&config.checkpoint)?;
    let rows = run_sweep(&config, &cleans, &params)?;
    write_sweep_csv(&args.out, config.suite, &rows)?;
    for row in &rows {
        println!(
            "{}: theta_noisy={} theta_denoised={}",
            row.variant, row.theta_noisy, row.theta_denoised
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
