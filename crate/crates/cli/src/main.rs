use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dbtsdf::io::{ExportSelection, MeshFormat};
use dbtsdf::metrics::DEFAULT_SAMPLES;
use dbtsdf::Result;
use dbtsdf_cli::commands;
use dbtsdf_cli::config::ConfigFile;
use dbtsdf_cli::{exit, exit_code};

#[derive(Parser)]
#[command(name = "dbtsdf", version, about = "Directional bitmask TSDF mapping for LiDAR")]
struct Cli {
    /// Print machine-readable JSON summaries instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MeshFormatArg {
    Ply,
    PlyAscii,
    Obj,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a scan sequence into a grid snapshot.
    Fuse {
        /// TOML run configuration; flags override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigFile,
    },
    /// Extract the zero level set of a snapshot as a mesh.
    Mesh {
        snapshot: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Defaults to the output file extension.
        #[arg(long, value_enum)]
        format: Option<MeshFormatArg>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        iso: f64,
        /// Also write per-vertex normals.
        #[arg(long)]
        normals: bool,
    },
    /// Score a predicted mesh or cloud against ground-truth points.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        /// Surface samples drawn from a predicted mesh.
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the JSON report here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export voxels of a snapshot as CSV rows or a PCD cloud of centers.
    Export {
        snapshot: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Export every observed voxel, not only occupied ones.
        #[arg(long)]
        all: bool,
    },
    /// Time frame integration across voxel sizes over a fixed world extent.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.3, 0.2, 0.1, 0.05])]
        voxel_sizes: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// CSV timing table.
        #[arg(long = "table", default_value = "bench.csv")]
        table: PathBuf,
        #[command(flatten)]
        overrides: ConfigFile,
    },
    /// Describe a snapshot.
    Info { snapshot: PathBuf },
}

fn load_config(path: Option<&Path>, overrides: &ConfigFile) -> Result<ConfigFile> {
    let base = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    Ok(base.overlay(overrides))
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce(&T) -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
    } else {
        println!("{}", text(value));
    }
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Fuse { config, overrides } => {
            let rc = load_config(config.as_deref(), &overrides)?.resolve()?;
            let s = commands::fuse(&rc)?;
            emit(json, &s, |s| {
                format!(
                    "fused {} frames ({} skipped): {} points, {} discarded, {:.1} ms/frame\nsnapshot {} ({} voxel bytes)\nstats {}",
                    s.frames,
                    s.skipped_frames,
                    s.points,
                    s.discarded,
                    s.mean_frame_ms,
                    s.snapshot.display(),
                    s.memory_bytes,
                    s.stats.display()
                )
            });
        }
        Command::Mesh { snapshot, output, format, iso, normals } => {
            let format = format.map(|f| match f {
                MeshFormatArg::Ply => MeshFormat::PlyBinary,
                MeshFormatArg::PlyAscii => MeshFormat::PlyAscii,
                MeshFormatArg::Obj => MeshFormat::Obj,
            });
            let s = commands::mesh(&snapshot, &output, format, iso, normals)?;
            emit(json, &s, |s| {
                format!("{} vertices, {} triangles -> {}", s.vertices, s.triangles, s.output.display())
            });
        }
        Command::Eval { pred, gt, threshold, samples, seed, output } => {
            let r = commands::eval(&pred, &gt, threshold, samples, seed, output.as_deref())?;
            emit(json, &r, |r| {
                format!(
                    "accuracy {:.4} m, completeness {:.4} m, chamfer-L1 {:.4} m\nprecision {:.2}%, recall {:.2}%, F-score {:.2}% at {} m",
                    r.accuracy_m, r.completeness_m, r.chamfer_l1_m, r.precision_pct, r.recall_pct, r.fscore_pct, r.threshold_m
                )
            });
        }
        Command::Export { snapshot, output, all } => {
            let include = if all { ExportSelection::Observed } else { ExportSelection::OccupiedOnly };
            let s = commands::export(&snapshot, &output, include)?;
            emit(json, &s, |s| format!("{} voxels -> {}", s.rows, s.output.display()));
        }
        Command::Bench { config, voxel_sizes, repeats, table, overrides } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let r = commands::bench(&cfg, &voxel_sizes, repeats)?;
            commands::write_bench_csv(&r, &table)?;
            emit(json, &r, |r| {
                let mut s = format!("{} frames of {:.0} points, {} repeats\n", r.frames, r.points_per_frame, r.repeats);
                for row in &r.rows {
                    s += &format!(
                        "{:>6} m  {:>4}x{:<4}x{:<4} {:>12} B  {:8.1} +- {:.1} ms\n",
                        row.voxel_size, row.dims[0], row.dims[1], row.dims[2], row.memory_bytes, row.mean_ms, row.std_ms
                    );
                }
                s + &format!("max/min latency ratio {:.3}", r.max_min_ratio)
            });
        }
        Command::Info { snapshot } => {
            let i = commands::info(&snapshot)?;
            emit(json, &i, |i| {
                format!(
                    "{}x{}x{} voxels of {} m at {:?}\n{} voxel bytes, {} observed, {} occupied (T = {}, H_max = {})",
                    i.dims[0], i.dims[1], i.dims[2], i.voxel_size, i.origin, i.memory_bytes, i.observed, i.occupied, i.threshold, i.h_max
                )
            });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
