use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omg_core::pipeline::Preset;

#[derive(Parser)]
#[command(name = "omg", version, about = "Encode, decode, render and evaluate compact Gaussian-splat scenes")]
#[command(after_help = "Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data or corruption error.")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Compress a PLY scene into an .omg container.
    Encode(EncodeArgs),
    /// Expand an .omg container into a standard 3DGS PLY.
    Decode(DecodeArgs),
    /// Render a .ply or .omg scene from every camera in a camera file.
    Render(RenderArgs),
    /// Render a scene and compare against the camera file's reference images.
    Eval(EvalArgs),
    /// Print the size breakdown of an .omg container.
    Info(InfoArgs),
    /// Generate a synthetic scene, cameras and reference renders.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct EncodeArgs {
    /// Source scene (binary little-endian 3DGS PLY).
    pub input: PathBuf,
    /// Output container.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Camera file used for importance scoring. Required unless --no-prune.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// JSON pipeline config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Explicit CDF threshold in (0, 1]; overrides --preset.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Exponent on local color distinctiveness.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Neighbours per Gaussian for distinctiveness.
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep every Gaussian.
    #[arg(long)]
    pub no_prune: bool,
    /// Store attributes unquantized.
    #[arg(long)]
    pub no_svq: bool,
    /// Distillation iterations for the appearance field.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the size breakdown as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-Gaussian importance scores as JSON.
    #[arg(long)]
    pub importance_dump: Option<PathBuf>,
    /// Print the resolved config and exit without encoding.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ImageFormat {
    Png,
    Pfm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Pfm => "pfm",
        }
    }
}

#[derive(Args)]
pub struct RenderArgs {
    /// Scene as .ply or .omg.
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    /// Output directory; one image per camera, named after its reference image.
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
    /// Background color as r,g,b in [0, 1].
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    pub background: [f64; 3],
}

#[derive(Args)]
pub struct EvalArgs {
    /// Scene as .ply or .omg.
    pub scene: PathBuf,
    #[arg(long)]
    pub cameras: PathBuf,
    /// Directory the reference image paths are relative to (default: the camera file's directory).
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    pub background: [f64; 3],
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct InfoArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "views", default_value_t = 8)]
    pub cameras: usize,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
    /// Typical Gaussian standard deviation in world units.
    #[arg(long)]
    pub mean_scale: Option<f64>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: omg_core::Error| e.to_string())
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [r, g, b] if parts.iter().all(|v| (0.0..=1.0).contains(v)) => Ok([r, g, b]),
        _ => Err("expected three comma-separated values in [0, 1]".into()),
    }
}
