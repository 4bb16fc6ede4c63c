mod args;

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use omg_core::cameras::{parse_cameras, save_cameras, CameraEntry, CameraListFile};
use omg_core::field::export_decoded;
use omg_core::image::{load_image, save_pfm, save_png};
use omg_core::metrics::MetricReport;
use omg_core::pipeline::{decode_scene, encode_scene, size_report, PipelineConfig};
use omg_core::ply::{read_ply, write_ply};
use omg_core::raster::{render, RenderOptions};
use omg_core::synth::{ring_cameras, synth_scene, SynthSpec};
use omg_core::{Error, ErrorKind, Result, SourceGaussianSet};
use rayon::prelude::*;

use args::{Cli, Command, DecodeArgs, EncodeArgs, EvalArgs, ImageFormat, InfoArgs, RenderArgs, SynthArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("omg: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Io => 3,
                ErrorKind::Data => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Encode(a) => encode(a, cli.threads),
        Command::Decode(a) => decode(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Info(a) => info(a),
        Command::Synth(a) => synth(a),
    }
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_context(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_context(path, e))
}

/// Loads a PLY or a container, deciding by content rather than extension.
fn load_scene(path: &Path) -> Result<SourceGaussianSet> {
    let bytes = read_file(path)?;
    if bytes.starts_with(b"ply") {
        read_ply(&mut Cursor::new(bytes))
    } else {
        Ok(export_decoded(&decode_scene(&bytes)?))
    }
}

fn load_camera_file(path: &Path) -> Result<CameraListFile> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Parse { line: 1, message: format!("{}: camera file is not UTF-8", path.display()) })?;
    parse_cameras(&text)
}

fn pipeline_config(a: &EncodeArgs, threads: Option<usize>) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::from_json(&String::from_utf8_lossy(&read_file(p)?))?,
        None => PipelineConfig::default(),
    };
    if a.preset.is_some() {
        cfg.preset = a.preset;
        cfg.tau = None;
    }
    if a.tau.is_some() {
        cfg.tau = a.tau;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if a.no_prune {
        cfg.prune = false;
    }
    if a.no_svq {
        cfg.svq_enabled = false;
    }
    if let Some(it) = a.iterations {
        cfg.distill.iterations = it;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn encode(a: EncodeArgs, threads: Option<usize>) -> Result<()> {
    let cfg = pipeline_config(&a, threads)?;
    if a.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let cameras = match (&a.cameras, cfg.prune) {
        (Some(p), _) => load_camera_file(p)?.cameras(),
        (None, false) => Vec::new(),
        (None, true) => return Err(Error::Config("pruning needs --cameras (or pass --no-prune)".into())),
    };
    let source = read_ply(&mut Cursor::new(read_file(&a.input)?))?;
    let out = encode_scene(&source, &cameras, &cfg)?;
    write_file(&a.output, &out.file)?;
    if let Some(p) = &a.report {
        write_file(p, out.report.to_json())?;
    }
    if let Some(p) = &a.importance_dump {
        let Some(report) = &out.importance else {
            return Err(Error::Config("--importance-dump needs pruning enabled".into()));
        };
        write_file(p, serde_json::to_string_pretty(report).expect("report serializes"))?;
    }
    println!("{} → {} ({} of {} Gaussians kept)", a.input.display(), a.output.display(), out.decoded.len(), source.len());
    print!("{}", out.report.to_table());
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let set = decode_scene(&read_file(&a.input)?)?;
    write_ply(&export_decoded(&set), &a.output)?;
    println!("{} → {} ({} Gaussians)", a.input.display(), a.output.display(), set.len());
    Ok(())
}

fn output_name(entry: &CameraEntry, index: usize, ext: &str) -> PathBuf {
    let stem = entry.image.file_stem().map(|s| s.to_string_lossy().into_owned());
    PathBuf::from(format!("{}.{ext}", stem.unwrap_or_else(|| format!("view_{index:03}"))))
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cams = load_camera_file(&a.cameras)?;
    let scene = load_scene(&a.scene)?;
    fs::create_dir_all(&a.out).map_err(|e| io_context(&a.out, e))?;
    let opts = RenderOptions { background: a.background, ..RenderOptions::default() };
    for (i, entry) in cams.entries.iter().enumerate() {
        let img = render(&scene, &entry.camera, &opts);
        let path = a.out.join(output_name(entry, i, a.format.extension()));
        match a.format {
            ImageFormat::Png => save_png(&img, &path)?,
            ImageFormat::Pfm => save_pfm(&img, &path)?,
        }
    }
    println!("rendered {} views to {}", cams.entries.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let cams = load_camera_file(&a.cameras)?;
    let base = match &a.images {
        Some(dir) => dir.clone(),
        None => a.cameras.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let scene = load_scene(&a.scene)?;
    let opts = RenderOptions { background: a.background, ..RenderOptions::default() };
    let pairs = cams
        .entries
        .iter()
        .zip(cams.image_paths(&base))
        .map(|(entry, path)| {
            let reference = load_image(&path)?;
            Ok((entry.image.display().to_string(), reference, render(&scene, &entry.camera, &opts)))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::compute(&pairs)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn info(a: InfoArgs) -> Result<()> {
    let report = size_report(&read_file(&a.input)?)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec {
        gaussians: a.gaussians,
        seed: a.seed,
        cameras: a.cameras,
        width: a.width,
        height: a.height,
        ..SynthSpec::default()
    };
    if let Some(s) = a.mean_scale {
        spec.mean_scale = s;
    }
    let scene = synth_scene(&spec)?;
    let cams = ring_cameras(&spec)?;
    let images = a.out.join("images");
    fs::create_dir_all(&images).map_err(|e| io_context(&images, e))?;
    write_ply(&scene, a.out.join("scene.ply"))?;
    let entries: Vec<CameraEntry> = cams
        .into_iter()
        .enumerate()
        .map(|(i, camera)| CameraEntry { camera, image: PathBuf::from(format!("images/cam_{i:03}.png")) })
        .collect();
    entries.par_iter().try_for_each(|e| save_png(&render(&scene, &e.camera, &RenderOptions::default()), a.out.join(&e.image)))?;
    let list = CameraListFile { entries };
    save_cameras(&list, a.out.join("cameras.json"))?;
    println!("wrote {} Gaussians and {} views to {}", scene.len(), list.entries.len(), a.out.display());
    Ok(())
}
