use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use incx_core::detector::{DetectionVector, Detector, DetectorPool, Image};
use incx_core::drise::drise_saliency;
use incx_core::explain::{explain, read_mask, write_mask, ExplanationMask};
use incx_core::metrics::{self, MetricReport};
use incx_core::pipeline::{
    self, artifact_stem, read_detections, render_overlay, DetectionRecord, DetectorConfig,
    FrameSource, Pipeline, PipelineConfig,
};
use incx_core::saliency::{read_grid, write_grid, SaliencyField};
use incx_core::scene::Scene;
use incx_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(
    name = "incx",
    version,
    about = "Incremental saliency explanations for object detectors on video"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain every tracked object across a sequence of frames
    Run(RunArgs),
    /// One-shot saliency and explanation for a single image
    Drise(DriseArgs),
    /// Re-score the fields and masks stored by a previous run
    Metrics(MetricsArgs),
    /// Draw overlays from the artifacts of a previous run
    Render(RenderArgs),
    /// Write the synthetic drifting-rectangle scene as numbered PNG frames
    Synth(SynthArgs),
}

/// Options shared by every command that talks to a detector.
#[derive(Args)]
struct DetectorArgs {
    /// Pipeline configuration, JSON (.json) or TOML
    #[arg(long)]
    config: Option<PathBuf>,

    /// synthetic:rectangle, cmd, cmd:<command> or tcp:<host:port>
    #[arg(long)]
    detector: Option<String>,

    /// Bootstrap knobs, e.g. masks=1000,grid=4x4,p=0.5,seed=0
    #[arg(long)]
    bootstrap: Option<String>,

    /// Mask sampling seed
    #[arg(long)]
    seed: Option<u64>,
}

impl DetectorArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(sel) = &self.detector {
            cfg.detector = DetectorConfig::from_selector(sel, &cfg.detector)?;
        }
        if let Some(knobs) = &self.bootstrap {
            cfg.bootstrap = cfg.bootstrap.clone().with_knobs(knobs)?;
        }
        if let Some(seed) = self.seed {
            cfg.bootstrap.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Frame directory, raw stream file, or - for a raw stream on stdin
    #[arg(long)]
    frames: PathBuf,

    /// Output directory
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Also recompute the full saliency each frame and report similarity
    #[arg(long)]
    compare_drise: bool,

    /// Metric report path (default <out>/report.jsonl)
    #[arg(long)]
    report: Option<PathBuf>,

    /// Continue from the checkpoint left in the output directory
    #[arg(long)]
    resume: bool,

    /// Leave wall-clock fields at zero for reproducible reports
    #[arg(long)]
    no_timing: bool,

    /// Skip insertion, deletion and pointing-game scores
    #[arg(long)]
    no_metrics: bool,

    /// Write overlay PNGs
    #[arg(long)]
    overlays: bool,

    /// Mirror the report as CSV
    #[arg(long)]
    csv: bool,

    /// Objects explained concurrently
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DriseArgs {
    /// Input image (PNG or PPM)
    #[arg(long)]
    image: PathBuf,

    /// Output stem; writes <stem>.f32/.json and a mask next to it
    #[arg(long)]
    out: PathBuf,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Index of the detection to explain
    #[arg(long, default_value_t = 0)]
    target: usize,

    /// Also write an overlay PNG here
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Output directory of a previous run
    #[arg(long)]
    run: PathBuf,

    /// Frames of that run; with them insertion and deletion are recomputed
    #[arg(long)]
    frames: Option<PathBuf>,

    #[command(flatten)]
    detector: DetectorArgs,

    /// Another run to compare fields and masks against
    #[arg(long)]
    reference: Option<PathBuf>,

    /// Insertion/deletion steps
    #[arg(long)]
    steps: Option<usize>,

    /// Write the report here instead of standard output
    #[arg(long)]
    report: Option<PathBuf>,

    /// Leave wall-clock fields at zero
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Output directory of a previous run
    #[arg(long)]
    run: PathBuf,

    /// Frames of that run
    #[arg(long)]
    frames: PathBuf,

    /// Overlay directory (default <run>/overlays)
    #[arg(long)]
    dest: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write frame_00000.png onwards into
    #[arg(long)]
    out: PathBuf,

    /// Number of frames
    #[arg(long)]
    frames: Option<usize>,

    /// Frames (start..end, end exclusive) during which the object is hidden
    #[arg(long, value_parser = parse_range)]
    hide: Option<std::ops::Range<usize>>,
}

fn parse_range(s: &str) -> std::result::Result<std::ops::Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or("expected START..END")?;
    let a: usize = a.parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: usize = b.parse().map_err(|_| format!("bad end {b:?}"))?;
    Ok(a..b)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = args.detector.config()?;
    cfg.compare_drise |= args.compare_drise;
    if args.report.is_some() {
        cfg.output.report = args.report;
    }
    cfg.timing &= !args.no_timing;
    cfg.metrics.enabled &= !args.no_metrics;
    cfg.output.overlays |= args.overlays;
    cfg.output.csv |= args.csv;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let frames = FrameSource::open(&args.frames)?;
    let mut p = Pipeline::new(cfg)?;
    let summary = pipeline::run(&mut p, frames, &args.out, args.resume)?;
    print_json(&serde_json::to_value(summary)?)
}

fn choose_target(pool: &DetectorPool, img: &Image, index: usize) -> Result<DetectionVector> {
    let dets = pool.with(|d| d.detect(img))?;
    let n = dets.len();
    dets.into_iter().nth(index).ok_or_else(|| {
        Error::Config(format!(
            "detection {index} requested but the detector found {n}"
        ))
    })
}

fn cmd_drise(args: DriseArgs) -> Result<()> {
    let cfg = args.detector.config()?;
    let img = Image::open(&args.image)?;
    let pool = cfg.detector.build_pool(1)?;
    let target = choose_target(&pool, &img, args.target)?;
    let field = pool.with(|d| drise_saliency(&img, &target, d, &cfg.bootstrap, cfg.baseline))?;
    let mask = pool.with(|d| explain(&field, d, &img, &target, None, &cfg.search, cfg.baseline))?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_grid(&args.out, &field, 0, 0)?;
    let mask_stem = args.out.with_file_name(format!(
        "{}_mask",
        args.out
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("out")
    ));
    write_mask(&mask_stem, &mask, 0, 0)?;
    if let Some(path) = &args.overlay {
        render_overlay(&img, &field, &mask, &target.bbox).save_png(path)?;
    }
    print_json(&json!({
        "detection": target,
        "argmax": field.argmax(),
        "threshold": mask.threshold,
        "sufficient": mask.sufficient,
        "explanation_pixels": mask.count(),
        "detector_calls": pool.calls(),
    }))
}

fn stored(run: &Path, rec: &DetectionRecord) -> Result<(SaliencyField, ExplanationMask)> {
    let stem = artifact_stem(rec.frame, rec.track_id);
    let (field, _) = read_grid(&run.join("grids").join(&stem))?;
    let (mask, _) = read_mask(&run.join("masks").join(&stem))?;
    Ok((field, mask))
}

fn optional_auc(r: Result<(metrics::Curve, f64)>) -> Result<Option<f64>> {
    match r {
        Ok((_, auc)) => Ok(Some(auc)),
        Err(Error::ZeroFullImageScore) => Ok(None),
        Err(e) => Err(e),
    }
}

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let cfg = args.detector.config()?;
    let steps = args.steps.unwrap_or(cfg.metrics.steps);
    let records = read_detections(&args.run)?;
    let pool = match &args.frames {
        Some(_) => Some(cfg.detector.build_pool(1)?),
        None => None,
    };
    let mut frames = args.frames.as_deref().map(FrameSource::open).transpose()?;
    let mut current: Option<(u64, Image)> = None;

    let mut out: Box<dyn Write> = match &args.report {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for rec in &records {
        let start = Instant::now();
        let (field, mask) = stored(&args.run, rec)?;
        let mut report = MetricReport {
            frame: rec.frame,
            track_id: rec.track_id,
            insertion: None,
            deletion: None,
            epg: Some(metrics::epg(&field, &rec.detection.bbox)?),
            ep: metrics::explanation_proportion(&mask),
            cc: None,
            ssim: None,
            ji: None,
            dc: None,
            detector_calls: 0,
            wall_ms: 0.0,
        };
        if let (Some(src), Some(pool)) = (frames.as_mut(), pool.as_ref()) {
            while current.as_ref().is_none_or(|(t, _)| *t < rec.frame) {
                let t = current.as_ref().map_or(0, |(t, _)| t + 1);
                let img = src.next().ok_or_else(|| {
                    Error::NoFrames(format!("frame {} of the stored run", rec.frame))
                })??;
                current = Some((t, img));
            }
            let (_, img) = current.as_ref().expect("frame loaded above");
            let before = pool.calls();
            report.insertion = optional_auc(pool.with(|d| {
                metrics::insertion(img, &field, d, &rec.detection, steps, cfg.baseline)
            }))?;
            report.deletion =
                optional_auc(pool.with(|d| {
                    metrics::deletion(img, &field, d, &rec.detection, steps, cfg.baseline)
                }))?;
            report.detector_calls = pool.calls() - before;
        }
        if let Some(reference) = &args.reference {
            let (ref_field, ref_mask) = stored(reference, rec)?;
            let c = metrics::compare(&field, &ref_field, &mask, &ref_mask)?;
            report.cc = Some(c.cc);
            report.ssim = Some(c.ssim);
            report.ji = Some(c.ji);
            report.dc = Some(c.dc);
        }
        if cfg.timing && !args.no_timing {
            report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        out.write_all(report.to_json_line()?.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let records = read_detections(&args.run)?;
    let dest = args.dest.unwrap_or_else(|| args.run.join("overlays"));
    fs::create_dir_all(&dest)?;
    let mut written = 0usize;
    for (t, img) in FrameSource::open(&args.frames)?.enumerate() {
        let img = img?;
        for rec in records.iter().filter(|r| r.frame == t as u64) {
            let (field, mask) = stored(&args.run, rec)?;
            let stem = artifact_stem(rec.frame, rec.track_id);
            render_overlay(&img, &field, &mask, &rec.detection.bbox)
                .save_png(&dest.join(format!("{stem}.png")))?;
            written += 1;
        }
    }
    print_json(&json!({ "overlays": written, "dest": dest }))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut scene = Scene::drifting_rectangle();
    if let Some(n) = args.frames {
        scene.frames = n;
    }
    if let Some(r) = args.hide {
        scene.objects[0].hidden.push(r);
    }
    scene.write_frames(&args.out)?;
    print_json(&json!({ "frames": scene.frames, "width": scene.width, "height": scene.height }))
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Detector => 3,
        ErrorKind::Io => 4,
        ErrorKind::Compute => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Drise(a) => cmd_drise(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Render(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = format!("{:?}", e.kind()).to_lowercase();
            eprintln!("{}", json!({ "error": kind, "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
