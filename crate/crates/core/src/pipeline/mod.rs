//! Frame-by-frame orchestration: detect, track, bootstrap or propagate each
//! object's saliency, extract its explanation, score it, and stream the
//! results out.

mod artifacts;
mod config;
mod frames;
mod overlay;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use artifacts::{artifact_stem, read_detections, ArtifactWriter, DetectionRecord, TrackEvent};
pub use config::{DetectorConfig, MetricsConfig, OutputConfig, PipelineConfig};
pub use frames::{write_raw_stream, FrameSource, RAW_MAGIC};
pub use overlay::render_overlay;

use crate::detector::{DetectionVector, Detector, DetectorPool, Image};
use crate::drise::{drise_saliency, MaskSpec};
use crate::error::{Error, Result};
use crate::explain::{explain, ExplanationMask};
use crate::geometry::{BBox, ScaleTranslate};
use crate::metrics::{self, Comparison, MetricReport};
use crate::saliency::SaliencyField;
use crate::tracker::Tracker;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Everything carried forward for one live track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedExplanation {
    pub track_id: u64,
    pub field: SaliencyField,
    pub mask: ExplanationMask,
    pub thresholds: Vec<f64>,
    pub bootstrap_frame: u64,
    /// Frame and detector box of the last explanation.
    pub last_frame: u64,
    pub bbox: BBox,
}

impl TrackedExplanation {
    /// Frames since the saliency was last computed from scratch.
    pub fn staleness(&self) -> u64 {
        self.last_frame - self.bootstrap_frame
    }
}

/// Detector images evaluated for one object on one frame, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallBreakdown {
    pub bootstrap: u64,
    pub explain: u64,
    pub metrics: u64,
    pub compare: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectOutput {
    pub track_id: u64,
    pub detection: DetectionVector,
    pub field: SaliencyField,
    pub mask: ExplanationMask,
    pub bootstrapped: bool,
    pub calls: CallBreakdown,
    pub comparison: Option<Comparison>,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: u64,
    pub detections: usize,
    /// Objects explained on this frame, by track id.
    pub objects: Vec<ObjectOutput>,
    pub events: Vec<TrackEvent>,
    /// Detector images spent on this frame's own detection pass.
    pub detect_calls: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: u64,
    pub tracks: u64,
    pub bootstraps: u64,
    pub detector_calls: u64,
    pub wall_ms_total: f64,
    pub wall_ms_per_frame: f64,
}

/// Resumable pipeline state; only ever replaced whole at frame boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub next_frame: u64,
    pub tracker: Tracker,
    pub tracks: BTreeMap<u64, TrackedExplanation>,
    /// Tracks whose explanation stream ended while the tracker kept them.
    pub ended: BTreeSet<u64>,
    pub summary: RunSummary,
}

enum Source<'a> {
    Bootstrap,
    Propagate(&'a TrackedExplanation),
}

struct Task<'a> {
    track_id: u64,
    detection: &'a DetectionVector,
    source: Source<'a>,
}

enum TaskResult {
    Explained(Box<ObjectOutput>),
    MassLost { track_id: u64, mass: f64 },
}

pub struct Pipeline {
    config: PipelineConfig,
    pool: DetectorPool,
    state: PipelineState,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Seed for the reference saliency computed on `frame`, independent of the
/// seed used for the bootstrap.
fn reference_seed(seed: u64, frame: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(frame + 1)
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let pool = config.detector.build_pool(config.workers)?;
        Self::with_pool(config, pool)
    }

    /// Uses an already-built detector pool instead of the configured one.
    pub fn with_pool(config: PipelineConfig, pool: DetectorPool) -> Result<Self> {
        config.validate()?;
        let state = PipelineState {
            next_frame: 0,
            tracker: Tracker::new(config.tracker.clone())?,
            tracks: BTreeMap::new(),
            ended: BTreeSet::new(),
            summary: RunSummary::default(),
        };
        Ok(Self {
            config,
            pool,
            state,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn pool(&self) -> &DetectorPool {
        &self.pool
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn summary(&self) -> &RunSummary {
        &self.state.summary
    }

    pub fn restore(&mut self, state: PipelineState) {
        self.state = state;
    }

    /// Processes frame `t`. Frames must arrive in order starting at 0. On
    /// error the state is left as it was before the call.
    pub fn process_frame(&mut self, t: u64, frame: &Image) -> Result<FrameOutput> {
        if t != self.state.next_frame {
            return Err(Error::OutOfOrder {
                expected: self.state.next_frame,
                got: t,
            });
        }
        let start = Instant::now();
        let mut next = self.state.clone();

        let calls_before = self.pool.calls();
        let detections = self.pool.with(|d| d.detect(frame))?;
        let detect_calls = self.pool.calls() - calls_before;
        let boxes: Vec<BBox> = detections.iter().map(|d| d.bbox).collect();
        let step = next.tracker.step(&boxes);

        let mut events = Vec::new();
        for &(track_id, _) in &step.born {
            events.push(TrackEvent::Born { frame: t, track_id });
        }
        for &track_id in &step.retired {
            next.tracks.remove(&track_id);
            next.ended.remove(&track_id);
            events.push(TrackEvent::Retired { frame: t, track_id });
        }

        let mut tasks: Vec<Task> = Vec::new();
        for &(track_id, d) in &step.matched {
            if let Some(prev) = self.state.tracks.get(&track_id) {
                tasks.push(Task {
                    track_id,
                    detection: &detections[d],
                    source: Source::Propagate(prev),
                });
            }
        }
        for &(track_id, d) in &step.born {
            tasks.push(Task {
                track_id,
                detection: &detections[d],
                source: Source::Bootstrap,
            });
        }
        tasks.sort_by_key(|task| task.track_id);

        let results: Vec<Result<TaskResult>> = tasks
            .par_iter()
            .map(|task| self.explain_object(t, frame, task))
            .collect();

        let mut objects = Vec::new();
        for result in results {
            match result? {
                TaskResult::Explained(out) => {
                    let track_id = out.track_id;
                    let thresholds = match next.tracks.get(&track_id) {
                        Some(prev) if !out.bootstrapped => {
                            let mut v = prev.thresholds.clone();
                            v.push(out.mask.threshold);
                            v
                        }
                        _ => vec![out.mask.threshold],
                    };
                    let bootstrap_frame = match next.tracks.get(&track_id) {
                        Some(prev) if !out.bootstrapped => prev.bootstrap_frame,
                        _ => t,
                    };
                    if out.bootstrapped {
                        next.summary.bootstraps += 1;
                        next.summary.tracks += 1;
                        events.push(TrackEvent::Bootstrap { frame: t, track_id });
                    }
                    if out.mask.fallback_used {
                        events.push(TrackEvent::Fallback { frame: t, track_id });
                    }
                    next.tracks.insert(
                        track_id,
                        TrackedExplanation {
                            track_id,
                            field: out.field.clone(),
                            mask: out.mask.clone(),
                            thresholds,
                            bootstrap_frame,
                            last_frame: t,
                            bbox: out.detection.bbox,
                        },
                    );
                    objects.push(*out);
                }
                TaskResult::MassLost { track_id, mass } => {
                    next.tracks.remove(&track_id);
                    next.ended.insert(track_id);
                    events.push(TrackEvent::MassLost {
                        frame: t,
                        track_id,
                        mass,
                    });
                }
            }
        }

        let wall_ms = if self.config.timing {
            millis(start)
        } else {
            0.0
        };
        next.next_frame = t + 1;
        next.summary.frames += 1;
        next.summary.detector_calls += self.pool.calls() - calls_before;
        next.summary.wall_ms_total += wall_ms;
        next.summary.wall_ms_per_frame = next.summary.wall_ms_total / next.summary.frames as f64;
        self.state = next;
        Ok(FrameOutput {
            frame: t,
            detections: detections.len(),
            objects,
            events,
            detect_calls,
            wall_ms,
        })
    }

    fn explain_object(&self, t: u64, frame: &Image, task: &Task) -> Result<TaskResult> {
        let cfg = &self.config;
        let target = task.detection;
        let start = Instant::now();
        let mut calls = CallBreakdown::default();

        let (field, prev_mask) = match &task.source {
            Source::Bootstrap => {
                let (field, n) = self
                    .counted(|d| drise_saliency(frame, target, d, &cfg.bootstrap, cfg.baseline));
                calls.bootstrap = n;
                (field?, None)
            }
            Source::Propagate(prev) => {
                let warp = ScaleTranslate::from_boxes(&prev.bbox, &target.bbox)?;
                match prev.field.warp(&warp, cfg.mass_floor) {
                    Ok(f) => (f, Some(&prev.mask)),
                    Err(Error::MassLost { mass, .. }) => {
                        return Ok(TaskResult::MassLost {
                            track_id: task.track_id,
                            mass,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        let (mask, n) = self.counted(|d| {
            explain(
                &field,
                d,
                frame,
                target,
                prev_mask,
                &cfg.search,
                cfg.baseline,
            )
        });
        calls.explain = n;
        let mask = mask?;
        let wall_ms = if cfg.timing { millis(start) } else { 0.0 };

        let mut report = MetricReport {
            frame: t,
            track_id: task.track_id,
            insertion: None,
            deletion: None,
            epg: None,
            ep: metrics::explanation_proportion(&mask),
            cc: None,
            ssim: None,
            ji: None,
            dc: None,
            detector_calls: calls.bootstrap + calls.explain,
            wall_ms,
        };
        if cfg.metrics.enabled {
            let (scores, n) = self.counted(|d| -> Result<_> {
                let ins =
                    metrics::insertion(frame, &field, d, target, cfg.metrics.steps, cfg.baseline);
                let del =
                    metrics::deletion(frame, &field, d, target, cfg.metrics.steps, cfg.baseline);
                Ok((optional_score(ins)?, optional_score(del)?))
            });
            calls.metrics = n;
            let (ins, del) = scores?;
            report.insertion = ins;
            report.deletion = del;
            report.epg = Some(metrics::epg(&field, &target.bbox)?);
        }
        let mut comparison = None;
        if cfg.compare_drise {
            let spec = MaskSpec {
                seed: reference_seed(cfg.bootstrap.seed, t),
                ..cfg.bootstrap.clone()
            };
            let (cmp, n) = self.counted(|d| -> Result<Option<Comparison>> {
                let reference = match drise_saliency(frame, target, d, &spec, cfg.baseline) {
                    Ok(f) => f,
                    Err(Error::ZeroMass) => return Ok(None),
                    Err(e) => return Err(e),
                };
                let reference_mask = explain(
                    &reference,
                    d,
                    frame,
                    target,
                    None,
                    &cfg.search,
                    cfg.baseline,
                )?;
                metrics::compare(&field, &reference, &mask, &reference_mask).map(Some)
            });
            calls.compare = n;
            comparison = cmp?;
            if let Some(c) = comparison {
                report.cc = Some(c.cc);
                report.ssim = Some(c.ssim);
                report.ji = Some(c.ji);
                report.dc = Some(c.dc);
            }
        }

        Ok(TaskResult::Explained(Box::new(ObjectOutput {
            track_id: task.track_id,
            detection: target.clone(),
            field,
            mask,
            bootstrapped: matches!(task.source, Source::Bootstrap),
            calls,
            comparison,
            report,
        })))
    }

    /// Runs `f` on a pooled detector handle and returns the images it
    /// evaluated.
    fn counted<R>(&self, f: impl FnOnce(&mut dyn Detector) -> R) -> (R, u64) {
        self.pool.with(|d| {
            let before = d.calls();
            let out = f(d);
            (out, d.calls() - before)
        })
    }
}

/// A curve that cannot be normalized is reported as absent.
fn optional_score(r: Result<(metrics::Curve, f64)>) -> Result<Option<f64>> {
    match r {
        Ok((_, auc)) => Ok(Some(auc)),
        Err(Error::ZeroFullImageScore) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn checkpoint_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_FILE)
}

fn write_checkpoint(out: &Path, state: &PipelineState) -> Result<()> {
    let tmp = out.join(format!("{CHECKPOINT_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec(state)?)?;
    fs::rename(tmp, checkpoint_path(out))?;
    Ok(())
}

pub fn read_checkpoint(out: &Path) -> Result<PipelineState> {
    let bytes = fs::read(checkpoint_path(out))
        .map_err(|e| Error::Config(format!("no checkpoint to resume from: {e}")))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Drives `pipeline` over `frames`, streaming artifacts into `out`.
///
/// With `resume`, state is restored from the checkpoint in `out` and frames
/// already processed are skipped. When the detector fails mid-run the state
/// at the last completed frame is checkpointed before the error is returned.
pub fn run(
    pipeline: &mut Pipeline,
    frames: FrameSource,
    out: &Path,
    resume: bool,
) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    if resume {
        pipeline.restore(read_checkpoint(out)?);
    }
    let skip = pipeline.state().next_frame;
    let mut writer = ArtifactWriter::create(out, &pipeline.config().output, resume)?;
    let mut seen = 0u64;
    for (t, frame) in frames.enumerate() {
        let t = t as u64;
        let frame = frame?;
        seen += 1;
        if t < skip {
            continue;
        }
        match pipeline.process_frame(t, &frame) {
            Ok(output) => writer.write_frame(&frame, &output)?,
            Err(e) => {
                if matches!(e, Error::DetectorUnavailable(_) | Error::Protocol(_)) {
                    writer.flush()?;
                    write_checkpoint(out, pipeline.state())?;
                }
                return Err(e);
            }
        }
    }
    if seen == 0 {
        return Err(Error::NoFrames(out.display().to_string()));
    }
    let summary = pipeline.summary().clone();
    writer.write_summary(&summary)?;
    let cp = checkpoint_path(out);
    if cp.exists() {
        fs::remove_file(cp)?;
    }
    Ok(summary)
}
