use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::OutputConfig;
use super::overlay::render_overlay;
use super::{FrameOutput, RunSummary};
use crate::detector::{DetectionVector, Image};
use crate::error::Result;
use crate::explain::write_mask;
use crate::metrics::CSV_HEADER;
use crate::saliency::write_grid;

/// Lifecycle notes written to `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackEvent {
    Born {
        frame: u64,
        track_id: u64,
    },
    Bootstrap {
        frame: u64,
        track_id: u64,
    },
    Fallback {
        frame: u64,
        track_id: u64,
    },
    MassLost {
        frame: u64,
        track_id: u64,
        mass: f64,
    },
    Retired {
        frame: u64,
        track_id: u64,
    },
}

/// Detector output an explanation was computed for, one line per (frame,
/// track) in `detections.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: u64,
    pub track_id: u64,
    pub detection: DetectionVector,
}

/// Streams per-frame outputs to disk as they are produced.
///
/// Layout under the output directory: `grids/` and `masks/` hold one file
/// pair per (frame, track) named `f<frame>_t<track>`, `overlays/` one PNG
/// per (frame, track), plus `report.jsonl`, `detections.jsonl`,
/// `events.jsonl` and `summary.json`.
pub struct ArtifactWriter {
    root: PathBuf,
    cfg: OutputConfig,
    report: BufWriter<File>,
    csv: Option<BufWriter<File>>,
    events: BufWriter<File>,
    detections: BufWriter<File>,
}

fn open(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    Ok(BufWriter::new(file))
}

pub fn artifact_stem(frame: u64, track_id: u64) -> String {
    format!("f{frame:05}_t{track_id:04}")
}

impl ArtifactWriter {
    /// Creates (or with `append`, continues) the output streams in `root`.
    pub fn create(root: &Path, cfg: &OutputConfig, append: bool) -> Result<Self> {
        fs::create_dir_all(root)?;
        for (enabled, dir) in [
            (cfg.grids, "grids"),
            (cfg.masks, "masks"),
            (cfg.overlays, "overlays"),
        ] {
            if enabled {
                fs::create_dir_all(root.join(dir))?;
            }
        }
        let report_path = cfg
            .report
            .clone()
            .unwrap_or_else(|| root.join("report.jsonl"));
        if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let csv = if cfg.csv {
            let path = report_path.with_extension("csv");
            let fresh = !append || !path.exists();
            let mut w = open(&path, append)?;
            if fresh {
                writeln!(w, "{CSV_HEADER}")?;
            }
            Some(w)
        } else {
            None
        };
        Ok(Self {
            root: root.to_path_buf(),
            cfg: cfg.clone(),
            report: open(&report_path, append)?,
            csv,
            events: open(&root.join("events.jsonl"), append)?,
            detections: open(&root.join("detections.jsonl"), append)?,
        })
    }

    pub fn write_frame(&mut self, frame: &Image, out: &FrameOutput) -> Result<()> {
        for obj in &out.objects {
            let stem = artifact_stem(out.frame, obj.track_id);
            if self.cfg.grids {
                write_grid(
                    &self.root.join("grids").join(&stem),
                    &obj.field,
                    out.frame,
                    obj.track_id,
                )?;
            }
            if self.cfg.masks {
                write_mask(
                    &self.root.join("masks").join(&stem),
                    &obj.mask,
                    out.frame,
                    obj.track_id,
                )?;
            }
            if self.cfg.overlays {
                render_overlay(frame, &obj.field, &obj.mask, &obj.detection.bbox)
                    .save_png(&self.root.join("overlays").join(format!("{stem}.png")))?;
            }
            self.report
                .write_all(obj.report.to_json_line()?.as_bytes())?;
            let record = DetectionRecord {
                frame: out.frame,
                track_id: obj.track_id,
                detection: obj.detection.clone(),
            };
            serde_json::to_writer(&mut self.detections, &record)?;
            self.detections.write_all(b"\n")?;
            if let Some(csv) = &mut self.csv {
                csv.write_all(obj.report.to_csv_row().as_bytes())?;
            }
        }
        for event in &out.events {
            serde_json::to_writer(&mut self.events, event)?;
            self.events.write_all(b"\n")?;
        }
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.report.flush()?;
        self.events.flush()?;
        self.detections.flush()?;
        if let Some(csv) = &mut self.csv {
            csv.flush()?;
        }
        Ok(())
    }

    pub fn write_summary(&mut self, summary: &RunSummary) -> Result<()> {
        self.flush()?;
        fs::write(
            self.root.join("summary.json"),
            serde_json::to_vec_pretty(summary)?,
        )?;
        Ok(())
    }
}

/// Reads `detections.jsonl` from an output directory.
pub fn read_detections(root: &Path) -> Result<Vec<DetectionRecord>> {
    let text = fs::read_to_string(root.join("detections.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
