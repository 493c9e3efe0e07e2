use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::wire::{WireDetector, WireOptions};
use crate::detector::{
    toy_classes, Detector, DetectorPool, RectTarget, RectangleDetector, Rgb, BLACK,
};
use crate::drise::MaskSpec;
use crate::error::{Error, Result};
use crate::explain::SearchConfig;
use crate::metrics::DEFAULT_STEPS;
use crate::saliency::DEFAULT_MASS_FLOOR;
use crate::tracker::TrackerConfig;

/// Where detections come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorConfig {
    /// Built-in solid-color rectangle detector.
    Rectangle {
        #[serde(default = "default_targets")]
        targets: Vec<RectTarget>,
        #[serde(default = "toy_classes")]
        classes: Vec<String>,
    },
    /// Bridge process spoken to over stdio. Without `cmd` the command is
    /// read from the environment.
    Command {
        #[serde(default)]
        cmd: Option<String>,
        #[serde(default)]
        shared_file_dir: Option<PathBuf>,
    },
    /// Bridge listening on a TCP address.
    Tcp {
        addr: String,
        #[serde(default)]
        shared_file_dir: Option<PathBuf>,
    },
}

fn default_targets() -> Vec<RectTarget> {
    vec![RectTarget {
        color: [255, 0, 0],
        class_id: 0,
        expected_area: 192.0,
        theta: 0.5,
        tolerance: 64,
    }]
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::Rectangle {
            targets: default_targets(),
            classes: toy_classes(),
        }
    }
}

impl DetectorConfig {
    /// Parses a command-line selector: `synthetic:rectangle`, `cmd`,
    /// `cmd:<shell command>` or `tcp:<host:port>`. Selecting the rectangle
    /// detector keeps targets already configured.
    pub fn from_selector(selector: &str, current: &DetectorConfig) -> Result<Self> {
        match selector.split_once(':') {
            _ if selector == "cmd" => Ok(Self::Command {
                cmd: None,
                shared_file_dir: None,
            }),
            Some(("synthetic", "rectangle")) => Ok(match current {
                Self::Rectangle { .. } => current.clone(),
                _ => Self::default(),
            }),
            Some(("cmd", cmd)) if !cmd.trim().is_empty() => Ok(Self::Command {
                cmd: Some(cmd.to_string()),
                shared_file_dir: None,
            }),
            Some(("tcp", addr)) if !addr.is_empty() => Ok(Self::Tcp {
                addr: addr.to_string(),
                shared_file_dir: None,
            }),
            _ => Err(Error::Config(format!(
                "unknown detector selector {selector:?}"
            ))),
        }
    }

    /// Builds a pool of up to `size` handles. Remote detectors get a single
    /// connection since the bridge answers one request at a time.
    pub fn build_pool(&self, size: usize) -> Result<DetectorPool> {
        let handles: Vec<Box<dyn Detector>> = match self {
            Self::Rectangle { targets, classes } => {
                let det = RectangleDetector::new(targets.clone(), classes.clone())?;
                (0..size.max(1))
                    .map(|_| Box::new(det.clone()) as Box<dyn Detector>)
                    .collect()
            }
            Self::Command {
                cmd,
                shared_file_dir,
            } => {
                let opts = WireOptions {
                    shared_file_dir: shared_file_dir.clone(),
                };
                let det = match cmd {
                    Some(c) => WireDetector::spawn(c, opts)?,
                    None => WireDetector::from_env(opts)?,
                };
                vec![Box::new(det)]
            }
            Self::Tcp {
                addr,
                shared_file_dir,
            } => vec![Box::new(WireDetector::connect(
                addr,
                WireOptions {
                    shared_file_dir: shared_file_dir.clone(),
                },
            )?)],
        };
        DetectorPool::new(handles)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Insertion, deletion and pointing-game scores per object and frame.
    pub enabled: bool,
    pub steps: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            steps: DEFAULT_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub grids: bool,
    pub masks: bool,
    pub overlays: bool,
    /// Mirror the metric report as CSV next to the JSON lines.
    pub csv: bool,
    /// Metric report location; `report.jsonl` under the output directory
    /// when unset.
    pub report: Option<PathBuf>,
}

impl OutputConfig {
    pub fn all() -> Self {
        Self {
            grids: true,
            masks: true,
            overlays: true,
            csv: true,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub bootstrap: MaskSpec,
    pub search: SearchConfig,
    pub tracker: TrackerConfig,
    pub metrics: MetricsConfig,
    /// Color that occluded pixels are replaced with.
    pub baseline: Rgb,
    /// Also recompute the full saliency for every object on every frame and
    /// report how far the propagated result is from it.
    pub compare_drise: bool,
    pub output: OutputConfig,
    pub mass_floor: f64,
    /// Record wall-clock durations. Off makes reports reproducible byte for
    /// byte.
    pub timing: bool,
    /// Objects explained concurrently (and detector handles for built-in
    /// detectors).
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            bootstrap: MaskSpec::default(),
            search: SearchConfig::default(),
            tracker: TrackerConfig::default(),
            metrics: MetricsConfig::default(),
            baseline: BLACK,
            compare_drise: false,
            output: OutputConfig {
                grids: true,
                masks: true,
                ..OutputConfig::default()
            },
            mass_floor: DEFAULT_MASS_FLOOR,
            timing: true,
            workers: 4,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON document (`.json`) or TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        self.bootstrap.validate().map_err(config)?;
        self.search.validate().map_err(config)?;
        self.tracker.validate().map_err(config)?;
        if self.metrics.enabled && self.metrics.steps < 2 {
            return Err(Error::Config("metrics.steps must be at least 2".into()));
        }
        if !(self.mass_floor >= 0.0 && self.mass_floor.is_finite()) {
            return Err(Error::Config(
                "mass_floor must be a non-negative number".into(),
            ));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let DetectorConfig::Rectangle { targets, classes } = &self.detector {
            RectangleDetector::new(targets.clone(), classes.clone()).map_err(config)?;
        }
        Ok(())
    }
}
