//! Sufficient explanations from a saliency field: the set of pixels at or
//! above a threshold, with the threshold picked by binary search over an
//! evenly spaced grid of levels.
//!
//! Revealing more pixels never makes a monotone detector stop firing, so
//! sufficiency is true on a prefix of the ascending level grid and the
//! search looks for the last level of that prefix.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionVector, Detector, Image, Rgb};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::saliency::SaliencyField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Levels in the first-frame search space.
    pub levels_initial: usize,
    /// Levels in the search space of later frames.
    pub levels_next: usize,
    /// Relative margin around the previous threshold on later frames.
    pub delta: f64,
    /// IoU with the original box required for a detection to count.
    pub iou_match: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            levels_initial: 32,
            levels_next: 8,
            delta: 0.1,
            iou_match: 0.5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels_initial < 2 || self.levels_next < 2 {
            return Err(Error::InvalidSpec(
                "search spaces need at least 2 levels".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "margin {} must be positive",
                self.delta
            )));
        }
        if !(self.iou_match > 0.0 && self.iou_match < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "iou_match {} outside (0,1)",
                self.iou_match
            )));
        }
        Ok(())
    }
}

/// Boolean pixel mask plus the threshold and verdicts that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub threshold: f64,
    pub sufficient: bool,
    pub fallback_used: bool,
}

impl ExplanationMask {
    /// Pixels with saliency at or above `threshold`.
    pub fn from_threshold(field: &SaliencyField, threshold: f64) -> Self {
        Self {
            width: field.width(),
            height: field.height(),
            bits: field.values().iter().map(|v| *v >= threshold).collect(),
            threshold,
            sufficient: false,
            fallback_used: false,
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
            threshold: 0.0,
            sufficient: false,
            fallback_used: false,
        })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// One bit per pixel, least significant bit first, each row padded to
    /// a whole byte.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let stride = self.width.div_ceil(8);
        let mut out = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out[y * stride + x / 8] |= 1 << (x % 8);
                }
            }
        }
        out
    }

    pub fn from_packed_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let stride = width.div_ceil(8);
        if bytes.len() != stride * height {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a packed {width}x{height} mask",
                bytes.len()
            )));
        }
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| bytes[y * stride + x / 8] & (1 << (x % 8)) != 0)
            .collect();
        Self::from_bits(width, height, bits)
    }
}

/// JSON sidecar for a packed mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub width: usize,
    pub height: usize,
    pub threshold: f64,
    pub sufficient: bool,
    pub fallback_used: bool,
    pub frame_index: u64,
    pub track_id: u64,
}

pub fn mask_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bits"), stem.with_extension("json"))
}

pub fn write_mask(
    stem: &Path,
    mask: &ExplanationMask,
    frame_index: u64,
    track_id: u64,
) -> Result<()> {
    let (bin, meta) = mask_paths(stem);
    fs::write(bin, mask.to_packed_bytes())?;
    let sidecar = MaskSidecar {
        width: mask.width,
        height: mask.height,
        threshold: mask.threshold,
        sufficient: mask.sufficient,
        fallback_used: mask.fallback_used,
        frame_index,
        track_id,
    };
    fs::write(meta, serde_json::to_vec(&sidecar)?)?;
    Ok(())
}

pub fn read_mask(stem: &Path) -> Result<(ExplanationMask, MaskSidecar)> {
    let (bin, meta) = mask_paths(stem);
    let sidecar: MaskSidecar = serde_json::from_slice(&fs::read(meta)?)?;
    let mut mask =
        ExplanationMask::from_packed_bytes(sidecar.width, sidecar.height, &fs::read(bin)?)?;
    mask.threshold = sidecar.threshold;
    mask.sufficient = sidecar.sufficient;
    mask.fallback_used = sidecar.fallback_used;
    Ok((mask, sidecar))
}

/// `n` evenly spaced values from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let mut v: Vec<f64> = (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect();
            v[n - 1] = hi;
            v
        }
    }
}

/// Whether `detections` still contain the target: same label and enough
/// box overlap.
pub fn matches_target(
    target: &DetectionVector,
    detections: &[DetectionVector],
    iou_match: f64,
) -> bool {
    detections
        .iter()
        .any(|d| d.label == target.label && iou(&d.bbox, &target.bbox) >= iou_match)
}

fn check_bits(
    keep: &[bool],
    img: &Image,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    cfg: &SearchConfig,
    baseline: Rgb,
) -> Result<bool> {
    let masked = img.occlude(keep, baseline);
    let dets = detector.detect(&masked)?;
    Ok(matches_target(target, &dets, cfg.iou_match))
}

/// Runs the detector on `img` with every pixel below `threshold` occluded.
pub fn sufficiency_check(
    field: &SaliencyField,
    threshold: f64,
    img: &Image,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    cfg: &SearchConfig,
    baseline: Rgb,
) -> Result<bool> {
    if field.width() != img.width() || field.height() != img.height() {
        return Err(Error::DimensionMismatch(
            "field and frame differ in size".into(),
        ));
    }
    let keep = ExplanationMask::from_threshold(field, threshold).bits;
    check_bits(&keep, img, detector, target, cfg, baseline)
}

/// Largest index into ascending `levels` whose check passes, assuming the
/// checks pass on a prefix. Uses at most `⌈log₂(n + 1)⌉` checks, and the
/// returned level is always one that was actually checked.
pub fn binary_search_threshold(
    levels: &[f64],
    mut check: impl FnMut(f64) -> Result<bool>,
) -> Result<(usize, f64)> {
    let (mut lo, mut hi) = (0usize, levels.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if check(levels[mid])? {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    if lo == 0 {
        return Err(Error::NoSufficientLevel);
    }
    Ok((lo - 1, levels[lo - 1]))
}

/// Search space for a field: the full value range on a track's first
/// frame, a window around the previous threshold afterwards.
pub fn search_levels(
    field: &SaliencyField,
    prev_threshold: Option<f64>,
    cfg: &SearchConfig,
) -> Vec<f64> {
    let (min, max) = (field.min(), field.max());
    match prev_threshold {
        None => linspace(min, max, cfg.levels_initial),
        Some(thr) => {
            let (lo, hi) = if thr == 0.0 {
                let half = cfg.delta * (max - min);
                (thr - half, thr + half)
            } else {
                (thr * (1.0 - cfg.delta), thr * (1.0 + cfg.delta))
            };
            linspace(lo.clamp(min, max), hi.clamp(min, max), cfg.levels_next)
        }
    }
}

/// Extracts a sufficient explanation for `target` on `img`.
///
/// With no previous mask this is a track's first frame: the search spans
/// the whole field and its lowest level reveals everything, so a
/// deterministic detector always yields a sufficient mask. With a previous
/// mask the search is confined to a window around its threshold; if no
/// level in the window suffices, the previous mask is reused as is and
/// re-checked on this frame.
pub fn explain(
    field: &SaliencyField,
    detector: &mut dyn Detector,
    img: &Image,
    target: &DetectionVector,
    prev: Option<&ExplanationMask>,
    cfg: &SearchConfig,
    baseline: Rgb,
) -> Result<ExplanationMask> {
    cfg.validate()?;
    if field.width() != img.width() || field.height() != img.height() {
        return Err(Error::DimensionMismatch(
            "field and frame differ in size".into(),
        ));
    }
    let levels = search_levels(field, prev.map(|p| p.threshold), cfg);
    let found = binary_search_threshold(&levels, |thr| {
        sufficiency_check(field, thr, img, detector, target, cfg, baseline)
    });
    match (found, prev) {
        (Ok((_, thr)), _) => {
            let mut mask = ExplanationMask::from_threshold(field, thr);
            mask.sufficient = true;
            Ok(mask)
        }
        (Err(Error::NoSufficientLevel), Some(prev)) => {
            if prev.bits.len() != field.len() {
                return Err(Error::DimensionMismatch(
                    "previous mask differs in size".into(),
                ));
            }
            let sufficient = check_bits(&prev.bits, img, detector, target, cfg, baseline)?;
            Ok(ExplanationMask {
                sufficient,
                fallback_used: true,
                ..prev.clone()
            })
        }
        (Err(Error::NoSufficientLevel), None) => {
            // Only reachable with a detector that does not reproduce its own
            // detection on the unmodified frame.
            Ok(ExplanationMask::from_threshold(field, levels[0]))
        }
        (Err(e), _) => Err(e),
    }
}
