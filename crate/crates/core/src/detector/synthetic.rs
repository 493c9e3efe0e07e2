//! Deterministic detectors with closed-form behavior, used as test oracles
//! and as the built-in `synthetic:rectangle` detector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_batch, DetectionVector, Detector, Image, Rgb};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::saliency::SaliencyField;

/// Probability mass spread evenly over all classes of a synthetic detection.
pub const LABEL_SMOOTHING: f64 = 0.1;

/// The 4-class vocabulary used by synthetic detectors.
pub fn toy_classes() -> Vec<String> {
    ["car", "pedestrian", "cyclist", "sign"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn smoothed_one_hot(class_id: usize, n: usize) -> Vec<f64> {
    let base = LABEL_SMOOTHING / n as f64;
    let mut probs = vec![base; n];
    probs[class_id] = 1.0 - LABEL_SMOOTHING + base;
    probs
}

/// A solid-colored target the rectangle detector looks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectTarget {
    pub color: Rgb,
    pub class_id: usize,
    /// Pixel area of the fully visible rectangle.
    pub expected_area: f64,
    /// Minimum visible fraction for the detector to fire.
    pub theta: f64,
    /// Largest per-channel deviation still counted as the target color.
    #[serde(default)]
    pub tolerance: u8,
}

/// Fires once per target whose matching pixels cover at least `theta` of the
/// expected area; the box is the tight box of the matching pixels.
#[derive(Debug, Clone)]
pub struct RectangleDetector {
    targets: Vec<RectTarget>,
    classes: Vec<String>,
}

impl RectangleDetector {
    pub fn new(targets: Vec<RectTarget>, classes: Vec<String>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidSpec(
                "rectangle detector needs a target".into(),
            ));
        }
        for t in &targets {
            if !(t.theta > 0.0 && t.theta <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "theta {} outside (0,1]",
                    t.theta
                )));
            }
            if t.expected_area.is_nan() || t.expected_area <= 0.0 {
                return Err(Error::InvalidSpec("expected area must be positive".into()));
            }
            if t.class_id >= classes.len() {
                return Err(Error::InvalidSpec(format!(
                    "class id {} outside a {}-class vocabulary",
                    t.class_id,
                    classes.len()
                )));
            }
        }
        Ok(Self { targets, classes })
    }

    pub fn targets(&self) -> &[RectTarget] {
        &self.targets
    }

    fn scan(&self, img: &Image) -> Vec<DetectionVector> {
        self.targets
            .iter()
            .filter_map(|t| self.scan_target(img, t))
            .collect()
    }

    fn scan_target(&self, img: &Image, t: &RectTarget) -> Option<DetectionVector> {
        let mut count = 0usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, px) in img.pixels().enumerate() {
            let matches = px
                .iter()
                .zip(t.color)
                .all(|(a, b)| a.abs_diff(b) <= t.tolerance);
            if matches {
                let (x, y) = (i % img.width(), i / img.width());
                count += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        let visibility = count as f64 / t.expected_area;
        if count == 0 || visibility < t.theta {
            return None;
        }
        let bbox = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).ok()?;
        DetectionVector::new(
            bbox,
            visibility.min(1.0),
            smoothed_one_hot(t.class_id, self.classes.len()),
        )
        .ok()
    }
}

impl Detector for RectangleDetector {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>> {
        Ok(self.scan(img))
    }

    fn detect_batch(&mut self, imgs: &[Image]) -> Result<Vec<Vec<DetectionVector>>> {
        check_batch(imgs)?;
        let this = &*self;
        Ok(imgs.par_iter().map(|img| this.scan(img)).collect())
    }
}

/// Fires with a fixed detection iff at least `k` designated pixels are
/// non-black. Monotone in the set of revealed pixels by construction.
#[derive(Debug, Clone)]
pub struct TopKPixelDetector {
    pixels: Vec<(usize, usize)>,
    k: usize,
    detection: DetectionVector,
    classes: Vec<String>,
}

impl TopKPixelDetector {
    pub fn new(
        pixels: Vec<(usize, usize)>,
        k: usize,
        bbox: BBox,
        class_id: usize,
        classes: Vec<String>,
    ) -> Result<Self> {
        if k == 0 || k > pixels.len() {
            return Err(Error::InvalidSpec(format!(
                "k = {k} must be in 1..={}",
                pixels.len()
            )));
        }
        if class_id >= classes.len() {
            return Err(Error::InvalidSpec(format!(
                "class id {class_id} out of range"
            )));
        }
        let detection = DetectionVector::new(bbox, 1.0, smoothed_one_hot(class_id, classes.len()))?;
        Ok(Self {
            pixels,
            k,
            detection,
            classes,
        })
    }

    /// Designates every pixel with positive ground-truth saliency.
    pub fn from_ground_truth(
        truth: &SaliencyField,
        k: usize,
        bbox: BBox,
        class_id: usize,
        classes: Vec<String>,
    ) -> Result<Self> {
        let pixels = (0..truth.height())
            .flat_map(|y| (0..truth.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| truth.get(x, y) > 0.0)
            .collect();
        Self::new(pixels, k, bbox, class_id, classes)
    }

    pub fn detection(&self) -> &DetectionVector {
        &self.detection
    }

    pub fn designated(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn revealed(&self, img: &Image) -> usize {
        self.pixels
            .iter()
            .filter(|&&(x, y)| x < img.width() && y < img.height() && img.pixel(x, y) != [0, 0, 0])
            .count()
    }
}

impl Detector for TopKPixelDetector {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>> {
        if self.revealed(img) >= self.k {
            Ok(vec![self.detection.clone()])
        } else {
            Ok(Vec::new())
        }
    }
}
