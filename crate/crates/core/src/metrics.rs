//! Evaluation metrics: insertion/deletion curves, the energy-based
//! pointing game, explanation proportion, and similarity scores between
//! pairs of saliency fields or explanation masks.

use serde::{Deserialize, Serialize};

use crate::detector::{DetectionVector, Detector, Image, Rgb};
use crate::error::{Error, Result};
use crate::explain::ExplanationMask;
use crate::geometry::{iou, BBox};
use crate::saliency::SaliencyField;

pub const DEFAULT_STEPS: usize = 100;

/// Images scored per batched detector call while tracing a curve.
const CURVE_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Curve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }
}

/// Detector score for `target` on a set of detections: the best class
/// probability for the target label, discounted by box overlap.
pub fn target_score(target: &DetectionVector, detections: &[DetectionVector]) -> f64 {
    detections
        .iter()
        .map(|d| d.prob(target.label) * iou(&d.bbox, &target.bbox))
        .fold(0.0, f64::max)
}

/// Pixel indices by descending saliency, ties by row-major index.
pub fn saliency_ranking(field: &SaliencyField) -> Vec<usize> {
    let v = field.values();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Insert,
    Delete,
}

fn trace(
    img: &Image,
    field: &SaliencyField,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    steps: usize,
    baseline: Rgb,
    dir: Direction,
) -> Result<(Curve, f64)> {
    if steps < 2 {
        return Err(Error::InvalidSpec(format!(
            "curve needs at least 2 steps, got {steps}"
        )));
    }
    if field.width() != img.width() || field.height() != img.height() {
        return Err(Error::DimensionMismatch(
            "field and frame differ in size".into(),
        ));
    }
    let full = target_score(target, &detector.detect(img)?);
    if full <= 0.0 {
        return Err(Error::ZeroFullImageScore);
    }
    let order = saliency_ranking(field);
    let n = order.len();
    // Changed-pixel count at step i; the rank prefix is revealed on
    // insertion and removed on deletion.
    let counts: Vec<usize> = (0..=steps).map(|i| i * n / steps).collect();
    let keep_for = |changed: usize| {
        let mut keep = vec![dir == Direction::Delete; n];
        for &p in &order[..changed] {
            keep[p] = dir == Direction::Insert;
        }
        keep
    };
    let untouched = match dir {
        Direction::Insert => steps,
        Direction::Delete => 0,
    };

    let mut raw = vec![full; steps + 1];
    let pending: Vec<usize> = (0..=steps).filter(|&i| i != untouched).collect();
    for chunk in pending.chunks(CURVE_BATCH) {
        let images: Vec<Image> = chunk
            .iter()
            .map(|&i| img.occlude(&keep_for(counts[i]), baseline))
            .collect();
        for (&i, dets) in chunk.iter().zip(detector.detect_batch(&images)?) {
            raw[i] = target_score(target, &dets);
        }
    }
    let curve = Curve {
        xs: (0..=steps).map(|i| i as f64 / steps as f64).collect(),
        ys: raw.iter().map(|s| s / full).collect(),
    };
    let auc = curve.auc();
    Ok((curve, auc))
}

/// Reveals pixels over the baseline in descending saliency order.
pub fn insertion(
    img: &Image,
    field: &SaliencyField,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    steps: usize,
    baseline: Rgb,
) -> Result<(Curve, f64)> {
    trace(
        img,
        field,
        detector,
        target,
        steps,
        baseline,
        Direction::Insert,
    )
}

/// Removes pixels from the full frame in descending saliency order.
pub fn deletion(
    img: &Image,
    field: &SaliencyField,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    steps: usize,
    baseline: Rgb,
) -> Result<(Curve, f64)> {
    trace(
        img,
        field,
        detector,
        target,
        steps,
        baseline,
        Direction::Delete,
    )
}

/// Fraction of the field's mass inside `bbox`.
pub fn epg(field: &SaliencyField, bbox: &BBox) -> Result<f64> {
    let total = field.total_mass();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok((field.mass_in_box(bbox) / total).clamp(0.0, 1.0))
}

/// Fraction of the frame covered by the explanation.
pub fn explanation_proportion(mask: &ExplanationMask) -> f64 {
    if mask.bits.is_empty() {
        return 0.0;
    }
    mask.count() as f64 / mask.bits.len() as f64
}

fn same_dims(a: &SaliencyField, b: &SaliencyField) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Pearson correlation of the flattened fields.
pub fn pearson_cc(a: &SaliencyField, b: &SaliencyField) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.len() as f64;
    let ma = a.values().iter().sum::<f64>() / n;
    let mb = b.values().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantField);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Separable Gaussian filter over every fully contained window.
fn filter_valid(v: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * v[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all 11×11 Gaussian windows that fit
/// inside the fields. The dynamic range is taken from the data.
pub fn ssim(a: &SaliencyField, b: &SaliencyField) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let range = a.max().max(b.max()) - a.min().min(b.min());
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let taps = gaussian_taps();
    let (x, y) = (a.values(), b.values());
    let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..x.len()).map(f).collect() };
    let ux = filter_valid(x, w, h, &taps);
    let uy = filter_valid(y, w, h, &taps);
    let uxx = filter_valid(&prod(&|i| x[i] * x[i]), w, h, &taps);
    let uyy = filter_valid(&prod(&|i| y[i] * y[i]), w, h, &taps);
    let uxy = filter_valid(&prod(&|i| x[i] * y[i]), w, h, &taps);
    let total: f64 = (0..ux.len())
        .map(|i| {
            let (mx, my) = (ux[i], uy[i]);
            let vx = uxx[i] - mx * mx;
            let vy = uyy[i] - my * my;
            let vxy = uxy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / ux.len() as f64)
}

fn overlap(a: &ExplanationMask, b: &ExplanationMask) -> Result<(usize, usize, usize)> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{} masks",
            a.width, a.height, b.width, b.height
        )));
    }
    let inter = a
        .bits
        .iter()
        .zip(&b.bits)
        .filter(|(x, y)| **x && **y)
        .count();
    Ok((inter, a.count(), b.count()))
}

/// Intersection over union of two masks; 1 when both are empty.
pub fn jaccard(a: &ExplanationMask, b: &ExplanationMask) -> Result<f64> {
    let (inter, na, nb) = overlap(a, b)?;
    let union = na + nb - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Dice coefficient of two masks; 1 when both are empty.
pub fn dice(a: &ExplanationMask, b: &ExplanationMask) -> Result<f64> {
    let (inter, na, nb) = overlap(a, b)?;
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    })
}

/// Similarity between an incrementally propagated result and a freshly
/// recomputed one for the same frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cc: f64,
    pub ssim: f64,
    pub ji: f64,
    pub dc: f64,
}

pub fn compare(
    field: &SaliencyField,
    reference: &SaliencyField,
    mask: &ExplanationMask,
    reference_mask: &ExplanationMask,
) -> Result<Comparison> {
    Ok(Comparison {
        cc: pearson_cc(field, reference)?,
        ssim: ssim(field, reference)?,
        ji: jaccard(mask, reference_mask)?,
        dc: dice(mask, reference_mask)?,
    })
}

/// One line of the per-(frame, track) metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame: u64,
    pub track_id: u64,
    pub insertion: Option<f64>,
    pub deletion: Option<f64>,
    pub epg: Option<f64>,
    pub ep: f64,
    pub cc: Option<f64>,
    pub ssim: Option<f64>,
    pub ji: Option<f64>,
    pub dc: Option<f64>,
    pub detector_calls: u64,
    pub wall_ms: f64,
}

impl MetricReport {
    pub fn to_json_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub const CSV_HEADER: &str =
    "frame,track_id,insertion,deletion,epg,ep,cc,ssim,ji,dc,detector_calls,wall_ms";

impl MetricReport {
    /// CSV row matching [`CSV_HEADER`]; absent values are left empty.
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.frame,
            self.track_id,
            opt(self.insertion),
            opt(self.deletion),
            opt(self.epg),
            self.ep,
            opt(self.cc),
            opt(self.ssim),
            opt(self.ji),
            opt(self.dc),
            self.detector_calls,
            self.wall_ms
        )
    }
}
