//! Randomized-mask saliency for a single detection: each soft random mask
//! is weighted by how well the detector's output on the masked frame
//! matches the target detection vector, and the weighted masks are summed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectionVector, Detector, Image, Rgb};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::saliency::SaliencyField;

/// Masks evaluated per detector batch.
const MASK_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub n_masks: usize,
    /// Low-resolution grid as (rows, cols).
    pub grid: (usize, usize),
    /// Probability that a grid cell is kept.
    pub p: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            n_masks: 1000,
            grid: (4, 4),
            p: 0.5,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 {
            return Err(Error::InvalidSpec("n_masks must be at least 1".into()));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::InvalidSpec(
                "mask grid dimensions must be at least 1".into(),
            ));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "keep probability {} outside (0,1]",
                self.p
            )));
        }
        Ok(())
    }

    /// Applies a `masks=N,grid=RxC,p=P,seed=S` knob string on top of `self`.
    /// Keys may appear in any order and any subset.
    pub fn with_knobs(mut self, knobs: &str) -> Result<Self> {
        for part in knobs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bootstrap knob {part:?} lacks '='")))?;
            let bad = |what: &str| Error::Config(format!("bad {what} in bootstrap knob {part:?}"));
            match key {
                "masks" => self.n_masks = value.parse().map_err(|_| bad("count"))?,
                "grid" => {
                    let (r, c) = value.split_once(['x', 'X']).ok_or_else(|| bad("grid"))?;
                    self.grid = (
                        r.parse().map_err(|_| bad("grid"))?,
                        c.parse().map_err(|_| bad("grid"))?,
                    );
                }
                "p" => self.p = value.parse().map_err(|_| bad("probability"))?,
                "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
                _ => return Err(Error::Config(format!("unknown bootstrap knob {key:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// A full-resolution soft mask with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Builds mask number `index` of the sequence described by `spec`.
///
/// A `rows × cols` grid of Bernoulli(p) cells is bilinearly upsampled to
/// one cell larger than the frame in each direction, then cropped at a
/// random offset smaller than one cell.
pub fn generate_mask(spec: &MaskSpec, index: usize, width: usize, height: usize) -> Mask {
    let (rows, cols) = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let grid: Vec<f64> = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(spec.p.clamp(0.0, 1.0)) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let cell_w = width.div_ceil(cols).max(1);
    let cell_h = height.div_ceil(rows).max(1);
    let off_x = rng.random_range(0..cell_w);
    let off_y = rng.random_range(0..cell_h);
    let up_w = (cols + 1) * cell_w;
    let up_h = (rows + 1) * cell_h;

    // Half-pixel-center mapping from the upsampled canvas onto the grid,
    // replicating the edge cells.
    let axis = |i: usize, n_grid: usize, n_up: usize| -> (usize, usize, f64) {
        let s =
            ((i as f64 + 0.5) * n_grid as f64 / n_up as f64 - 0.5).clamp(0.0, (n_grid - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_grid - 1);
        (lo, hi, s - lo as f64)
    };
    let xs: Vec<_> = (off_x..off_x + width)
        .map(|x| axis(x, cols, up_w))
        .collect();
    let mut values = Vec::with_capacity(width * height);
    for y in off_y..off_y + height {
        let (r0, r1, fy) = axis(y, rows, up_h);
        for &(c0, c1, fx) in &xs {
            let top = grid[r0 * cols + c0] * (1.0 - fx) + grid[r0 * cols + c1] * fx;
            let bottom = grid[r1 * cols + c0] * (1.0 - fx) + grid[r1 * cols + c1] * fx;
            values.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Mask {
        width,
        height,
        values,
    }
}

pub fn generate_masks(spec: &MaskSpec, width: usize, height: usize) -> Vec<Mask> {
    (0..spec.n_masks)
        .into_par_iter()
        .map(|i| generate_mask(spec, i, width, height))
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Best match of `target` among `proposals`:
/// `max IoU × cosine(class probabilities) × objectness`.
pub fn detection_similarity(target: &DetectionVector, proposals: &[DetectionVector]) -> f64 {
    proposals
        .iter()
        .map(|p| {
            iou(&target.bbox, &p.bbox) * cosine(&target.class_probs, &p.class_probs) * p.objectness
        })
        .fold(0.0, f64::max)
        .clamp(0.0, 1.0)
}

/// Saliency field and the per-mask weights that produced it.
#[derive(Debug, Clone)]
pub struct DriseOutput {
    pub field: SaliencyField,
    pub weights: Vec<f64>,
}

pub fn drise_saliency(
    img: &Image,
    target: &DetectionVector,
    detector: &mut dyn Detector,
    spec: &MaskSpec,
    baseline: Rgb,
) -> Result<SaliencyField> {
    drise_with_weights(img, target, detector, spec, baseline).map(|o| o.field)
}

pub fn drise_with_weights(
    img: &Image,
    target: &DetectionVector,
    detector: &mut dyn Detector,
    spec: &MaskSpec,
    baseline: Rgb,
) -> Result<DriseOutput> {
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    let mut sum = vec![0.0f64; w * h];
    let mut weights = Vec::with_capacity(spec.n_masks);

    let mut start = 0;
    while start < spec.n_masks {
        let end = (start + MASK_BATCH).min(spec.n_masks);
        let masks: Vec<Mask> = (start..end)
            .into_par_iter()
            .map(|i| generate_mask(spec, i, w, h))
            .collect();
        let masked: Vec<Image> = masks
            .par_iter()
            .map(|m| img.attenuate(&m.values, baseline))
            .collect();
        let outputs = detector.detect_batch(&masked)?;
        let batch_weights: Vec<f64> = outputs
            .iter()
            .map(|dets| detection_similarity(target, dets))
            .collect();
        // Row-parallel, mask-sequential accumulation keeps the sum order fixed.
        sum.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (m, &wt) in masks.iter().zip(&batch_weights) {
                if wt == 0.0 {
                    continue;
                }
                let src = &m.values[y * w..(y + 1) * w];
                for (acc, &v) in row.iter_mut().zip(src) {
                    *acc += wt * v as f64;
                }
            }
        });
        weights.extend(batch_weights);
        start = end;
    }

    let field = SaliencyField::new(w, h, sum)?.normalize()?;
    Ok(DriseOutput { field, weights })
}
