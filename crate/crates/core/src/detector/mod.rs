//! The black-box detector contract and the pieces around it: frames,
//! detection vectors, call accounting, and a pool for concurrent callers.

mod synthetic;
pub mod wire;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use synthetic::{
    toy_classes, RectTarget, RectangleDetector, TopKPixelDetector, LABEL_SMOOTHING,
};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type Rgb = [u8; 3];

/// Occlusion baseline used when none is configured.
pub const BLACK: Rgb = [0, 0, 0];

/// Row-major 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let data = color
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn pixels(&self) -> impl Iterator<Item = Rgb> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Keeps pixels where `keep[i]` holds; the rest become `baseline`.
    pub fn occlude(&self, keep: &[bool], baseline: Rgb) -> Image {
        debug_assert_eq!(keep.len(), self.pixel_count());
        let mut data = self.data.clone();
        for (px, &k) in data.chunks_exact_mut(3).zip(keep) {
            if !k {
                px.copy_from_slice(&baseline);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Blends each pixel toward `baseline` by its soft mask weight
    /// (weight 1 keeps the pixel, weight 0 replaces it).
    pub fn attenuate(&self, weights: &[f32], baseline: Rgb) -> Image {
        debug_assert_eq!(weights.len(), self.pixel_count());
        let mut data = Vec::with_capacity(self.data.len());
        for (px, &w) in self.data.chunks_exact(3).zip(weights) {
            let w = w as f64;
            for (c, b) in px.iter().zip(baseline) {
                let v = b as f64 + (*c as f64 - b as f64) * w;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn open(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Image::new(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .ok_or_else(|| Error::Image("buffer does not match dimensions".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// One detector output: box, objectness and per-class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVector {
    pub bbox: BBox,
    pub objectness: f64,
    pub class_probs: Vec<f64>,
    pub label: usize,
}

impl DetectionVector {
    pub fn new(bbox: BBox, objectness: f64, class_probs: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&objectness) {
            return Err(Error::InvalidSpec(format!(
                "objectness {objectness} outside [0,1]"
            )));
        }
        if class_probs.is_empty() || class_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSpec(format!(
                "class probabilities must be non-empty and in [0,1]: {class_probs:?}"
            )));
        }
        let label = argmax(&class_probs);
        Ok(Self {
            bbox,
            objectness,
            class_probs,
            label,
        })
    }

    /// Probability assigned to `label`, zero when out of range.
    pub fn prob(&self, label: usize) -> f64 {
        self.class_probs.get(label).copied().unwrap_or(0.0)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// A black-box object detector. One caller at a time per handle.
pub trait Detector: Send {
    /// Class vocabulary; every `class_probs` vector has this length.
    fn classes(&self) -> &[String];

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>>;

    fn detect_batch(&mut self, imgs: &[Image]) -> Result<Vec<Vec<DetectionVector>>> {
        check_batch(imgs)?;
        imgs.iter().map(|img| self.detect(img)).collect()
    }
}

impl<D: Detector + ?Sized> Detector for Box<D> {
    fn classes(&self) -> &[String] {
        (**self).classes()
    }

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>> {
        (**self).detect(img)
    }

    fn detect_batch(&mut self, imgs: &[Image]) -> Result<Vec<Vec<DetectionVector>>> {
        (**self).detect_batch(imgs)
    }
}

pub(crate) fn check_batch(imgs: &[Image]) -> Result<()> {
    let first = imgs
        .first()
        .ok_or_else(|| Error::InvalidSpec("empty detection batch".into()))?;
    if imgs
        .iter()
        .any(|i| i.width != first.width || i.height != first.height)
    {
        return Err(Error::DimensionMismatch(
            "batch images differ in size".into(),
        ));
    }
    Ok(())
}

/// Per-handle call accounting. `calls` counts images evaluated, which is
/// also the number of request/response round trips for remote detectors.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DetectorCallLog {
    pub calls: u64,
    pub batch_sizes: Vec<usize>,
    pub durations: Vec<Duration>,
}

impl DetectorCallLog {
    fn record(&mut self, batch: usize, elapsed: Duration) {
        self.calls += batch as u64;
        self.batch_sizes.push(batch);
        self.durations.push(elapsed);
    }

    pub fn total_wall(&self) -> Duration {
        self.durations.iter().sum()
    }

    fn merge(&mut self, other: &DetectorCallLog) {
        self.calls += other.calls;
        self.batch_sizes.extend_from_slice(&other.batch_sizes);
        self.durations.extend_from_slice(&other.durations);
    }
}

/// Wraps a detector and records every call.
pub struct LoggedDetector {
    inner: Box<dyn Detector>,
    log: DetectorCallLog,
}

impl LoggedDetector {
    pub fn new(inner: Box<dyn Detector>) -> Self {
        Self {
            inner,
            log: DetectorCallLog::default(),
        }
    }

    pub fn log(&self) -> &DetectorCallLog {
        &self.log
    }

    pub fn calls(&self) -> u64 {
        self.log.calls
    }
}

impl Detector for LoggedDetector {
    fn classes(&self) -> &[String] {
        self.inner.classes()
    }

    fn detect(&mut self, img: &Image) -> Result<Vec<DetectionVector>> {
        let start = Instant::now();
        let out = self.inner.detect(img);
        self.log.record(1, start.elapsed());
        out
    }

    fn detect_batch(&mut self, imgs: &[Image]) -> Result<Vec<Vec<DetectionVector>>> {
        check_batch(imgs)?;
        let start = Instant::now();
        let out = self.inner.detect_batch(imgs);
        self.log.record(imgs.len(), start.elapsed());
        out
    }
}

/// A set of detector handles shared by concurrent callers. Each caller
/// borrows one handle exclusively for the duration of a closure.
pub struct DetectorPool {
    free: Mutex<Vec<LoggedDetector>>,
    available: Condvar,
    classes: Vec<String>,
    total_calls: AtomicU64,
    size: usize,
}

impl DetectorPool {
    pub fn new(detectors: Vec<Box<dyn Detector>>) -> Result<Self> {
        let first = detectors
            .first()
            .ok_or_else(|| Error::InvalidSpec("detector pool needs at least one handle".into()))?;
        let classes = first.classes().to_vec();
        if detectors.iter().any(|d| d.classes() != classes.as_slice()) {
            return Err(Error::InvalidSpec(
                "pooled detectors disagree on the class vocabulary".into(),
            ));
        }
        let size = detectors.len();
        Ok(Self {
            free: Mutex::new(detectors.into_iter().map(LoggedDetector::new).collect()),
            available: Condvar::new(),
            classes,
            total_calls: AtomicU64::new(0),
            size,
        })
    }

    pub fn single(detector: Box<dyn Detector>) -> Self {
        Self::new(vec![detector]).expect("one detector is a valid pool")
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Total images evaluated across all handles so far.
    pub fn calls(&self) -> u64 {
        self.total_calls.load(Ordering::SeqCst)
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut LoggedDetector) -> R) -> R {
        let mut det = {
            let mut free = self.free.lock().expect("detector pool poisoned");
            loop {
                if let Some(d) = free.pop() {
                    break d;
                }
                free = self.available.wait(free).expect("detector pool poisoned");
            }
        };
        let before = det.calls();
        let out = f(&mut det);
        self.total_calls
            .fetch_add(det.calls() - before, Ordering::SeqCst);
        self.free.lock().expect("detector pool poisoned").push(det);
        self.available.notify_one();
        out
    }

    /// Merged log of every handle currently idle in the pool.
    pub fn call_log(&self) -> DetectorCallLog {
        let free = self.free.lock().expect("detector pool poisoned");
        let mut log = DetectorCallLog::default();
        for d in free.iter() {
            log.merge(d.log());
        }
        log
    }
}
