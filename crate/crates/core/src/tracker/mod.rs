//! Tracking by detection: Kalman prediction, IoU association solved as a
//! linear assignment, and a track lifecycle with a miss timeout.

mod hungarian;
mod kalman;

use serde::{Deserialize, Serialize};

pub use hungarian::{hungarian, PAD_COST};
pub use kalman::{KalmanConfig, KalmanTrack, Prediction, MIN_SCALE};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Minimum IoU for a prediction/detection pair to count as a match.
    pub iou_min: f64,
    /// A track is retired once its consecutive misses exceed this.
    pub timeout: u64,
    pub noise: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            timeout: 5,
            noise: KalmanConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min > 0.0 && self.iou_min < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "iou_min {} outside (0,1)",
                self.iou_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(track_index, detection_index)`, sorted by track index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal IoU matching of predicted boxes to detections. Pairs below
/// `iou_min` are split back into unmatched entries.
pub fn associate(predicted: &[BBox], detections: &[BBox], iou_min: f64) -> Assignment {
    let cost: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| detections.iter().map(|d| 1.0 - iou(p, d)).collect())
        .collect();
    let mut out = Assignment::default();
    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; detections.len()];
    for (t, d) in hungarian(&cost) {
        if iou(&predicted[t], &detections[d]) >= iou_min {
            out.pairs.push((t, d));
            track_used[t] = true;
            det_used[d] = true;
        }
    }
    out.unmatched_tracks = (0..predicted.len()).filter(|&t| !track_used[t]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

/// What one tracker step did, keyed by track id and detection index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutcome {
    pub matched: Vec<(u64, usize)>,
    pub born: Vec<(u64, usize)>,
    pub retired: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<KalmanTrack>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[KalmanTrack] {
        &self.tracks
    }

    pub fn track(&self, id: u64) -> Option<&KalmanTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    /// Advances every track one frame and folds in `detections`.
    pub fn step(&mut self, detections: &[BBox]) -> StepOutcome {
        let cfg = &self.config;
        let predicted: Vec<BBox> = self
            .tracks
            .iter_mut()
            .map(|t| t.predict(&cfg.noise).bbox)
            .collect();
        let assignment = associate(&predicted, detections, cfg.iou_min);

        let mut outcome = StepOutcome::default();
        for &(t, d) in &assignment.pairs {
            let track = &mut self.tracks[t];
            track.update(&detections[d], &cfg.noise);
            outcome.matched.push((track.track_id, d));
        }
        for &t in &assignment.unmatched_tracks {
            self.tracks[t].mark_missed();
        }
        let timeout = cfg.timeout;
        self.tracks.retain(|t| {
            let keep = t.misses <= timeout;
            if !keep {
                outcome.retired.push(t.track_id);
            }
            keep
        });
        for &d in &assignment.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks
                .push(KalmanTrack::new(id, &detections[d], &self.config.noise));
            outcome.born.push((id, d));
        }
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn bx(u: f64, v: f64, w: f64, h: f64) -> BBox {
        BBox::new(u, v, u + w, v + h).unwrap()
    }

    #[test]
    fn association_threshold_gate() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let near = bx(1.0, 0.0, 10.0, 10.0);
        assert!(iou(&a, &near) > 0.8);
        let m = associate(&[a], &[near], 0.3);
        assert_eq!(m.pairs, vec![(0, 0)]);

        let far = bx(8.0, 8.0, 10.0, 10.0);
        assert!(iou(&a, &far) < 0.3);
        let m = associate(&[a], &[far], 0.3);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_tracks, vec![0]);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn association_prefers_global_optimum() {
        // Greedy on the best single pair (t0,d1) would strand t1.
        let t0 = bx(0.0, 0.0, 10.0, 10.0);
        let t1 = bx(4.0, 0.0, 10.0, 10.0);
        let d0 = bx(0.5, 0.0, 10.0, 10.0);
        let d1 = bx(3.0, 0.0, 10.0, 10.0);
        let m = associate(&[t0, t1], &[d0, d1], 0.3);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn birth_and_stationary_identity() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let b = bx(10.0, 10.0, 12.0, 8.0);
        let out = tr.step(&[b]);
        assert_eq!(out.born, vec![(1, 0)]);
        for _ in 0..9 {
            let out = tr.step(&[b]);
            assert_eq!(out.matched, vec![(1, 0)]);
            assert!(out.born.is_empty());
        }
    }

    #[test]
    fn timeout_retires_and_ids_are_fresh() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let b = bx(10.0, 10.0, 12.0, 8.0);
        tr.step(&[b]);
        for k in 1..=5 {
            let out = tr.step(&[]);
            assert!(out.retired.is_empty(), "retired early at miss {k}");
        }
        let out = tr.step(&[]);
        assert_eq!(out.retired, vec![1]);
        assert!(tr.tracks().is_empty());
        let out = tr.step(&[b]);
        assert_eq!(out.born, vec![(2, 0)]);
    }

    #[test]
    fn crossing_objects_keep_identity() {
        // Two boxes approach along a diagonal-free horizontal line at
        // different heights, cross in u, and separate again.
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let a =
            |k: f64| BBox::from_center_size(Point2::new(10.0 + 4.0 * k, 20.0), 10.0, 10.0).unwrap();
        let b =
            |k: f64| BBox::from_center_size(Point2::new(90.0 - 4.0 * k, 26.0), 10.0, 10.0).unwrap();
        let first = tr.step(&[a(0.0), b(0.0)]);
        let ida = first.born[0].0;
        let idb = first.born[1].0;
        for k in 1..20 {
            let k = k as f64;
            // Swap detection order every frame to make sure indices are not
            // what carries identity.
            let out = tr.step(&[b(k), a(k)]);
            assert!(out.born.is_empty(), "identity lost at frame {k}");
            let mut m = out.matched.clone();
            m.sort();
            assert_eq!(m, vec![(ida, 1), (idb, 0)]);
        }
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
            let mut log = Vec::new();
            for k in 0..15 {
                let k = k as f64;
                let dets = vec![
                    bx(5.0 + 2.0 * k, 5.0, 10.0, 10.0),
                    bx(60.0, 40.0 - k, 8.0, 8.0),
                ];
                log.push(tr.step(&dets));
            }
            (log, tr)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_threshold() {
        let cfg = TrackerConfig {
            iou_min: 1.0,
            ..TrackerConfig::default()
        };
        assert!(Tracker::new(cfg).is_err());
    }
}
