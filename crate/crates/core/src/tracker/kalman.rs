use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Point2};

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;

/// Floor applied to the scale (area) and aspect ratio components.
pub const MIN_SCALE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Measurement variances on `[u, v, s, r]`.
    pub measurement_noise: [f64; 4],
    /// Process variances on `[u, v, s, r, u̇, v̇, ṡ]`.
    pub process_noise: [f64; 7],
    /// Initial state variances.
    pub initial_covariance: [f64; 7],
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            measurement_noise: [1.0, 1.0, 10.0, 10.0],
            process_noise: [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4],
            initial_covariance: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
        }
    }
}

/// Constant-velocity box track over `[u, v, s, r, u̇, v̇, ṡ]`: center,
/// area, aspect ratio (width / height) and velocities. Aspect ratio has no
/// velocity term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanTrack {
    pub track_id: u64,
    pub state: State,
    pub covariance: Cov,
    /// Frames since creation.
    pub age: u64,
    /// Consecutive frames without a matching detection.
    pub misses: u64,
    /// Consecutive frames with a matching detection.
    pub hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bbox: BBox,
    /// Set when the predicted area went non-positive and was clamped.
    pub scale_clamped: bool,
}

fn measurement(b: &BBox) -> Meas {
    let c = b.center();
    let w = b.width().max(MIN_SCALE);
    let h = b.height().max(MIN_SCALE);
    Meas::new(c.u, c.v, w * h, w / h)
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> SMatrix<f64, 4, 7> {
    let mut h = SMatrix::<f64, 4, 7>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl KalmanTrack {
    pub fn new(track_id: u64, bbox: &BBox, cfg: &KalmanConfig) -> Self {
        let z = measurement(bbox);
        let mut state = State::zeros();
        state.fixed_rows_mut::<4>(0).copy_from(&z);
        Self {
            track_id,
            state,
            covariance: Cov::from_diagonal(&State::from(cfg.initial_covariance)),
            age: 0,
            misses: 0,
            hits: 1,
        }
    }

    /// Box implied by the current state.
    pub fn bbox(&self) -> BBox {
        let s = self.state[2].max(MIN_SCALE);
        let r = self.state[3].max(MIN_SCALE);
        let w = (s * r).sqrt();
        let h = s / w;
        BBox::from_center_size(Point2::new(self.state[0], self.state[1]), w, h)
            .expect("state-implied box is finite")
    }

    pub fn predict(&mut self, cfg: &KalmanConfig) -> Prediction {
        let f = transition();
        self.state = f * self.state;
        let mut scale_clamped = false;
        if self.state[2] <= 0.0 {
            self.state[2] = MIN_SCALE;
            self.state[6] = 0.0;
            scale_clamped = true;
        }
        let q = Cov::from_diagonal(&State::from(cfg.process_noise));
        self.covariance = f * self.covariance * f.transpose() + q;
        self.age += 1;
        Prediction {
            bbox: self.bbox(),
            scale_clamped,
        }
    }

    pub fn update(&mut self, bbox: &BBox, cfg: &KalmanConfig) {
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&Meas::from(cfg.measurement_noise));
        let innovation = measurement(bbox) - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .expect("innovation covariance is positive definite");
        let gain = self.covariance * h.transpose() * s_inv;
        self.state += gain * innovation;
        // Joseph form, then symmetrize against round-off.
        let ikh = Cov::identity() - gain * h;
        let p = ikh * self.covariance * ikh.transpose() + gain * r * gain.transpose();
        self.covariance = (p + p.transpose()) * 0.5;
        self.state[2] = self.state[2].max(MIN_SCALE);
        self.state[3] = self.state[3].max(MIN_SCALE);
        self.misses = 0;
        self.hits += 1;
    }

    pub fn mark_missed(&mut self) {
        self.misses += 1;
        self.hits = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cu: f64, cv: f64, w: f64, h: f64) -> BBox {
        BBox::from_center_size(Point2::new(cu, cv), w, h).unwrap()
    }

    fn close(a: &BBox, b: &BBox, tol: f64) -> bool {
        a.as_array()
            .iter()
            .zip(b.as_array())
            .all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_velocity_keeps_box() {
        let cfg = KalmanConfig::default();
        let b = bx(20.0, 30.0, 8.0, 4.0);
        let mut t = KalmanTrack::new(1, &b, &cfg);
        let p = t.predict(&cfg);
        assert!(close(&p.bbox, &b, 1e-9));
        assert!(!p.scale_clamped);
    }

    #[test]
    fn velocity_moves_center_exactly() {
        let cfg = KalmanConfig::default();
        let mut t = KalmanTrack::new(1, &bx(10.0, 10.0, 4.0, 4.0), &cfg);
        t.state[4] = 3.0;
        t.state[5] = -2.0;
        let p = t.predict(&cfg);
        let c = p.bbox.center();
        assert!((c.u - 13.0).abs() < 1e-12 && (c.v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn constant_velocity_is_learned() {
        let cfg = KalmanConfig::default();
        let truth = |k: usize| bx(50.0 + 3.0 * k as f64, 40.0 - 2.0 * k as f64, 10.0, 20.0);
        let mut t = KalmanTrack::new(1, &truth(0), &cfg);
        for k in 1..=5 {
            t.predict(&cfg);
            t.update(&truth(k), &cfg);
        }
        let p = t.predict(&cfg).bbox.center();
        let expected = truth(6).center();
        let err = ((p.u - expected.u).powi(2) + (p.v - expected.v).powi(2)).sqrt();
        assert!(err <= 0.5, "one-step-ahead error {err}");
    }

    #[test]
    fn shrinking_scale_is_clamped() {
        let cfg = KalmanConfig::default();
        let mut t = KalmanTrack::new(1, &bx(10.0, 10.0, 2.0, 2.0), &cfg);
        t.state[6] = -100.0;
        let p = t.predict(&cfg);
        assert!(p.scale_clamped);
        assert!(t.state[2] > 0.0);
        assert!(p.bbox.width() > 0.0);
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let cfg = KalmanConfig::default();
        let mut t = KalmanTrack::new(1, &bx(100.0, 100.0, 30.0, 15.0), &cfg);
        for k in 0..100 {
            t.predict(&cfg);
            let jitter = ((k * 37) % 7) as f64 - 3.0;
            let b = bx(
                100.0 + 1.5 * k as f64 + jitter,
                100.0 - 0.5 * k as f64,
                30.0 + jitter,
                15.0,
            );
            if k % 5 != 3 {
                t.update(&b, &cfg);
            }
            let p = t.covariance;
            assert!((p - p.transpose()).abs().max() <= 1e-9);
            let eig = p.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|e| *e >= -1e-9), "eigenvalues {eig}");
        }
    }
}
