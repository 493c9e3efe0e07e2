//! Boxes, centers and the axis-aligned scale/translate operator.
//!
//! Coordinates are continuous. Pixel `(x, y)` covers the square
//! `[x, x + 1) × [y, y + 1)` and has its center at `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of pixel `(x, y)`.
    pub fn pixel_center(x: usize, y: usize) -> Self {
        Self::new(x as f64 + 0.5, y as f64 + 0.5)
    }
}

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<Self> {
        let finite = [u_min, v_min, u_max, v_max].iter().all(|c| c.is_finite());
        if !finite || u_min > u_max || v_min > v_max {
            return Err(Error::InvalidBox {
                u_min,
                v_min,
                u_max,
                v_max,
            });
        }
        Ok(Self {
            u_min,
            v_min,
            u_max,
            v_max,
        })
    }

    pub fn from_center_size(center: Point2, width: f64, height: f64) -> Result<Self> {
        Self::new(
            center.u - width / 2.0,
            center.v - height / 2.0,
            center.u + width / 2.0,
            center.v + height / 2.0,
        )
    }

    /// Smallest box enclosing `points`, or `None` for an empty set.
    pub fn enclosing(points: &[Point2]) -> Option<Self> {
        let first = points.first()?;
        let init = Self {
            u_min: first.u,
            v_min: first.v,
            u_max: first.u,
            v_max: first.v,
        };
        Some(points.iter().fold(init, |b, p| Self {
            u_min: b.u_min.min(p.u),
            v_min: b.v_min.min(p.v),
            u_max: b.u_max.max(p.u),
            v_max: b.v_max.max(p.v),
        }))
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.u_min, self.v_min, self.u_max, self.v_max]
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point2 {
        bbox_center(self)
    }

    /// Inclusive on all four edges.
    pub fn contains(&self, p: Point2) -> bool {
        p.u >= self.u_min && p.u <= self.u_max && p.v >= self.v_min && p.v <= self.v_max
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.u_min, self.v_min),
            Point2::new(self.u_max, self.v_min),
            Point2::new(self.u_min, self.v_max),
            Point2::new(self.u_max, self.v_max),
        ]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.u_max.min(other.u_max) - self.u_min.max(other.u_min)).max(0.0);
        let h = (self.v_max.min(other.v_max) - self.v_min.max(other.v_min)).max(0.0);
        w * h
    }
}

pub fn bbox_center(b: &BBox) -> Point2 {
    Point2::new((b.u_min + b.u_max) / 2.0, (b.v_min + b.v_max) / 2.0)
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// `p ↦ mu + gamma · (p − anchor)` with a positive diagonal `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTranslate {
    gamma: [f64; 2],
    mu: Point2,
    anchor: Point2,
}

impl ScaleTranslate {
    pub fn new(gamma: [f64; 2], mu: Point2, anchor: Point2) -> Result<Self> {
        if !gamma.iter().all(|g| g.is_finite() && *g > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "scale factors must be positive and finite, got {gamma:?}"
            )));
        }
        Ok(Self { gamma, mu, anchor })
    }

    pub fn identity() -> Self {
        Self {
            gamma: [1.0, 1.0],
            mu: Point2::default(),
            anchor: Point2::default(),
        }
    }

    /// The map sending `prev` onto `next`: per-axis extent ratios as the
    /// scale, about the center of `prev`, landing on the center of `next`.
    pub fn from_boxes(prev: &BBox, next: &BBox) -> Result<Self> {
        if prev.width() <= 0.0 || prev.height() <= 0.0 {
            return Err(Error::DegenerateBox {
                width: prev.width(),
                height: prev.height(),
            });
        }
        Self::new(
            [next.width() / prev.width(), next.height() / prev.height()],
            next.center(),
            prev.center(),
        )
    }

    pub fn gamma(&self) -> [f64; 2] {
        self.gamma
    }

    pub fn mu(&self) -> Point2 {
        self.mu
    }

    pub fn anchor(&self) -> Point2 {
        self.anchor
    }

    pub fn is_identity(&self) -> bool {
        self.gamma == [1.0, 1.0] && self.mu == self.anchor
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(
            self.mu.u + self.gamma[0] * (p.u - self.anchor.u),
            self.mu.v + self.gamma[1] * (p.v - self.anchor.v),
        )
    }

    pub fn invert(&self) -> Self {
        Self {
            gamma: [1.0 / self.gamma[0], 1.0 / self.gamma[1]],
            mu: self.anchor,
            anchor: self.mu,
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &ScaleTranslate) -> Self {
        Self {
            gamma: [
                self.gamma[0] * first.gamma[0],
                self.gamma[1] * first.gamma[1],
            ],
            mu: self.apply(first.mu),
            anchor: first.anchor,
        }
    }
}
