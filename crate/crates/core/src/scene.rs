//! Synthetic video: solid rectangles moving over a flat background.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{Image, RectTarget, Rgb};
use crate::error::Result;
use crate::geometry::{BBox, Point2};

/// A rectangle with constant center velocity and linear size growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingRect {
    pub color: Rgb,
    pub center: (f64, f64),
    pub size: (f64, f64),
    /// Center displacement per frame.
    #[serde(default)]
    pub velocity: (f64, f64),
    /// Size multiplier reached on the last frame of the scene.
    #[serde(default = "one")]
    pub growth: f64,
    /// Frames on which the rectangle is present.
    #[serde(default)]
    pub visible: Option<Range<usize>>,
    /// Frames on which the rectangle is drawn but covered.
    #[serde(default)]
    pub hidden: Vec<Range<usize>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub background: Rgb,
    pub objects: Vec<MovingRect>,
}

impl MovingRect {
    pub fn bbox_at(&self, t: usize, frames: usize) -> BBox {
        let progress = if frames > 1 {
            t as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let scale = 1.0 + (self.growth - 1.0) * progress;
        let c = Point2::new(
            self.center.0 + self.velocity.0 * t as f64,
            self.center.1 + self.velocity.1 * t as f64,
        );
        BBox::from_center_size(c, self.size.0 * scale, self.size.1 * scale)
            .expect("scene rectangles have positive size")
    }

    pub fn shown_at(&self, t: usize) -> bool {
        self.visible.as_ref().is_none_or(|r| r.contains(&t))
            && !self.hidden.iter().any(|r| r.contains(&t))
    }

    /// Detector target matching this rectangle at its starting size.
    pub fn target(&self, class_id: usize, theta: f64, tolerance: u8) -> RectTarget {
        RectTarget {
            color: self.color,
            class_id,
            expected_area: self.size.0 * self.size.1,
            theta,
            tolerance,
        }
    }
}

impl Scene {
    /// Renders frame `t`. A pixel takes an object's color when its center
    /// lies inside the object's box; later objects paint over earlier ones.
    pub fn render(&self, t: usize) -> Image {
        let mut img = Image::filled(self.width, self.height, self.background);
        for obj in self.objects.iter().filter(|o| o.shown_at(t)) {
            let b = obj.bbox_at(t, self.frames);
            let x0 = (b.u_min - 0.5).ceil().max(0.0) as usize;
            let y0 = (b.v_min - 0.5).ceil().max(0.0) as usize;
            let x1 = ((b.u_max - 0.5).floor() + 1.0).clamp(0.0, self.width as f64) as usize;
            let y1 = ((b.v_max - 0.5).floor() + 1.0).clamp(0.0, self.height as f64) as usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    img.set_pixel(x, y, obj.color);
                }
            }
        }
        img
    }

    pub fn render_all(&self) -> Vec<Image> {
        (0..self.frames).map(|t| self.render(t)).collect()
    }

    /// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`.
    pub fn write_frames(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in 0..self.frames {
            self.render(t)
                .save_png(&dir.join(format!("frame_{t:05}.png")))?;
        }
        Ok(())
    }

    /// One red rectangle on gray, drifting by (+2, +1) per frame and growing
    /// to 1.5× over 20 frames.
    pub fn drifting_rectangle() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 20,
            background: [64, 64, 64],
            objects: vec![MovingRect {
                color: [255, 0, 0],
                center: (12.0, 10.0),
                size: (16.0, 12.0),
                velocity: (2.0, 1.0),
                growth: 1.5,
                visible: None,
                hidden: Vec::new(),
            }],
        }
    }
}
