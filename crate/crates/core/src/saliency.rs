//! Saliency fields as probability mass functions over frame pixels, and the
//! scale/translate warp that carries a field from one frame to the next.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point2, ScaleTranslate};

/// Pre-renormalization mass below which a warp is treated as the object
/// having left the frame.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-6;

/// Row-major grid of non-negative weights, one per frame pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyField {
    width: usize,
    height: usize,
    values: Vec<f64>,
    normalized: bool,
    pre_renorm_mass: Option<f64>,
}

impl SaliencyField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} field",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "saliency values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            normalized: false,
            pre_renorm_mass: None,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            normalized: false,
            pre_renorm_mass: None,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Mass before the last renormalization, when this field came out of a warp.
    pub fn pre_renorm_mass(&self) -> Option<f64> {
        self.pre_renorm_mass
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Row-major index of the largest value; the first one on ties.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i % self.width, i / self.width))
    }

    pub fn normalize(&self) -> Result<Self> {
        let mass = self.total_mass();
        if mass <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v / mass).collect(),
            normalized: true,
            pre_renorm_mass: self.pre_renorm_mass,
        })
    }

    /// Sum of the values whose pixel centers lie inside `b`.
    pub fn mass_in_box(&self, b: &BBox) -> f64 {
        let mut mass = 0.0;
        for y in 0..self.height {
            let cv = y as f64 + 0.5;
            if cv < b.v_min || cv > b.v_max {
                continue;
            }
            let row = &self.values[y * self.width..(y + 1) * self.width];
            for (x, v) in row.iter().enumerate() {
                let cu = x as f64 + 0.5;
                if cu >= b.u_min && cu <= b.u_max {
                    mass += v;
                }
            }
        }
        mass
    }

    /// Bilinear sample at a continuous image coordinate; cells outside the
    /// grid read as zero.
    pub fn sample(&self, p: Point2) -> f64 {
        let (x0, fx) = split_coord(p.u);
        let (y0, fy) = split_coord(p.v);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if let Some(v) = self.at(x0 + dx, y0 + dy) {
                    acc += v * wx * wy;
                }
            }
        }
        acc
    }

    fn at(&self, x: isize, y: isize) -> Option<f64> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.values[y as usize * self.width + x as usize])
        }
    }

    /// Moves the field by `t`: every destination pixel reads the source field
    /// at the inverse-mapped location of its center. The result is
    /// renormalized; the mass seen before renormalization is kept on the
    /// returned field.
    pub fn warp(&self, t: &ScaleTranslate, mass_floor: f64) -> Result<Self> {
        let values = if t.is_identity() {
            self.values.clone()
        } else {
            let inv = t.invert();
            // gamma is diagonal, so the source column depends only on the
            // destination column and likewise for rows.
            let cols: Vec<(isize, f64)> = (0..self.width)
                .map(|x| split_coord(inv.apply(Point2::new(x as f64 + 0.5, 0.0)).u))
                .collect();
            let rows: Vec<(isize, f64)> = (0..self.height)
                .map(|y| split_coord(inv.apply(Point2::new(0.0, y as f64 + 0.5)).v))
                .collect();
            let mut out = Vec::with_capacity(self.values.len());
            for &(y0, fy) in &rows {
                for &(x0, fx) in &cols {
                    let mut acc = 0.0;
                    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                            if let Some(v) = self.at(x0 + dx, y0 + dy) {
                                acc += v * wx * wy;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
            out
        };
        let mass: f64 = values.iter().sum();
        if mass < mass_floor {
            return Err(Error::MassLost {
                mass,
                floor: mass_floor,
            });
        }
        let mut warped = Self {
            width: self.width,
            height: self.height,
            values,
            normalized: false,
            pre_renorm_mass: None,
        }
        .normalize()?;
        warped.pre_renorm_mass = Some(mass);
        Ok(warped)
    }

    /// Little-endian f32 cells, row-major, no header.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_le_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 4 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} grid",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(width, height, values)
    }
}

/// Splits a continuous coordinate into the index of the pixel center at or
/// left of it and the fractional offset from that center.
fn split_coord(c: f64) -> (isize, f64) {
    let s = c - 0.5;
    let base = s.floor();
    (base as isize, s - base)
}

/// Fraction of a normalized field's mass whose pixel centers fall in `b`.
pub fn top_mass_bbox_check(f: &SaliencyField, b: &BBox) -> f64 {
    f.mass_in_box(b).clamp(0.0, 1.0)
}

/// JSON sidecar written next to a saliency grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub width: usize,
    pub height: usize,
    pub frame_index: u64,
    pub track_id: u64,
    pub normalized: bool,
    pub pre_renorm_mass: Option<f64>,
}

/// Paths of the binary grid and its sidecar for a given stem.
pub fn grid_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f32"), stem.with_extension("json"))
}

pub fn write_grid(
    stem: &Path,
    field: &SaliencyField,
    frame_index: u64,
    track_id: u64,
) -> Result<()> {
    let (bin, meta) = grid_paths(stem);
    fs::write(bin, field.to_le_bytes())?;
    let sidecar = GridSidecar {
        width: field.width,
        height: field.height,
        frame_index,
        track_id,
        normalized: field.normalized,
        pre_renorm_mass: field.pre_renorm_mass,
    };
    fs::write(meta, serde_json::to_vec(&sidecar)?)?;
    Ok(())
}

pub fn read_grid(stem: &Path) -> Result<(SaliencyField, GridSidecar)> {
    let (bin, meta) = grid_paths(stem);
    let sidecar: GridSidecar = serde_json::from_slice(&fs::read(meta)?)?;
    let mut field = SaliencyField::from_le_bytes(sidecar.width, sidecar.height, &fs::read(bin)?)?;
    field.normalized = sidecar.normalized;
    field.pre_renorm_mass = sidecar.pre_renorm_mass;
    Ok((field, sidecar))
}
