use crate::detector::{Image, Rgb};
use crate::explain::ExplanationMask;
use crate::geometry::BBox;
use crate::saliency::SaliencyField;

const MAX_ALPHA: f64 = 0.6;
const OUTLINE: Rgb = [0, 255, 255];
const BOX: Rgb = [0, 255, 0];

/// Black-red-yellow-white ramp over `[0, 1]`.
fn heat(a: f64) -> [f64; 3] {
    [
        (3.0 * a).clamp(0.0, 1.0) * 255.0,
        (3.0 * a - 1.0).clamp(0.0, 1.0) * 255.0,
        (3.0 * a - 2.0).clamp(0.0, 1.0) * 255.0,
    ]
}

/// Heat map of `field` blended over `frame` with opacity proportional to
/// saliency, the explanation's boundary outlined, and `bbox` drawn on top.
pub fn render_overlay(
    frame: &Image,
    field: &SaliencyField,
    mask: &ExplanationMask,
    bbox: &BBox,
) -> Image {
    let (w, h) = (frame.width(), frame.height());
    let mut out = frame.clone();
    let peak = field.max();
    if peak > 0.0 {
        for y in 0..h {
            for x in 0..w {
                let a = field.get(x, y) / peak;
                let alpha = MAX_ALPHA * a;
                let hc = heat(a);
                let px = frame.pixel(x, y);
                let mut blended = [0u8; 3];
                for c in 0..3 {
                    blended[c] = ((1.0 - alpha) * px[c] as f64 + alpha * hc[c]).round() as u8;
                }
                out.set_pixel(x, y, blended);
            }
        }
    }

    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask.get(x as usize, y as usize)
    };
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let edge = inside(xi, yi)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dx, dy)| !inside(xi + dx, yi + dy));
            if edge {
                out.set_pixel(x, y, OUTLINE);
            }
        }
    }

    if w > 0 && h > 0 {
        let clampx = |u: f64| (u.max(0.0) as usize).min(w - 1);
        let clampy = |v: f64| (v.max(0.0) as usize).min(h - 1);
        let (x0, x1) = (clampx(bbox.u_min.floor()), clampx(bbox.u_max.ceil() - 1.0));
        let (y0, y1) = (clampy(bbox.v_min.floor()), clampy(bbox.v_max.ceil() - 1.0));
        for x in x0..=x1 {
            out.set_pixel(x, y0, BOX);
            out.set_pixel(x, y1, BOX);
        }
        for y in y0..=y1 {
            out.set_pixel(x0, y, BOX);
            out.set_pixel(x1, y, BOX);
        }
    }
    out
}
