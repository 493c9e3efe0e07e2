//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use incx_core::detector::{DetectionVector, Detector, Image, BLACK};
use incx_core::explain::{linspace, sufficiency_check, SearchConfig};
use incx_core::saliency::SaliencyField;

/// Remaps `field` pixel by pixel: each destination center is pulled back
/// through `src = anchor + (dst - mu) / gamma` and read with a tent kernel
/// centered on every nearby source pixel center. Zero outside the grid.
/// Returns unnormalized values.
pub fn warp_oracle(
    field: &SaliencyField,
    gamma: [f64; 2],
    mu: [f64; 2],
    anchor: [f64; 2],
) -> Vec<f64> {
    let (w, h) = (field.width() as i64, field.height() as i64);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let su = anchor[0] + (x as f64 + 0.5 - mu[0]) / gamma[0];
            let sv = anchor[1] + (y as f64 + 0.5 - mu[1]) / gamma[1];
            let (cx, cy) = (su.floor() as i64, sv.floor() as i64);
            let mut acc = 0.0;
            for yy in cy - 2..=cy + 2 {
                for xx in cx - 2..=cx + 2 {
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        continue;
                    }
                    let kx = (1.0 - (su - (xx as f64 + 0.5)).abs()).max(0.0);
                    let ky = (1.0 - (sv - (yy as f64 + 0.5)).abs()).max(0.0);
                    acc += field.get(xx as usize, yy as usize) * kx * ky;
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Minimum total cost over all injective row-to-column (or column-to-row)
/// assignments, by enumerating permutations.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        return brute_force_min_cost(&t);
    }
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

/// Highest level in the first-frame search space that passes the
/// sufficiency check, by trying every level from the top down.
pub fn linear_scan_threshold(
    field: &SaliencyField,
    img: &Image,
    detector: &mut dyn Detector,
    target: &DetectionVector,
    cfg: &SearchConfig,
) -> Option<f64> {
    linspace(field.min(), field.max(), cfg.levels_initial)
        .into_iter()
        .rev()
        .find(|&thr| sufficiency_check(field, thr, img, detector, target, cfg, BLACK).unwrap())
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
