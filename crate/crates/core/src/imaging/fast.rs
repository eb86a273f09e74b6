//! FAST segment-test corner detection (16-pixel Bresenham circle,
//! 9-contiguous arc).

use super::{FeaturePoint, GrayImage};

/// Circle offsets in clockwise order starting at 12 o'clock.
pub(crate) const CIRCLE: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC_LEN: usize = 9;
const BORDER: usize = 3;

/// Detects corners where at least 9 contiguous circle pixels are all
/// brighter than `center + threshold` or all darker than
/// `center - threshold`. Non-maximum suppression keeps the strongest
/// response within `nms_radius`; a 3 px border is excluded.
pub fn detect_fast(img: &GrayImage, threshold: u8, nms_radius: usize) -> Vec<FeaturePoint> {
    assert!(threshold > 0, "FAST threshold must be positive");
    let (w, h) = (img.width(), img.height());
    if w < 2 * BORDER + 1 || h < 2 * BORDER + 1 {
        return Vec::new();
    }

    let mut candidates: Vec<(usize, usize, f32)> = Vec::new();
    let mut ring = [0u8; 16];
    let data = img.data();
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            let c = data[y * w + x] as i32;
            let hi = c + threshold as i32;
            let lo = c - threshold as i32;
            // Compass pre-test: any 9-long arc of the 16-ring covers at
            // least one of {top, bottom} and one of {left, right}, so a
            // corner must pass this 4-pixel check.
            let top = data[(y - 3) * w + x] as i32;
            let bottom = data[(y + 3) * w + x] as i32;
            let right = data[y * w + x + 3] as i32;
            let left = data[y * w + x - 3] as i32;
            let bright_ok = (top > hi || bottom > hi) && (left > hi || right > hi);
            let dark_ok = (top < lo || bottom < lo) && (left < lo || right < lo);
            if !bright_ok && !dark_ok {
                continue;
            }
            for (i, (dx, dy)) in CIRCLE.iter().enumerate() {
                ring[i] = data[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize];
            }
            if let Some(score) = segment_score(c, &ring, threshold as i32) {
                candidates.push((x, y, score));
            }
        }
    }

    // Strongest-first greedy suppression; ties break in scan order so the
    // result is a pure function of the pixels. A coarse grid keeps the
    // neighbor checks local.
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite scores")
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });
    let cell = nms_radius.max(1);
    let gw = w / cell + 1;
    let gh = h / cell + 1;
    let mut grid: Vec<Vec<(usize, usize)>> = vec![Vec::new(); gw * gh];
    let r2 = (nms_radius * nms_radius) as i64;
    let mut kept: Vec<FeaturePoint> = Vec::new();
    'cand: for (x, y, score) in candidates {
        let (gx, gy) = (x / cell, y / cell);
        for ny in gy.saturating_sub(1)..=(gy + 1).min(gh - 1) {
            for nx in gx.saturating_sub(1)..=(gx + 1).min(gw - 1) {
                for &(kx, ky) in &grid[ny * gw + nx] {
                    let dx = x as i64 - kx as i64;
                    let dy = y as i64 - ky as i64;
                    if dx * dx + dy * dy <= r2 {
                        continue 'cand;
                    }
                }
            }
        }
        grid[gy * gw + gx].push((x, y));
        kept.push(FeaturePoint {
            x: x as f32,
            y: y as f32,
            level: 0,
            response: score,
            angle: 0.0,
        });
    }
    kept
}

/// Returns the corner score when the segment test passes: the summed
/// margin |p - c| - t over the best qualifying contiguous arc.
fn segment_score(center: i32, ring: &[u8; 16], t: i32) -> Option<f32> {
    let hi = center + t;
    let lo = center - t;
    let mut bright = [false; 16];
    let mut dark = [false; 16];
    let mut bright_m = [0.0f32; 16];
    let mut dark_m = [0.0f32; 16];
    for i in 0..16 {
        let p = ring[i] as i32;
        bright[i] = p > hi;
        dark[i] = p < lo;
        bright_m[i] = (p - hi).max(0) as f32;
        dark_m[i] = (lo - p).max(0) as f32;
    }
    match (
        arc_score(&bright, &bright_m),
        arc_score(&dark, &dark_m),
    ) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

/// Best margin sum over contiguous qualifying runs of length >= ARC_LEN,
/// scanning the doubled ring to catch wraparound.
fn arc_score(flags: &[bool; 16], margins: &[f32; 16]) -> Option<f32> {
    if flags.iter().all(|&f| f) {
        return Some(margins.iter().sum());
    }
    let mut best: Option<f32> = None;
    let mut run = 0usize;
    let mut sum = 0.0f32;
    for i in 0..32 {
        if flags[i % 16] {
            run += 1;
            sum += margins[i % 16];
            if run >= ARC_LEN {
                best = Some(best.map_or(sum, |b: f32| b.max(sum)));
            }
        } else {
            run = 0;
            sum = 0.0;
        }
    }
    best
}
