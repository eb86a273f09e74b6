//! Sparse pyramidal Lucas-Kanade optical flow between the previous and
//! current left frames, seeded with Harris corners.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::imaging::{harris_response, GrayImage, ImagePyramid};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("pyramids disagree: prev {prev_levels} levels {prev_w}x{prev_h}, curr {curr_levels} levels {curr_w}x{curr_h}")]
    PyramidMismatch {
        prev_levels: usize,
        prev_w: usize,
        prev_h: usize,
        curr_levels: usize,
        curr_w: usize,
        curr_h: usize,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Tracked,
    Lost,
    BorderRejected,
}

/// One point tracked from the previous to the current frame.
#[derive(Debug, Clone, Copy)]
pub struct FlowPoint {
    pub prev: (f64, f64),
    pub curr: (f64, f64),
    pub status: FlowStatus,
    /// Mean absolute intensity error over the window at convergence.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct LkParams {
    pub window: usize,
    pub max_iters: usize,
    pub eps: f64,
    pub levels: usize,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            window: 21,
            max_iters: 30,
            eps: 0.01,
            levels: 3,
        }
    }
}

/// Harris-corner seeds for the tracker: local maxima at or above
/// `quality` times the strongest response, greedily thinned so no two
/// points fall within `min_distance`, strongest first. A 10 px border
/// band is skipped (those pairs would be border-rejected anyway).
pub fn select_flow_points(
    img: &GrayImage,
    max_points: usize,
    min_distance: f64,
    quality: f64,
) -> Vec<(f64, f64)> {
    assert!(max_points >= 1);
    assert!(quality > 0.0 && quality < 1.0);
    const SEED_MARGIN: usize = 10;

    let resp = harris_response(img, 7, 0.04);
    let global_max = resp.max_value();
    if !(global_max > 0.0) {
        return Vec::new();
    }
    let threshold = quality as f32 * global_max;

    let (w, h) = (img.width(), img.height());
    if w <= 2 * SEED_MARGIN || h <= 2 * SEED_MARGIN {
        return Vec::new();
    }
    let mut candidates: Vec<(usize, usize, f32)> = Vec::new();
    for y in SEED_MARGIN..h - SEED_MARGIN {
        for x in SEED_MARGIN..w - SEED_MARGIN {
            let r = resp.get(x, y);
            if r < threshold {
                continue;
            }
            let mut is_max = true;
            'nbr: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    if resp.get((x as i64 + dx) as usize, (y as i64 + dy) as usize) > r {
                        is_max = false;
                        break 'nbr;
                    }
                }
            }
            if is_max {
                candidates.push((x, y, r));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite responses")
            .then(a.1.cmp(&b.1))
            .then(a.0.cmp(&b.0))
    });

    let d2 = min_distance * min_distance;
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for (x, y, _) in candidates {
        if kept.len() >= max_points {
            break;
        }
        let (xf, yf) = (x as f64, y as f64);
        let close = kept
            .iter()
            .any(|&(kx, ky)| (kx - xf).powi(2) + (ky - yf).powi(2) < d2);
        if !close {
            kept.push((xf, yf));
        }
    }
    kept
}

/// Coarse-to-fine iterative LK. A point comes back `Lost` when its
/// gradient matrix is near-singular (min eigenvalue below 1e-4 times the
/// window area), when the window leaves either image, or when the final
/// residual exceeds 25 intensity levels.
pub fn track(
    prev: &ImagePyramid,
    curr: &ImagePyramid,
    points: &[(f64, f64)],
    params: &LkParams,
) -> Result<Vec<FlowPoint>, FlowError> {
    assert!(params.window % 2 == 1, "LK window must be odd");
    if prev.num_levels() != curr.num_levels()
        || prev.level(0).width() != curr.level(0).width()
        || prev.level(0).height() != curr.level(0).height()
    {
        return Err(FlowError::PyramidMismatch {
            prev_levels: prev.num_levels(),
            prev_w: prev.level(0).width(),
            prev_h: prev.level(0).height(),
            curr_levels: curr.num_levels(),
            curr_w: curr.level(0).width(),
            curr_h: curr.level(0).height(),
        });
    }

    points
        .iter()
        .map(|&p| Ok(track_point(prev, curr, p, params)))
        .collect()
}

fn track_point(
    prev: &ImagePyramid,
    curr: &ImagePyramid,
    origin: (f64, f64),
    params: &LkParams,
) -> FlowPoint {
    let lost = FlowPoint {
        prev: origin,
        curr: origin,
        status: FlowStatus::Lost,
        residual: f64::INFINITY,
    };
    let r = (params.window / 2) as f64;
    let area = (params.window * params.window) as f64;
    let min_eig_threshold = 1e-4 * area;
    let top = prev.num_levels() - 1;

    // Flow estimate kept in level-0 units; the per-level maps are linear
    // so they apply to flow vectors directly.
    let mut flow0 = (0.0f64, 0.0f64);
    let mut final_residual = f64::INFINITY;
    for level in (0..=top).rev() {
        let pimg = prev.level(level);
        let cimg = curr.level(level);
        let (ux, uy) = prev.from_level0(level, origin.0, origin.1);
        // A coarse level that cannot fit the window (or has no texture at
        // its scale) only refines the guess, so it is skipped rather than
        // failing the point; level 0 is mandatory.
        if !window_inside(pimg, ux, uy, r + 1.0) {
            if level == 0 {
                return lost;
            }
            continue;
        }

        // Spatial gradients and template over the window, from the
        // previous image.
        let n = params.window;
        let mut ix = vec![0.0f64; n * n];
        let mut iy = vec![0.0f64; n * n];
        let mut tmpl = vec![0.0f64; n * n];
        let (mut gxx, mut gxy, mut gyy) = (0.0f64, 0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let sx = ux + i as f64 - r;
                let sy = uy + j as f64 - r;
                let gx = (pimg.sample(sx + 1.0, sy) - pimg.sample(sx - 1.0, sy)) / 2.0;
                let gy = (pimg.sample(sx, sy + 1.0) - pimg.sample(sx, sy - 1.0)) / 2.0;
                ix[j * n + i] = gx;
                iy[j * n + i] = gy;
                tmpl[j * n + i] = pimg.sample(sx, sy);
                gxx += gx * gx;
                gxy += gx * gy;
                gyy += gy * gy;
            }
        }
        let trace = gxx + gyy;
        let det_term = ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt();
        let min_eig = (trace - det_term) / 2.0;
        if min_eig < min_eig_threshold {
            if level == 0 {
                return lost;
            }
            continue;
        }
        let det = gxx * gyy - gxy * gxy;

        let (mut gx_l, mut gy_l) = prev.from_level0(level, flow0.0, flow0.1);
        let mut residual = f64::INFINITY;
        let mut ok = true;
        for _ in 0..params.max_iters {
            let cx = ux + gx_l;
            let cy = uy + gy_l;
            if !window_inside(cimg, cx, cy, r) {
                ok = false;
                break;
            }
            let mut bx = 0.0f64;
            let mut by = 0.0f64;
            let mut abs_err = 0.0f64;
            for j in 0..n {
                for i in 0..n {
                    let it = tmpl[j * n + i]
                        - cimg.sample(cx + i as f64 - r, cy + j as f64 - r);
                    bx += it * ix[j * n + i];
                    by += it * iy[j * n + i];
                    abs_err += it.abs();
                }
            }
            residual = abs_err / area;
            let eta = ((gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det);
            gx_l += eta.0;
            gy_l += eta.1;
            if (eta.0 * eta.0 + eta.1 * eta.1).sqrt() < params.eps {
                break;
            }
        }
        if !ok {
            if level == 0 {
                return lost;
            }
            continue;
        }
        final_residual = residual;
        flow0 = prev.to_level0(level, gx_l, gy_l);
    }

    let curr_pt = (origin.0 + flow0.0, origin.1 + flow0.1);
    let cimg0 = curr.level(0);
    if !cimg0.contains(curr_pt.0, curr_pt.1) || final_residual > 25.0 {
        return lost;
    }
    FlowPoint {
        prev: origin,
        curr: curr_pt,
        status: FlowStatus::Tracked,
        residual: final_residual,
    }
}

#[inline]
fn window_inside(img: &GrayImage, x: f64, y: f64, r: f64) -> bool {
    x - r >= 0.0
        && y - r >= 0.0
        && x + r <= (img.width() - 1) as f64
        && y + r <= (img.height() - 1) as f64
}

/// Marks any pair whose endpoint lies within `margin` pixels of an image
/// edge (boundary inclusive) as border-rejected.
pub fn reject_border_pairs(
    flows: &mut [FlowPoint],
    width: usize,
    height: usize,
    margin: f64,
) {
    assert!(margin >= 0.0);
    let near = |p: (f64, f64)| {
        p.0 <= margin
            || p.1 <= margin
            || p.0 >= (width - 1) as f64 - margin
            || p.1 >= (height - 1) as f64 - margin
    };
    for f in flows.iter_mut() {
        if f.status == FlowStatus::Tracked && (near(f.prev) || near(f.curr)) {
            f.status = FlowStatus::BorderRejected;
        }
    }
}

/// Forward-backward consistency: re-tracks each tracked point from the
/// current frame back to the previous one and marks it lost when the
/// round trip misses its origin by more than `threshold` pixels.
pub fn forward_backward_filter(
    prev: &ImagePyramid,
    curr: &ImagePyramid,
    flows: &mut [FlowPoint],
    params: &LkParams,
    threshold: f64,
) -> Result<(), FlowError> {
    let fwd_points: Vec<(f64, f64)> = flows
        .iter()
        .filter(|f| f.status == FlowStatus::Tracked)
        .map(|f| f.curr)
        .collect();
    let back = track(curr, prev, &fwd_points, params)?;
    let mut bi = 0;
    for f in flows.iter_mut() {
        if f.status != FlowStatus::Tracked {
            continue;
        }
        let b = &back[bi];
        bi += 1;
        let ok = b.status == FlowStatus::Tracked
            && ((b.curr.0 - f.prev.0).powi(2) + (b.curr.1 - f.prev.1).powi(2)).sqrt() <= threshold;
        if !ok {
            f.status = FlowStatus::Lost;
        }
    }
    Ok(())
}

/// Debug dump: one `prev_x,prev_y,curr_x,curr_y,status` row per point.
pub fn write_flow_csv(flows: &[FlowPoint], path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    let mut out = String::from("prev_x,prev_y,curr_x,curr_y,status\n");
    for f in flows {
        let status = match f.status {
            FlowStatus::Tracked => "tracked",
            FlowStatus::Lost => "lost",
            FlowStatus::BorderRejected => "border_rejected",
        };
        out.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{}\n",
            f.prev.0, f.prev.1, f.curr.0, f.curr.1, status
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|source| FlowError::Io {
            path: path.display().to_string(),
            source,
        })
}
