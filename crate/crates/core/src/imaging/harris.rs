//! Harris corner response from the smoothed gradient structure tensor.

use super::GrayImage;

/// Dense per-pixel scalar field aligned with a source image.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ResponseMap {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::MIN, f32::max)
    }
}

/// Computes det(M) - k * trace(M)^2 per pixel, where M is the gradient
/// structure tensor averaged over an odd `window`. Gradients are central
/// differences with edge clamping.
pub fn harris_response(img: &GrayImage, window: usize, k: f32) -> ResponseMap {
    assert!(window >= 3 && window % 2 == 1, "window must be odd and >= 3");
    let (w, h) = (img.width(), img.height());

    let mut ixx = vec![0.0f64; w * h];
    let mut ixy = vec![0.0f64; w * h];
    let mut iyy = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = (img.get_clamped(x as i64 + 1, y as i64) as f64
                - img.get_clamped(x as i64 - 1, y as i64) as f64)
                / 2.0;
            let gy = (img.get_clamped(x as i64, y as i64 + 1) as f64
                - img.get_clamped(x as i64, y as i64 - 1) as f64)
                / 2.0;
            let i = y * w + x;
            ixx[i] = gx * gx;
            ixy[i] = gx * gy;
            iyy[i] = gy * gy;
        }
    }

    let sxx = box_mean(&ixx, w, h, window);
    let sxy = box_mean(&ixy, w, h, window);
    let syy = box_mean(&iyy, w, h, window);

    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
        let trace = sxx[i] + syy[i];
        data.push((det - k as f64 * trace * trace) as f32);
    }
    ResponseMap {
        width: w,
        height: h,
        data,
    }
}

/// Separable box average with edge clamping, running-sum formulation.
fn box_mean(src: &[f64], w: usize, h: usize, window: usize) -> Vec<f64> {
    let r = (window / 2) as i64;
    let n = window as f64;
    let clamp_w = |i: i64| i.clamp(0, w as i64 - 1) as usize;
    let clamp_h = |i: i64| i.clamp(0, h as i64 - 1) as usize;

    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut acc = 0.0;
        for dx in -r..=r {
            acc += row[clamp_w(dx)];
        }
        horiz[y * w] = acc / n;
        for x in 1..w {
            acc += row[clamp_w(x as i64 + r)] - row[clamp_w(x as i64 - r - 1)];
            horiz[y * w + x] = acc / n;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for x in 0..w {
        let mut acc = 0.0;
        for dy in -r..=r {
            acc += horiz[clamp_h(dy) * w + x];
        }
        out[x] = acc / n;
        for y in 1..h {
            acc += horiz[clamp_h(y as i64 + r) * w + x] - horiz[clamp_h(y as i64 - r - 1) * w + x];
            out[y * w + x] = acc / n;
        }
    }
    out
}
