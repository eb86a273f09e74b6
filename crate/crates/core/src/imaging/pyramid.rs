//! Multi-scale image pyramid shared by the ORB detector and the
//! pyramidal flow tracker.

use super::{GrayImage, ImagingError};

/// Ordered stack of progressively downscaled images. Level 0 is the
/// source image unchanged; level k has dimensions
/// `floor(level0 / scale_factor^k)`.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<GrayImage>,
    scale_factor: f64,
}

impl ImagePyramid {
    #[inline]
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    #[inline]
    pub fn level(&self, k: usize) -> &GrayImage {
        &self.levels[k]
    }

    #[inline]
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    /// Maps level-k pixel coordinates to level 0 using the true per-axis
    /// dimension ratios (exact for the top-left-aligned resampling used
    /// in [`build_pyramid`], unlike `scale_factor^k`).
    pub fn to_level0(&self, level: usize, x: f64, y: f64) -> (f64, f64) {
        let l0 = &self.levels[0];
        let lk = &self.levels[level];
        (
            x * l0.width() as f64 / lk.width() as f64,
            y * l0.height() as f64 / lk.height() as f64,
        )
    }

    /// Inverse of [`Self::to_level0`].
    pub fn from_level0(&self, level: usize, x0: f64, y0: f64) -> (f64, f64) {
        let l0 = &self.levels[0];
        let lk = &self.levels[level];
        (
            x0 * lk.width() as f64 / l0.width() as f64,
            y0 * lk.height() as f64 / l0.height() as f64,
        )
    }
}

/// Builds a pyramid by repeatedly smoothing with a 5-tap binomial kernel
/// and resampling bilinearly. Every level must stay at least 32x32.
pub fn build_pyramid(
    img: &GrayImage,
    levels: usize,
    scale_factor: f64,
) -> Result<ImagePyramid, ImagingError> {
    assert!(levels >= 1, "pyramid needs at least one level");
    assert!(scale_factor > 1.0, "scale factor must exceed 1");
    let (w0, h0) = (img.width(), img.height());
    let s_last = scale_factor.powi(levels as i32 - 1);
    let (w_last, h_last) = ((w0 as f64 / s_last) as usize, (h0 as f64 / s_last) as usize);
    if w_last < 32 || h_last < 32 {
        return Err(ImagingError::BadDimensions {
            width: w0,
            height: h0,
            reason: format!(
                "smallest of {levels} levels at factor {scale_factor} would be {w_last}x{h_last} (< 32x32)"
            ),
        });
    }

    let mut stack = vec![img.clone()];
    for k in 1..levels {
        let s = scale_factor.powi(k as i32);
        let wk = (w0 as f64 / s) as usize;
        let hk = (h0 as f64 / s) as usize;
        let prev = stack.last().expect("level 0 present");
        let smoothed = binomial_blur(prev);
        stack.push(resample_bilinear(&smoothed, prev.width(), prev.height(), wk, hk));
    }
    Ok(ImagePyramid {
        levels: stack,
        scale_factor,
    })
}

/// Separable [1 4 6 4 1]/16 blur with edge clamping, kept in f64 so
/// constant images pass through exactly.
fn binomial_blur(img: &GrayImage) -> Vec<f64> {
    const K: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (w, h) = (img.width(), img.height());
    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in K.iter().enumerate() {
                acc += kv * img.get_clamped(x as i64 + i as i64 - 2, y as i64) as f64;
            }
            horiz[y * w + x] = acc / 16.0;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in K.iter().enumerate() {
                let yy = (y as i64 + i as i64 - 2).clamp(0, h as i64 - 1) as usize;
                acc += kv * horiz[yy * w + x];
            }
            out[y * w + x] = acc / 16.0;
        }
    }
    out
}

/// Top-left-aligned bilinear resampling: destination pixel (x, y) reads
/// source location (x * sw/dw, y * sh/dh). This convention makes the
/// level-k -> level-0 coordinate map an exact dimension ratio.
fn resample_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> GrayImage {
    let rx = sw as f64 / dw as f64;
    let ry = sh as f64 / dh as f64;
    let mut data = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let sy = y as f64 * ry;
        let y0 = sy as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ay = sy - y0 as f64;
        for x in 0..dw {
            let sx = x as f64 * rx;
            let x0 = sx as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let ax = sx - x0 as f64;
            let v = (1.0 - ay) * ((1.0 - ax) * src[y0 * sw + x0] + ax * src[y0 * sw + x1])
                + ay * ((1.0 - ax) * src[y1 * sw + x0] + ax * src[y1 * sw + x1]);
            data.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(dw, dh, data).expect("nonzero resample dims")
}
