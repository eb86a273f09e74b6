//! Oriented multi-scale corner features with rotation-steered binary
//! descriptors.

use super::fast::detect_fast;
use super::pattern::{BRIEF_PATTERN, PATTERN_RADIUS};
use super::pyramid::{build_pyramid, ImagePyramid};
use super::{BinaryDescriptor, FeaturePoint, GrayImage, ImagingError};

pub const DESCRIPTOR_BITS: usize = 256;

/// Margin inside which features are dropped rather than described; covers
/// the rotated sampling disk plus bilinear reads.
const DESCRIBE_BORDER: f32 = 16.0;

/// Intensity-centroid radius.
const ORIENTATION_RADIUS: usize = 15;

#[derive(Debug, Clone)]
pub struct OrbParams {
    /// Target feature count per frame, split across levels by area.
    pub n_features: usize,
    pub levels: usize,
    pub scale_factor: f64,
    pub fast_threshold: u8,
    /// Retry threshold when the first pass finds too few corners.
    pub fallback_threshold: u8,
    pub min_detections: usize,
    pub nms_radius: usize,
}

impl Default for OrbParams {
    fn default() -> Self {
        Self {
            n_features: 1000,
            levels: 4,
            scale_factor: 1.2,
            fast_threshold: 20,
            fallback_threshold: 7,
            min_detections: 50,
            nms_radius: 4,
        }
    }
}

/// A described feature: level-frame keypoint plus its exact level-0
/// location and descriptor.
#[derive(Debug, Clone, Copy)]
pub struct OrbFeature {
    pub point: FeaturePoint,
    /// Level-0 pixel coordinates (exact dimension-ratio mapping).
    pub x0: f64,
    pub y0: f64,
    pub descriptor: BinaryDescriptor,
}

/// Orientation from intensity moments over a circular patch:
/// atan2(m01, m10), zero for (radially symmetric) patches with vanishing
/// moments.
pub fn compute_orientation(
    img: &GrayImage,
    p: &FeaturePoint,
    radius: usize,
) -> Result<f32, ImagingError> {
    let cx = p.x.round() as i64;
    let cy = p.y.round() as i64;
    let r = radius as i64;
    if cx - r < 0
        || cy - r < 0
        || cx + r >= img.width() as i64
        || cy + r >= img.height() as i64
    {
        return Err(ImagingError::PatchOutOfBounds {
            x: p.x,
            y: p.y,
            radius,
        });
    }
    let mut m10 = 0.0f64;
    let mut m01 = 0.0f64;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let v = img.get((cx + dx) as usize, (cy + dy) as usize) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    if m10.abs() < 1e-9 && m01.abs() < 1e-9 {
        return Ok(0.0);
    }
    Ok(m01.atan2(m10) as f32)
}

/// 256 pairwise intensity comparisons on the fixed pattern, rotated by
/// the feature's angle and sampled bilinearly around its subpixel center.
pub fn compute_descriptor(
    img: &GrayImage,
    p: &FeaturePoint,
) -> Result<BinaryDescriptor, ImagingError> {
    if p.x < DESCRIBE_BORDER
        || p.y < DESCRIBE_BORDER
        || p.x > img.width() as f32 - 1.0 - DESCRIBE_BORDER
        || p.y > img.height() as f32 - 1.0 - DESCRIBE_BORDER
    {
        return Err(ImagingError::PatchOutOfBounds {
            x: p.x,
            y: p.y,
            radius: PATTERN_RADIUS as usize + 1,
        });
    }
    let (sin, cos) = (p.angle as f64).sin_cos();
    let cx = p.x as f64;
    let cy = p.y as f64;
    let mut words = [0u64; 4];
    for (i, &(px, py, qx, qy)) in BRIEF_PATTERN.iter().enumerate() {
        let (pxr, pyr) = rotate(px as f64, py as f64, sin, cos);
        let (qxr, qyr) = rotate(qx as f64, qy as f64, sin, cos);
        let a = img.sample(cx + pxr, cy + pyr);
        let b = img.sample(cx + qxr, cy + qyr);
        if a < b {
            words[i / 64] |= 1u64 << (i % 64);
        }
    }
    Ok(BinaryDescriptor(words))
}

#[inline]
fn rotate(x: f64, y: f64, sin: f64, cos: f64) -> (f64, f64) {
    (x * cos - y * sin, x * sin + y * cos)
}

/// Full extraction: pyramid, per-level FAST with an area-proportional
/// feature budget, orientation, descriptors. Features too close to a
/// level border are dropped.
pub fn extract_orb(img: &GrayImage, params: &OrbParams) -> Result<Vec<OrbFeature>, ImagingError> {
    let pyramid = build_pyramid(img, params.levels, params.scale_factor)?;
    let mut detections = detect_all_levels(&pyramid, params.fast_threshold, params.nms_radius);
    let total: usize = detections.iter().map(Vec::len).sum();
    if total < params.min_detections && params.fallback_threshold < params.fast_threshold {
        detections = detect_all_levels(&pyramid, params.fallback_threshold, params.nms_radius);
    }

    // Area-proportional budget per level.
    let weights: Vec<f64> = (0..params.levels)
        .map(|k| params.scale_factor.powi(-2 * k as i32))
        .collect();
    let weight_sum: f64 = weights.iter().sum();

    let mut out = Vec::new();
    for (level, mut feats) in detections.into_iter().enumerate() {
        let budget =
            ((params.n_features as f64) * weights[level] / weight_sum).round().max(1.0) as usize;
        feats.sort_by(|a, b| {
            b.response
                .partial_cmp(&a.response)
                .expect("finite responses")
                .then(a.y.partial_cmp(&b.y).expect("finite"))
                .then(a.x.partial_cmp(&b.x).expect("finite"))
        });
        feats.truncate(budget);
        let level_img = pyramid.level(level);
        for mut f in feats {
            f.level = level;
            f.angle = match compute_orientation(level_img, &f, ORIENTATION_RADIUS) {
                Ok(a) => a,
                Err(_) => continue,
            };
            let descriptor = match compute_descriptor(level_img, &f) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let (x0, y0) = pyramid.to_level0(level, f.x as f64, f.y as f64);
            out.push(OrbFeature {
                point: f,
                x0,
                y0,
                descriptor,
            });
        }
    }
    Ok(out)
}

fn detect_all_levels(
    pyramid: &ImagePyramid,
    threshold: u8,
    nms_radius: usize,
) -> Vec<Vec<FeaturePoint>> {
    (0..pyramid.num_levels())
        .map(|k| detect_fast(pyramid.level(k), threshold, nms_radius))
        .collect()
}
