//! Descriptor matching between rectified left/right features with
//! subpixel disparity refinement.

use crate::imaging::{GrayImage, OrbFeature};

/// Matching bands and gates for rectified stereo.
#[derive(Debug, Clone)]
pub struct StereoMatchParams {
    /// Row tolerance in pixels (rectification slack).
    pub search_band: f64,
    pub max_hamming: u32,
    /// Best/second-best Hamming ratio gate.
    pub ratio: f64,
    pub max_disparity: f64,
    /// Square window side for the SAD refinement.
    pub refine_window: usize,
}

impl StereoMatchParams {
    pub fn for_width(width: usize) -> Self {
        Self {
            search_band: 2.0,
            max_hamming: 64,
            ratio: 0.9,
            max_disparity: width as f64 / 8.0,
            refine_window: 5,
        }
    }
}

/// Per-left-feature disparity in level-0 pixels, `None` when no right
/// match survives the gates. Disparities are strictly positive and
/// subpixel-refined by a parabolic fit over a SAD profile.
pub fn stereo_match(
    left: &[OrbFeature],
    right: &[OrbFeature],
    left_img: &GrayImage,
    right_img: &GrayImage,
    params: &StereoMatchParams,
) -> Vec<Option<f64>> {
    left.iter()
        .map(|lf| match_one(lf, right, left_img, right_img, params))
        .collect()
}

fn match_one(
    lf: &OrbFeature,
    right: &[OrbFeature],
    left_img: &GrayImage,
    right_img: &GrayImage,
    params: &StereoMatchParams,
) -> Option<f64> {
    // Best Hamming match within the row band; the disparity gates apply
    // to the winner, so a feature whose true counterpart sits at zero or
    // negative disparity comes back unmatched instead of latching onto a
    // weaker candidate.
    let mut best: Option<(u32, usize)> = None;
    let mut second: u32 = u32::MAX;
    for (i, rf) in right.iter().enumerate() {
        if (rf.y0 - lf.y0).abs() > params.search_band {
            continue;
        }
        let dist = lf.descriptor.hamming(&rf.descriptor);
        match best {
            Some((b, _)) if dist >= b => second = second.min(dist),
            _ => {
                if let Some((b, _)) = best {
                    second = second.min(b);
                }
                best = Some((dist, i));
            }
        }
    }
    let (dist, idx) = best?;
    if dist > params.max_hamming {
        return None;
    }
    if second != u32::MAX && dist as f64 > params.ratio * second as f64 {
        return None;
    }
    let rf = &right[idx];
    let d = lf.x0 - rf.x0;
    if d <= 0.0 || d > params.max_disparity {
        return None;
    }
    let delta = refine_subpixel(left_img, right_img, lf, rf, params.refine_window);
    let d = lf.x0 - (rf.x0 + delta);
    (d > 0.0 && d <= params.max_disparity).then_some(d)
}

/// Parabolic fit over SAD at right-x offsets {-1, 0, +1}; returns the
/// subpixel shift of the right feature, clamped to [-1, 1].
fn refine_subpixel(
    left_img: &GrayImage,
    right_img: &GrayImage,
    lf: &OrbFeature,
    rf: &OrbFeature,
    window: usize,
) -> f64 {
    let r = (window / 2) as f64;
    let fits = |img: &GrayImage, x: f64, y: f64| {
        x - r - 1.0 >= 0.0
            && y - r >= 0.0
            && x + r + 1.0 <= (img.width() - 1) as f64
            && y + r <= (img.height() - 1) as f64
    };
    if !fits(left_img, lf.x0, lf.y0) || !fits(right_img, rf.x0, rf.y0) {
        return 0.0;
    }
    let sad = |delta: f64| {
        let mut acc = 0.0;
        let n = window as i64;
        for j in 0..n {
            for i in 0..n {
                let dx = i as f64 - r;
                let dy = j as f64 - r;
                let a = left_img.sample(lf.x0 + dx, lf.y0 + dy);
                let b = right_img.sample(rf.x0 + delta + dx, rf.y0 + dy);
                acc += (a - b).abs();
            }
        }
        acc
    };
    let s_minus = sad(-1.0);
    let s_zero = sad(0.0);
    let s_plus = sad(1.0);
    let denom = s_minus - 2.0 * s_zero + s_plus;
    if denom <= 1e-9 {
        return 0.0; // flat or concave profile, keep the integer match
    }
    (0.5 * (s_minus - s_plus) / denom).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{extract_orb, OrbParams};

    /// Smooth aperiodic value noise; integer shifts of `shift` sample the
    /// same underlying field.
    fn texture(w: usize, h: usize, shift: i64) -> GrayImage {
        fn hash(x: i64, y: i64) -> f64 {
            let mut v = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
            v ^= v >> 33;
            v = v.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
            v ^= v >> 33;
            (v & 0xFFFF) as f64 / 65535.0
        }
        fn smooth(t: f64) -> f64 {
            t * t * (3.0 - 2.0 * t)
        }
        GrayImage::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            let mut amp = 1.0;
            let mut scale = 8.0;
            for _ in 0..3 {
                let xf = (x as i64 + shift) as f64 / scale;
                let yf = y as f64 / scale;
                let (x0, y0) = (xf.floor() as i64, yf.floor() as i64);
                let (tx, ty) = (smooth(xf - x0 as f64), smooth(yf - y0 as f64));
                let v = (1.0 - ty)
                    * ((1.0 - tx) * hash(x0, y0) + tx * hash(x0 + 1, y0))
                    + ty * ((1.0 - tx) * hash(x0, y0 + 1) + tx * hash(x0 + 1, y0 + 1));
                acc += amp * v;
                amp *= 0.5;
                scale *= 2.3;
            }
            (40.0 + 180.0 * acc / 1.75).clamp(0.0, 255.0) as u8
        })
    }

    #[test]
    fn constant_shift_recovers_disparity() {
        // Right view content sits 12 px to the left: right(x) = left(x + 12).
        let left_img = texture(320, 240, 0);
        let right_img = texture(320, 240, 12);
        let orb = OrbParams::default();
        let left = extract_orb(&left_img, &orb).unwrap();
        let right = extract_orb(&right_img, &orb).unwrap();
        assert!(left.len() > 30);
        let params = StereoMatchParams::for_width(320);
        let disp = stereo_match(&left, &right, &left_img, &right_img, &params);
        let matched: Vec<f64> = disp.iter().flatten().copied().collect();
        assert!(
            matched.len() * 2 >= left.len(),
            "only {}/{} matched",
            matched.len(),
            left.len()
        );
        let good = matched.iter().filter(|d| (*d - 12.0).abs() <= 0.25).count();
        assert!(
            good as f64 >= 0.9 * matched.len() as f64,
            "{good}/{} within 0.25 px of 12",
            matched.len()
        );
    }

    #[test]
    fn zero_disparity_is_rejected() {
        // Identical images: every candidate has d = 0, which violates the
        // positivity constraint.
        let img = texture(320, 240, 0);
        let feats = extract_orb(&img, &OrbParams::default()).unwrap();
        let params = StereoMatchParams::for_width(320);
        let disp = stereo_match(&feats, &feats, &img, &img, &params);
        assert!(disp.iter().all(Option::is_none));
    }

    #[test]
    fn occluded_features_find_no_match() {
        let left_img = texture(320, 240, 0);
        // Right image is unrelated content: matches must fail the gates.
        let right_img = GrayImage::from_fn(320, 240, |x, y| {
            (((x * 31 + y * 17) % 256) / 2 + ((x * 7) % 128)) as u8
        });
        let orb = OrbParams::default();
        let left = extract_orb(&left_img, &orb).unwrap();
        let right = extract_orb(&right_img, &orb).unwrap();
        let params = StereoMatchParams::for_width(320);
        let disp = stereo_match(&left, &right, &left_img, &right_img, &params);
        let matched = disp.iter().flatten().count();
        assert!(
            matched as f64 <= 0.05 * left.len() as f64 + 1.0,
            "{matched} spurious matches out of {}",
            left.len()
        );
    }
}
