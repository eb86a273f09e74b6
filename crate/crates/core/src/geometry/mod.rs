//! Camera models, epipolar geometry, and rectified stereo matching.

mod fundamental;
mod stereo;

pub use fundamental::{eight_point, estimate_fundamental_ransac, RansacParams};
pub use stereo::{stereo_match, StereoMatchParams};

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("invalid stereo rig: {0}")]
    BadRig(String),
    #[error("need at least {needed} correspondences, got {got}")]
    NotEnoughPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("fundamental matrix estimation failed")]
    EstimationFailed,
    #[error("epipolar line is degenerate (point maps to the epipole)")]
    DegenerateLine,
    #[error("disparity {0} is not positive")]
    InvalidDisparity(f64),
    #[error("depth {0} is not positive")]
    InvalidDepth(f64),
}

/// Pinhole intrinsics of a rectified, distortion-free camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::BadIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::BadIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point; `None` when it lies at or behind
    /// the camera plane.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// Rectified stereo pair: shared intrinsics, horizontal baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    /// Distance between camera centers in meters.
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self, GeometryError> {
        if !(baseline > 0.0) {
            return Err(GeometryError::BadRig(format!(
                "baseline must be positive, got {baseline}"
            )));
        }
        Ok(Self {
            intrinsics,
            baseline,
        })
    }
}

/// A matched point pair between the previous (`x`) and current
/// (`x_prime`) left frames, stored inhomogeneous with the third
/// coordinate fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x: Point2<f64>,
    pub x_prime: Point2<f64>,
}

impl Correspondence {
    pub fn new(x: (f64, f64), x_prime: (f64, f64)) -> Self {
        Self {
            x: Point2::new(x.0, x.1),
            x_prime: Point2::new(x_prime.0, x_prime.1),
        }
    }

    #[inline]
    pub fn x_h(&self) -> Vector3<f64> {
        Vector3::new(self.x.x, self.x.y, 1.0)
    }

    #[inline]
    pub fn x_prime_h(&self) -> Vector3<f64> {
        Vector3::new(self.x_prime.x, self.x_prime.y, 1.0)
    }
}

/// Line ax + by + c = 0 with (a, b) != (0, 0).
#[derive(Debug, Clone, Copy)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    fn from_vector(l: Vector3<f64>) -> Result<Self, GeometryError> {
        if l.x.hypot(l.y) <= 1e-12 * l.z.abs().max(1.0) {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self {
            a: l.x,
            b: l.y,
            c: l.z,
        })
    }
}

/// Which image an epipolar line lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSide {
    /// Line in the previous left frame (from a current-frame point).
    Previous,
    /// Line in the current left frame (from a previous-frame point).
    Current,
}

/// Rank-2 fundamental matrix, canonicalized to unit Frobenius norm with
/// its largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    m: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Projects an arbitrary 3x3 matrix to the nearest rank-2 matrix and
    /// canonicalizes the scale. Fails when the input is (numerically)
    /// rank deficient below 2 or zero.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let svd = m.svd(true, true);
        let u = svd.u.ok_or_else(|| GeometryError::Degenerate("svd failed".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| GeometryError::Degenerate("svd failed".into()))?;
        let s = svd.singular_values;
        if !(s[1] > 1e-14 * s[0].max(f64::MIN_POSITIVE)) {
            return Err(GeometryError::Degenerate(
                "matrix rank below 2, no epipolar geometry".into(),
            ));
        }
        // Only rebuild through the SVD when the smallest singular value is
        // genuinely nonzero; an already rank-2 input passes through with
        // full precision.
        let mut m2 = if s[2] > 1e-13 * s[0] {
            u * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], 0.0)) * v_t
        } else {
            m
        };
        m2 /= m2.norm();
        // Fix the sign so equal geometries compare equal.
        let mut largest = 0.0f64;
        for v in m2.iter() {
            if v.abs() > largest.abs() {
                largest = *v;
            }
        }
        if largest < 0.0 {
            m2 = -m2;
        }
        Ok(Self { m: m2 })
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transposed(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    /// Algebraic epipolar residual x'^T F x.
    #[inline]
    pub fn residual(&self, c: &Correspondence) -> f64 {
        (c.x_prime_h().transpose() * self.m * c.x_h())[0]
    }
}

/// l' = F x (line in the current image) or l = F^T x' (line in the
/// previous image).
pub fn epipolar_line(
    f: &FundamentalMatrix,
    point: &Point2<f64>,
    side: ImageSide,
) -> Result<EpipolarLine, GeometryError> {
    let p = Vector3::new(point.x, point.y, 1.0);
    let l = match side {
        ImageSide::Current => f.m * p,
        ImageSide::Previous => f.m.transpose() * p,
    };
    EpipolarLine::from_vector(l)
}

/// Perpendicular point-to-line distance in pixels.
#[inline]
pub fn point_line_distance(p: &Point2<f64>, l: &EpipolarLine) -> f64 {
    (l.a * p.x + l.b * p.y + l.c).abs() / l.a.hypot(l.b)
}

/// Symmetric epipolar distance: the larger of the two point-to-line
/// distances. A degenerate line (point at the epipole) constrains
/// nothing and contributes zero.
pub fn symmetric_epipolar_distance(f: &FundamentalMatrix, c: &Correspondence) -> f64 {
    let d_curr = epipolar_line(f, &c.x, ImageSide::Current)
        .map(|l| point_line_distance(&c.x_prime, &l))
        .unwrap_or(0.0);
    let d_prev = epipolar_line(f, &c.x_prime, ImageSide::Previous)
        .map(|l| point_line_distance(&c.x, &l))
        .unwrap_or(0.0);
    d_curr.max(d_prev)
}

/// Inlier/outlier split: outlier iff the symmetric epipolar distance
/// exceeds `threshold` (true = inlier).
pub fn classify_epipolar(
    corrs: &[Correspondence],
    f: &FundamentalMatrix,
    threshold: f64,
) -> Vec<bool> {
    assert!(threshold > 0.0);
    corrs
        .iter()
        .map(|c| symmetric_epipolar_distance(f, c) <= threshold)
        .collect()
}

/// Z = fx * baseline / d for a rectified rig.
pub fn disparity_to_depth(d: f64, rig: &StereoRig) -> Result<f64, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::InvalidDisparity(d));
    }
    Ok(rig.intrinsics.fx * rig.baseline / d)
}

/// Inverse of [`disparity_to_depth`].
pub fn depth_to_disparity(z: f64, rig: &StereoRig) -> Result<f64, GeometryError> {
    if !(z > 0.0) {
        return Err(GeometryError::InvalidDepth(z));
    }
    Ok(rig.intrinsics.fx * rig.baseline / z)
}

/// Lifts pixel (u, v) at depth Z to the camera frame.
pub fn backproject(
    u: f64,
    v: f64,
    z: f64,
    k: &CameraIntrinsics,
) -> Result<Point3<f64>, GeometryError> {
    if !(z > 0.0) {
        return Err(GeometryError::InvalidDepth(z));
    }
    Ok(Point3::new(
        (u - k.cx) * z / k.fx,
        (v - k.cy) * z / k.fy,
        z,
    ))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    /// Ground-truth F from two camera matrices K[I|0] and K[R|t]:
    /// F = K^-T [t]x R K^-1 (same K both sides).
    pub fn known_f(k: &Matrix3<f64>, rot: &Rotation3<f64>, t: &Vector3<f64>) -> Matrix3<f64> {
        let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
        let k_inv = k.try_inverse().expect("K invertible");
        k_inv.transpose() * tx * rot.matrix() * k_inv
    }

    pub fn k_matrix(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
        Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
    }

    /// Projects a cloud of 3D points through both cameras, keeping pairs
    /// in front of both.
    pub fn exact_correspondences(
        k: &Matrix3<f64>,
        rot: &Rotation3<f64>,
        t: &Vector3<f64>,
        points: &[Point3<f64>],
    ) -> Vec<Correspondence> {
        let mut out = Vec::new();
        for p in points {
            let pc1 = p.coords;
            let pc2 = rot * p.coords + t;
            if pc1.z <= 0.1 || pc2.z <= 0.1 {
                continue;
            }
            let a = k * pc1;
            let b = k * pc2;
            out.push(Correspondence::new(
                (a.x / a.z, a.y / a.z),
                (b.x / b.z, b.y / b.z),
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use nalgebra::{Point3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(4.0..12.0),
                )
            })
            .collect()
    }

    #[test]
    fn exact_pair_lies_on_its_epipolar_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = k_matrix(500.0, 500.0, 320.0, 240.0);
        let rot = Rotation3::from_euler_angles(0.02, -0.03, 0.01);
        let t = Vector3::new(0.2, -0.05, 0.1);
        let f = FundamentalMatrix::from_matrix(known_f(&k, &rot, &t)).unwrap();
        for c in exact_correspondences(&k, &rot, &t, &sample_scene(&mut rng, 30)) {
            let l = epipolar_line(&f, &c.x, ImageSide::Current).unwrap();
            let d = point_line_distance(&c.x_prime, &l);
            assert!(d < 1e-9, "distance {d:.3e}");
        }
    }

    #[test]
    fn rectified_f_gives_horizontal_lines() {
        // Pure horizontal translation: F = [[0,0,0],[0,0,-1],[0,1,0]].
        let f = FundamentalMatrix::from_matrix(Matrix3::new(
            0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
        ))
        .unwrap();
        let l = epipolar_line(&f, &Point2::new(101.0, 57.0), ImageSide::Current).unwrap();
        // a x + b y + c = 0 with a = 0 -> y = -c/b, must equal 57.
        assert!(l.a.abs() < 1e-12);
        assert!((-l.c / l.b - 57.0).abs() < 1e-9);
    }

    #[test]
    fn epipole_maps_to_degenerate_line() {
        // Forward component keeps the epipole finite (inside the image).
        let k = k_matrix(500.0, 500.0, 320.0, 240.0);
        let rot = Rotation3::from_euler_angles(0.0, 0.0, 0.0);
        let t = Vector3::new(0.1, 0.05, 0.4);
        let f = FundamentalMatrix::from_matrix(known_f(&k, &rot, &t)).unwrap();
        // Right null vector of F is the epipole in the previous image.
        let svd = f.matrix().svd(true, true);
        let v_t = svd.v_t.unwrap();
        let e = v_t.row(2).transpose();
        let e = Point2::new(e.x / e.z, e.y / e.z);
        assert!(matches!(
            epipolar_line(&f, &e, ImageSide::Current),
            Err(GeometryError::DegenerateLine)
        ));
    }

    #[test]
    fn point_line_distance_closed_form_and_oracle() {
        let l = EpipolarLine {
            a: 0.0,
            b: 1.0,
            c: -5.0,
        };
        assert_eq!(point_line_distance(&Point2::new(100.0, 8.0), &l), 3.0);
        assert_eq!(point_line_distance(&Point2::new(-3.0, 5.0), &l), 0.0);

        // Sampling oracle: minimum distance to densely sampled line points.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            if a.hypot(b) < 0.1 {
                continue;
            }
            let c: f64 = rng.random_range(-100.0..100.0);
            let l = EpipolarLine { a, b, c };
            let p = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            // Parameterize the line from the foot of the perpendicular of
            // the origin, then scan a wide parameter range.
            let n2 = a * a + b * b;
            let foot = Point2::new(-a * c / n2, -b * c / n2);
            let dir = (-b / n2.sqrt(), a / n2.sqrt());
            let mut best = f64::INFINITY;
            let mut t = -200.0;
            while t <= 200.0 {
                let q = Point2::new(foot.x + t * dir.0, foot.y + t * dir.1);
                best = best.min((q - p).norm());
                t += 1e-3;
            }
            assert!((best - point_line_distance(&p, &l)).abs() < 1e-6);
        }
    }

    #[test]
    fn classification_thresholds_match_spec_cases() {
        // Rectified F: symmetric distance of ((x,y) -> (x - d, y + e)) is |e|.
        let f = FundamentalMatrix::from_matrix(Matrix3::new(
            0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0,
        ))
        .unwrap();
        let on_line = Correspondence::new((100.0, 50.0), (90.0, 50.0));
        let below = Correspondence::new((100.0, 50.0), (90.0, 50.5));
        let above = Correspondence::new((100.0, 50.0), (90.0, 52.0));
        let flags = classify_epipolar(&[on_line, below, above], &f, 1.0);
        assert_eq!(flags, vec![true, true, false]);
    }

    #[test]
    fn classification_is_scale_invariant_and_side_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = k_matrix(450.0, 460.0, 300.0, 200.0);
        let rot = Rotation3::from_euler_angles(0.01, 0.04, -0.02);
        let t = Vector3::new(0.1, 0.02, 0.3);
        let raw = known_f(&k, &rot, &t);
        let f1 = FundamentalMatrix::from_matrix(raw).unwrap();
        let f2 = FundamentalMatrix::from_matrix(raw * -7.3).unwrap();
        let corrs: Vec<Correspondence> =
            exact_correspondences(&k, &rot, &t, &sample_scene(&mut rng, 40))
                .into_iter()
                .enumerate()
                .map(|(i, mut c)| {
                    if i % 3 == 0 {
                        c.x_prime.y += 5.0; // force some outliers
                    }
                    c
                })
                .collect();
        let a = classify_epipolar(&corrs, &f1, 1.0);
        let b = classify_epipolar(&corrs, &f2, 1.0);
        assert_eq!(a, b);

        // Swapping image roles (F <-> F^T, x <-> x') keeps the split.
        let swapped: Vec<Correspondence> = corrs
            .iter()
            .map(|c| Correspondence {
                x: c.x_prime,
                x_prime: c.x,
            })
            .collect();
        let c = classify_epipolar(&swapped, &f1.transposed(), 1.0);
        assert_eq!(a, c);
    }

    #[test]
    fn depth_round_trips_and_guards() {
        let k = CameraIntrinsics::new(700.0, 700.0, 320.0, 240.0, 640, 480).unwrap();
        let rig = StereoRig::new(k, 0.12).unwrap();
        assert_eq!(disparity_to_depth(7.0, &rig).unwrap(), 12.0);
        assert!(disparity_to_depth(0.0, &rig).is_err());
        assert!(disparity_to_depth(-2.0, &rig).is_err());

        // Project a 3D point into both rectified cameras; measured
        // disparity must invert back to its depth.
        let p = Point3::new(0.8, -0.4, 9.3);
        let (ul, _) = k.project(&p).unwrap();
        let p_right = Point3::new(p.x - rig.baseline, p.y, p.z);
        let (ur, _) = k.project(&p_right).unwrap();
        let z = disparity_to_depth(ul - ur, &rig).unwrap();
        assert!((z - 9.3).abs() / 9.3 < 1e-6);

        // Algebraic inverse round trip.
        for d in [0.5, 3.0, 77.0] {
            let z = disparity_to_depth(d, &rig).unwrap();
            assert!((depth_to_disparity(z, &rig).unwrap() - d).abs() < 1e-12);
        }
    }

    #[test]
    fn backproject_cases() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let p = backproject(320.0, 240.0, 5.0, &k).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 5.0));

        let p = backproject(320.0 + 500.0, 240.0, 2.0, &k).unwrap();
        assert!((p.x - 2.0).abs() < 1e-12); // 45 degree ray

        assert!(backproject(100.0, 100.0, 0.0, &k).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = Point3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.5..40.0),
            );
            let (u, v) = k.project(&q).unwrap();
            let back = backproject(u, v, q.z, &k).unwrap();
            assert!((back - q).norm() < 1e-9);
        }
    }
}
