//! Three-point perspective pose solver and its RANSAC wrapper, used to
//! initialize the nonlinear pose refinement.

use nalgebra::{Isometry3, Matrix3, Matrix4, Matrix5, Point3, Translation3, UnitQuaternion, Vector3, Vector5};
use rand::seq::index::sample;
use rand::Rng;

use super::PoseSE3;
use crate::geometry::CameraIntrinsics;

/// Candidate world-to-camera poses from three 3D points and their unit
/// bearing vectors in the camera frame (classic distance-equation
/// formulation; up to four solutions).
///
/// The three distance equations reduce to a quartic in the distance
/// ratio v = s3/s1. Rather than carrying the expanded coefficients, the
/// quartic is reconstructed by evaluating the (polynomial) constraint at
/// five nodes and solved through the companion matrix.
pub fn solve_p3p(
    points_world: &[Point3<f64>; 3],
    bearings: &[Vector3<f64>; 3],
) -> Vec<Isometry3<f64>> {
    let p1 = points_world[0];
    let p2 = points_world[1];
    let p3 = points_world[2];
    let a = (p2 - p3).norm();
    let b = (p1 - p3).norm();
    let c = (p1 - p2).norm();
    if a < 1e-9 || b < 1e-9 || c < 1e-9 {
        return Vec::new();
    }
    let f1 = bearings[0].normalize();
    let f2 = bearings[1].normalize();
    let f3 = bearings[2].normalize();
    let cos_alpha = f2.dot(&f3);
    let cos_beta = f1.dot(&f3);
    let cos_gamma = f1.dot(&f2);

    // s2 = u s1, s3 = v s1. Eliminating u and s1 from
    //   s1^2 (1 + u^2 - 2 u cos_gamma) = c^2
    //   s1^2 (1 + v^2 - 2 v cos_beta)  = b^2
    //   s1^2 (u^2 + v^2 - 2 u v cos_alpha) = a^2
    // gives u = num(v)/den(v) and the quartic g(v) below.
    let k = (a * a - c * c) / (b * b);
    let num = |v: f64| v * v - 1.0 - k * (1.0 + v * v - 2.0 * v * cos_beta);
    let den = |v: f64| 2.0 * (v * cos_alpha - cos_gamma);
    let g = |v: f64| {
        let n = num(v);
        let d = den(v);
        (d * d + n * n - 2.0 * n * d * cos_gamma) * b * b
            - (1.0 + v * v - 2.0 * v * cos_beta) * c * c * d * d
    };

    // Quartic coefficients from five samples (Vandermonde solve).
    let nodes = [-2.0f64, -1.0, 0.0, 1.0, 2.0];
    let mut vand = Matrix5::<f64>::zeros();
    let mut rhs = Vector5::<f64>::zeros();
    for (i, &x) in nodes.iter().enumerate() {
        let mut pw = 1.0;
        for j in 0..5 {
            vand[(i, j)] = pw;
            pw *= x;
        }
        rhs[i] = g(x);
    }
    let Some(coeffs) = vand.lu().solve(&rhs) else {
        return Vec::new();
    };
    let c4 = coeffs[4];
    if c4.abs() < 1e-12 * coeffs.abs().max().max(1.0) {
        return Vec::new(); // degenerate leading coefficient
    }

    // Companion matrix eigenvalues are the quartic roots.
    let comp = Matrix4::<f64>::new(
        0.0, 0.0, 0.0, -coeffs[0] / c4,
        1.0, 0.0, 0.0, -coeffs[1] / c4,
        0.0, 1.0, 0.0, -coeffs[2] / c4,
        0.0, 0.0, 1.0, -coeffs[3] / c4,
    );
    let eigen = comp.complex_eigenvalues();

    let mut out = Vec::new();
    for root in eigen.iter() {
        if root.im.abs() > 1e-7 * (1.0 + root.re.abs()) {
            continue;
        }
        let v = root.re;
        if v <= 0.0 {
            continue;
        }
        let d = den(v);
        if d.abs() < 1e-12 {
            continue;
        }
        let u = num(v) / d;
        if u <= 0.0 {
            continue;
        }
        let s1_sq = c * c / (1.0 + u * u - 2.0 * u * cos_gamma);
        if !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let (s2, s3) = (u * s1, v * s1);
        let q1 = Point3::from(f1 * s1);
        let q2 = Point3::from(f2 * s2);
        let q3 = Point3::from(f3 * s3);
        if let Some(iso) = rigid_align_3(&[p1, p2, p3], &[q1, q2, q3]) {
            // Keep only candidates that actually reproduce the distances.
            let err = ((iso * p1 - q1).norm() + (iso * p2 - q2).norm() + (iso * p3 - q3).norm())
                / (a + b + c);
            if err < 1e-4 {
                out.push(iso);
            }
        }
    }
    out
}

/// Least-squares rigid transform src -> dst for exactly three pairs.
fn rigid_align_3(src: &[Point3<f64>; 3], dst: &[Point3<f64>; 3]) -> Option<Isometry3<f64>> {
    let cs = (src[0].coords + src[1].coords + src[2].coords) / 3.0;
    let cd = (dst[0].coords + dst[1].coords + dst[2].coords) / 3.0;
    let mut h = Matrix3::<f64>::zeros();
    for i in 0..3 {
        h += (src[i].coords - cs) * (dst[i].coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = (v_t.transpose() * u.transpose()).determinant();
    let sign = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let r = v_t.transpose() * sign * u.transpose();
    let t = cd - r * cs;
    Some(Isometry3::from_parts(
        Translation3::from(t),
        UnitQuaternion::from_matrix(&r),
    ))
}

#[derive(Debug, Clone)]
pub struct PnpRansacParams {
    /// Reprojection residual bound in pixels.
    pub threshold: f64,
    pub max_iters: usize,
}

impl Default for PnpRansacParams {
    fn default() -> Self {
        Self {
            threshold: 2.45,
            max_iters: 100,
        }
    }
}

/// RANSAC over 3-point samples; scoring over all correspondences picks
/// among the up-to-four P3P solutions. Returns the best camera-to-world
/// pose and its support count.
pub fn ransac_p3p(
    world: &[Point3<f64>],
    observations: &[(f64, f64)],
    k: &CameraIntrinsics,
    params: &PnpRansacParams,
    rng: &mut impl Rng,
) -> Option<(PoseSE3, usize)> {
    assert_eq!(world.len(), observations.len());
    let n = world.len();
    if n < 4 {
        return None;
    }
    let bearings: Vec<Vector3<f64>> = observations
        .iter()
        .map(|&(u, v)| Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize())
        .collect();

    let support = |w_from_c: &Isometry3<f64>| {
        let mut count = 0usize;
        for (p, &(u, v)) in world.iter().zip(observations) {
            let pc = w_from_c * p;
            let Some((pu, pv)) = k.project(&pc) else {
                continue;
            };
            if (pu - u).hypot(pv - v) <= params.threshold {
                count += 1;
            }
        }
        count
    };

    let mut best: Option<(usize, Isometry3<f64>)> = None;
    let mut needed = params.max_iters;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let idx = sample(rng, n, 3);
        let pts = [world[idx.index(0)], world[idx.index(1)], world[idx.index(2)]];
        let brs = [
            bearings[idx.index(0)],
            bearings[idx.index(1)],
            bearings[idx.index(2)],
        ];
        for cand in solve_p3p(&pts, &brs) {
            let count = support(&cand);
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, cand));
                let w = count as f64 / n as f64;
                let p3 = w.powi(3);
                if p3 > 1e-9 {
                    let planned = ((1.0 - 0.99f64).ln() / (1.0 - p3).ln()).ceil() as usize;
                    needed = needed.min(planned.max(1)).max(iter);
                }
            }
        }
    }
    best.map(|(count, w_from_c)| (PoseSE3::from_isometry(w_from_c.inverse()), count))
}
