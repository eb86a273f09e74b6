//! Trajectory alignment and absolute pose error statistics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

use crate::odometry::Trajectory;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no timestamp pairs within {max_dt} s")]
    NoAssociations { max_dt: f64 },
    #[error("need at least {needed} associated poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("degenerate point sets: {0}")]
    Degenerate(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    None,
    Rigid,
    Similarity,
}

impl std::fmt::Display for Alignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Alignment::None => write!(f, "none"),
            Alignment::Rigid => write!(f, "rigid"),
            Alignment::Similarity => write!(f, "similarity"),
        }
    }
}

/// Absolute pose error summary over associated pose pairs.
#[derive(Debug, Clone)]
pub struct ApeReport {
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Per-pair translational errors in association order.
    pub errors: Vec<f64>,
    pub alignment: Alignment,
}

/// Greedy nearest-timestamp association: candidate pairs within
/// `max_dt` are consumed best-first, each pose used at most once.
pub fn associate(
    reference: &Trajectory,
    estimate: &Trajectory,
    max_dt: f64,
) -> Result<Vec<(usize, usize)>, EvalError> {
    assert!(!reference.is_empty() && !estimate.is_empty());
    let ref_ts: Vec<f64> = reference.timestamps().collect();
    let est_ts: Vec<f64> = estimate.timestamps().collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut lo = 0usize;
    for (i, &rt) in ref_ts.iter().enumerate() {
        while lo < est_ts.len() && est_ts[lo] < rt - max_dt {
            lo += 1;
        }
        let mut j = lo;
        while j < est_ts.len() && est_ts[j] <= rt + max_dt {
            candidates.push(((est_ts[j] - rt).abs(), i, j));
            j += 1;
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite dt")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut used_ref = vec![false; ref_ts.len()];
    let mut used_est = vec![false; est_ts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_ref[i] && !used_est[j] {
            used_ref[i] = true;
            used_est[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoAssociations { max_dt });
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Least-squares similarity (or rigid) transform minimizing
/// sum ||ref - (s R est + t)||^2, with the proper-rotation sign
/// correction. Input sets of fewer than 3 points, or collinear or
/// coincident sets, are rejected.
pub fn umeyama_align(
    ref_points: &[Point3<f64>],
    est_points: &[Point3<f64>],
    with_scale: bool,
) -> Result<(Matrix3<f64>, Vector3<f64>, f64), EvalError> {
    assert_eq!(ref_points.len(), est_points.len());
    let n = ref_points.len();
    if n < 3 {
        return Err(EvalError::TooFewPoses { needed: 3, got: n });
    }
    let nf = n as f64;
    let mean_ref: Vector3<f64> = ref_points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / nf;
    let mean_est: Vector3<f64> = est_points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / nf;

    let mut cov = Matrix3::<f64>::zeros();
    let mut var_est = 0.0f64;
    for (r, e) in ref_points.iter().zip(est_points) {
        let dr = r.coords - mean_ref;
        let de = e.coords - mean_est;
        cov += dr * de.transpose();
        var_est += de.norm_squared();
    }
    cov /= nf;
    var_est /= nf;

    let svd = cov.svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| EvalError::Degenerate("svd failed".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| EvalError::Degenerate("svd failed".into()))?;
    let d = svd.singular_values;
    if d[0] <= 1e-12 || d[1] <= 1e-9 * d[0] {
        return Err(EvalError::Degenerate(
            "points are coincident or collinear".into(),
        ));
    }
    let mut s_fix = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        s_fix.z = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_fix) * v_t;
    let scale = if with_scale {
        (d[0] * s_fix.x + d[1] * s_fix.y + d[2] * s_fix.z) / var_est
    } else {
        1.0
    };
    let translation = mean_ref - scale * rotation * mean_est;
    Ok((rotation, translation, scale))
}

/// Absolute pose error of the estimate against the reference:
/// per-pose translational distance after optional alignment, summarized
/// as rmse, mean, max, min.
pub fn ape(
    reference: &Trajectory,
    estimate: &Trajectory,
    alignment: Alignment,
    max_dt: f64,
) -> Result<ApeReport, EvalError> {
    let pairs = associate(reference, estimate, max_dt)?;
    if pairs.len() < 2 {
        return Err(EvalError::TooFewPoses {
            needed: 2,
            got: pairs.len(),
        });
    }
    let ref_pts: Vec<Point3<f64>> = pairs
        .iter()
        .map(|&(i, _)| Point3::from(reference.get(i).1.translation()))
        .collect();
    let est_pts: Vec<Point3<f64>> = pairs
        .iter()
        .map(|&(_, j)| Point3::from(estimate.get(j).1.translation()))
        .collect();

    let (rotation, translation, scale) = match alignment {
        Alignment::None => (Matrix3::identity(), Vector3::zeros(), 1.0),
        Alignment::Rigid => umeyama_align(&ref_pts, &est_pts, false)?,
        Alignment::Similarity => umeyama_align(&ref_pts, &est_pts, true)?,
    };

    let errors: Vec<f64> = ref_pts
        .iter()
        .zip(&est_pts)
        .map(|(r, e)| (r.coords - (scale * rotation * e.coords + translation)).norm())
        .collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let max = errors.iter().copied().fold(f64::MIN, f64::max);
    let min = errors.iter().copied().fold(f64::MAX, f64::min);
    // Power-mean inequality; holds for any error vector.
    assert!(rmse >= mean - 1e-12, "rmse {rmse} < mean {mean}");
    Ok(ApeReport {
        rmse,
        mean,
        max,
        min,
        errors,
        alignment,
    })
}

/// Writes `<stem>.csv` (index,error), `<stem>_summary.txt`, and a fixed
/// deterministic `<stem>.svg` error-over-index plot.
pub fn write_report(report: &ApeReport, dir: impl AsRef<Path>, stem: &str) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path, source: std::io::Error| EvalError::Io {
        path: path.display().to_string(),
        source,
    };

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut csv = String::from("index,error\n");
    for (i, e) in report.errors.iter().enumerate() {
        writeln!(csv, "{i},{e:.9}").expect("string write");
    }
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;

    let sum_path = dir.join(format!("{stem}_summary.txt"));
    let summary = format!(
        "alignment: {}\nposes: {}\nrmse: {:.6}\nmean: {:.6}\nmax: {:.6}\nmin: {:.6}\n",
        report.alignment,
        report.errors.len(),
        report.rmse,
        report.mean,
        report.max,
        report.min
    );
    std::fs::write(&sum_path, summary).map_err(|e| io_err(&sum_path, e))?;

    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg_path, render_svg(report)).map_err(|e| io_err(&svg_path, e))
}

fn render_svg(report: &ApeReport) -> String {
    const W: f64 = 800.0;
    const H: f64 = 300.0;
    const ML: f64 = 60.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 40.0;
    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let n = report.errors.len().max(2);
    let y_max = report.max.max(1e-12);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.3}\" stroke=\"black\"/>\n",
        MT + plot_h
    );
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"black\"/>\n",
        MT + plot_h,
        ML + plot_w,
        MT + plot_h
    );
    let _ = write!(
        svg,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"12\" text-anchor=\"middle\">pose index</text>\n",
        ML + plot_w / 2.0,
        H - 8.0
    );
    let _ = write!(
        svg,
        "<text x=\"14\" y=\"{:.3}\" font-size=\"12\" transform=\"rotate(-90 14 {:.3})\" text-anchor=\"middle\">error [m]</text>\n",
        MT + plot_h / 2.0,
        MT + plot_h / 2.0
    );
    let _ = write!(
        svg,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"10\">max {:.4}</text>\n",
        ML + 4.0,
        MT + 10.0,
        report.max
    );
    let _ = write!(
        svg,
        "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"10\">rmse {:.4}</text>\n",
        ML + 4.0,
        MT + 22.0,
        report.rmse
    );

    let mut points = String::new();
    for (i, e) in report.errors.iter().enumerate() {
        let x = ML + plot_w * i as f64 / (n - 1) as f64;
        let y = MT + plot_h * (1.0 - e / y_max);
        let _ = write!(points, "{x:.3},{y:.3} ");
    }
    let _ = write!(
        svg,
        "<polyline fill=\"none\" stroke=\"#1b6ca8\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.trim_end()
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odometry::PoseSE3;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn traj_from_points(stamps: &[f64], pts: &[Vector3<f64>]) -> Trajectory {
        let mut t = Trajectory::new();
        for (ts, p) in stamps.iter().zip(pts) {
            t.push(*ts, PoseSE3::from_parts(Matrix3::identity(), *p).unwrap())
                .unwrap();
        }
        t
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let stamps: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let pts: Vec<Vector3<f64>> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        traj_from_points(&stamps, &pts)
    }

    #[test]
    fn identical_stamps_pair_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_traj(&mut rng, 10);
        let pairs = associate(&t, &t, 0.02).unwrap();
        assert_eq!(pairs, (0..10).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn offset_beyond_tolerance_fails() {
        let a = traj_from_points(&[0.0, 0.1, 0.2], &[Vector3::zeros(); 3]);
        let b = traj_from_points(&[0.5, 0.6, 0.7], &[Vector3::zeros(); 3]);
        assert!(matches!(
            associate(&a, &b, 0.02),
            Err(EvalError::NoAssociations { .. })
        ));
    }

    /// Exhaustive optimal matching (max pairs, then min total |dt|) for
    /// small instances.
    fn oracle_best(ref_ts: &[f64], est_ts: &[f64], max_dt: f64) -> (usize, f64) {
        fn recurse(
            i: usize,
            used: u32,
            ref_ts: &[f64],
            est_ts: &[f64],
            max_dt: f64,
        ) -> (usize, f64) {
            if i == ref_ts.len() {
                return (0, 0.0);
            }
            // skip ref i
            let mut best = recurse(i + 1, used, ref_ts, est_ts, max_dt);
            for (j, &et) in est_ts.iter().enumerate() {
                if used >> j & 1 == 1 {
                    continue;
                }
                let dt = (et - ref_ts[i]).abs();
                if dt > max_dt {
                    continue;
                }
                let (c, d) = recurse(i + 1, used | (1 << j), ref_ts, est_ts, max_dt);
                let cand = (c + 1, d + dt);
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            best
        }
        recurse(0, 0, ref_ts, est_ts, max_dt)
    }

    #[test]
    fn greedy_matches_exhaustive_optimum_on_interleaved_stamps() {
        let ref_ts: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let est_ts: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 + 0.004).collect();
        let zero = vec![Vector3::zeros(); 8];
        let a = traj_from_points(&ref_ts, &zero);
        let b = traj_from_points(&est_ts, &zero);
        let pairs = associate(&a, &b, 0.02).unwrap();
        let total: f64 = pairs.iter().map(|&(i, j)| (est_ts[j] - ref_ts[i]).abs()).sum();
        let (best_count, best_total) = oracle_best(&ref_ts, &est_ts, 0.02);
        assert_eq!(pairs.len(), best_count);
        assert!((total - best_total).abs() < 1e-12);
    }

    #[test]
    fn umeyama_identity_and_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3<f64>> = (0..20)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let (r, t, s) = umeyama_align(&pts, &pts, true).unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.norm() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);

        // ref = s R est + t with known parameters.
        let s_true = 2.5;
        let r_true = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        let t_true = Vector3::new(1.0, -2.0, 0.0);
        let ref_pts: Vec<Point3<f64>> = pts
            .iter()
            .map(|p| Point3::from(s_true * (r_true * p.coords) + t_true))
            .collect();
        let (r, t, s) = umeyama_align(&ref_pts, &pts, true).unwrap();
        assert!((r - r_true.matrix()).abs().max() < 1e-9);
        assert!((t - t_true).norm() < 1e-9);
        assert!((s - s_true).abs() < 1e-9);
        // Optimality sanity: aligned residual never beats the identity's.
        let aligned: f64 = ref_pts
            .iter()
            .zip(&pts)
            .map(|(rp, ep)| (rp.coords - (s * r * ep.coords + t)).norm_squared())
            .sum();
        let identity: f64 = ref_pts
            .iter()
            .zip(&pts)
            .map(|(rp, ep)| (rp.coords - ep.coords).norm_squared())
            .sum();
        assert!(aligned <= identity + 1e-9);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Point3<f64>> = (0..5)
            .map(|i| Point3::new(i as f64, 2.0 * i as f64, -i as f64))
            .collect();
        assert!(matches!(
            umeyama_align(&pts, &pts, false),
            Err(EvalError::Degenerate(_))
        ));
    }

    #[test]
    fn ape_of_identical_trajectories_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_traj(&mut rng, 30);
        let report = ape(&t, &t, Alignment::None, 0.02).unwrap();
        assert_eq!(report.rmse, 0.0);
        assert_eq!(report.mean, 0.0);
        assert_eq!(report.max, 0.0);
        assert_eq!(report.min, 0.0);
    }

    #[test]
    fn constant_offset_gives_exact_stats_and_alignment_absorbs_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_traj(&mut rng, 25);
        let offset = Vector3::new(1.0, 0.0, 0.0);
        let mut shifted = Trajectory::new();
        for i in 0..t.len() {
            let (ts, p) = t.get(i);
            shifted
                .push(
                    ts,
                    PoseSE3::from_parts(p.rotation(), p.translation() + offset).unwrap(),
                )
                .unwrap();
        }
        let none = ape(&t, &shifted, Alignment::None, 0.02).unwrap();
        assert_eq!(none.rmse, 1.0);
        assert_eq!(none.mean, 1.0);
        assert_eq!(none.max, 1.0);
        assert_eq!(none.min, 1.0);

        let rigid = ape(&t, &shifted, Alignment::Rigid, 0.02).unwrap();
        assert!(rigid.rmse < 1e-9, "rigid rmse {}", rigid.rmse);
    }

    #[test]
    fn rigid_alignment_is_invariant_to_rigid_pretransform() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let ref_traj = random_traj(&mut rng, 20);
            let est = random_traj(&mut rng, 20);
            let rot = Rotation3::from_euler_angles(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let shift = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let mut transformed = Trajectory::new();
            for i in 0..est.len() {
                let (ts, p) = est.get(i);
                transformed
                    .push(
                        ts,
                        PoseSE3::from_parts(
                            rot.matrix() * p.rotation(),
                            rot * p.translation() + shift,
                        )
                        .unwrap(),
                    )
                    .unwrap();
            }
            let a = ape(&ref_traj, &est, Alignment::Rigid, 0.02).unwrap();
            let b = ape(&ref_traj, &transformed, Alignment::Rigid, 0.02).unwrap();
            assert!(
                (a.rmse - b.rmse).abs() < 1e-9,
                "rmse changed under rigid pre-transform: {} vs {}",
                a.rmse,
                b.rmse
            );
            // Similarity alignment additionally absorbs uniform scale.
            let mut scaled = Trajectory::new();
            for i in 0..est.len() {
                let (ts, p) = est.get(i);
                scaled
                    .push(ts, PoseSE3::from_parts(p.rotation(), 3.7 * p.translation()).unwrap())
                    .unwrap();
            }
            let c = ape(&ref_traj, &est, Alignment::Similarity, 0.02).unwrap();
            let d = ape(&ref_traj, &scaled, Alignment::Similarity, 0.02).unwrap();
            assert!((c.rmse - d.rmse).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_dominates_mean_on_random_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let a = random_traj(&mut rng, 12);
            let b = random_traj(&mut rng, 12);
            let r = ape(&a, &b, Alignment::None, 0.02).unwrap();
            assert!(r.rmse >= r.mean - 1e-12);
            assert!(r.min <= r.mean && r.mean <= r.max);
        }
    }

    #[test]
    fn report_files_are_deterministic() {
        let dir = tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_traj(&mut rng, 10);
        let b = random_traj(&mut rng, 10);
        let report = ape(&a, &b, Alignment::Rigid, 0.02).unwrap();
        write_report(&report, dir.path(), "ape").unwrap();
        let csv1 = std::fs::read(dir.path().join("ape.csv")).unwrap();
        let svg1 = std::fs::read(dir.path().join("ape.svg")).unwrap();
        write_report(&report, dir.path(), "ape").unwrap();
        assert_eq!(std::fs::read(dir.path().join("ape.csv")).unwrap(), csv1);
        assert_eq!(std::fs::read(dir.path().join("ape.svg")).unwrap(), svg1);
        let text = String::from_utf8(csv1).unwrap();
        assert_eq!(text.lines().count(), 11); // header + 10 rows
        let summary =
            std::fs::read_to_string(dir.path().join("ape_summary.txt")).unwrap();
        assert!(summary.contains("rmse:"));
    }
}
