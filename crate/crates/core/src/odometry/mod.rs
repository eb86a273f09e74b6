//! Frame-to-frame camera tracking: feature matching, mono/stereo
//! classification, and motion-only pose estimation.
//!
//! The tracker is deliberately minimal: no keyframes, no local bundle
//! adjustment, no loop closure. Each frame's pose comes from robust
//! nonlinear least squares on reprojection residuals of the previous
//! frame's stereo-backed features, initialized by a 3-point perspective
//! solver inside RANSAC (or a constant-velocity prior when the solver
//! support is weak).

mod matching;
mod pnp;
mod solver;
mod tracker;

pub use matching::{match_features, MatchParams};
pub use pnp::{ransac_p3p, solve_p3p, PnpRansacParams};
pub use solver::{estimate_pose, PoseEstimate, PoseSolverParams};
pub use tracker::{FrameDiagnostics, FrameInput, TrackerOutput, Tracker};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, Translation3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::imaging::OrbFeature;

#[derive(Debug, Error)]
pub enum OdometryError {
    #[error("tracking lost: {reason}")]
    TrackingLost { reason: String },
    #[error("rotation matrix is not orthonormal (|R^T R - I| = {deviation:.3e})")]
    BadRotation { deviation: f64 },
    #[error("timestamps must increase strictly: {prev} then {next}")]
    NonMonotonicTime { prev: f64, next: f64 },
    #[error("{path}:{line}: {reason}")]
    BadTrajectoryFile {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
}

/// Rigid camera-to-world pose. The rotation is quaternion-backed, so the
/// returned matrix is orthonormal to machine precision after every
/// update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    iso: Isometry3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            iso: Isometry3::identity(),
        }
    }

    /// Builds a pose from a rotation matrix and translation, verifying
    /// orthonormality and handedness before renormalizing through a
    /// quaternion.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, OdometryError> {
        let gram = rotation.transpose() * rotation;
        let deviation = (gram - Matrix3::identity()).abs().max();
        if deviation > 1e-6 || rotation.determinant() < 0.0 {
            return Err(OdometryError::BadRotation { deviation });
        }
        let q = UnitQuaternion::from_matrix(&rotation);
        Ok(Self {
            iso: Isometry3::from_parts(Translation3::from(translation), q),
        })
    }

    pub(crate) fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self { iso }
    }

    #[inline]
    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.iso
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn inverse(&self) -> Self {
        Self {
            iso: self.iso.inverse(),
        }
    }

    /// self then other applied in world composition order: (self * other)
    /// maps other's camera frame through self.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            iso: self.iso * other.iso,
        }
    }

    /// Camera frame to world.
    #[inline]
    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.iso.transform_point(p)
    }

    /// World to camera frame.
    #[inline]
    pub fn inverse_transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.iso.inverse_transform_point(p)
    }

    /// Row-major 3x4 [R | t] as written to pose files.
    pub fn kitti_row(&self) -> [f64; 12] {
        let r = self.rotation();
        let t = self.translation();
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_kitti_row(v: &[f64; 12]) -> Result<Self, OdometryError> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Self::from_parts(rotation, translation)
    }
}

/// Kind of a tracked feature: stereo features carry metric depth.
#[derive(Debug, Clone, Copy)]
pub enum FeatureKind {
    Mono,
    Stereo {
        depth: f64,
        /// Backprojected location in this frame's camera frame.
        point_cam: Point3<f64>,
    },
}

/// A described feature annotated with its stereo classification.
#[derive(Debug, Clone, Copy)]
pub struct TrackedFeature {
    pub feature: OrbFeature,
    pub kind: FeatureKind,
}

impl TrackedFeature {
    pub fn is_stereo(&self) -> bool {
        matches!(self.kind, FeatureKind::Stereo { .. })
    }
}

/// Timestamped pose sequence in the world frame.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) -> Result<(), OdometryError> {
        if let Some(&(prev, _)) = self.entries.last() {
            if timestamp <= prev {
                return Err(OdometryError::NonMonotonicTime {
                    prev,
                    next: timestamp,
                });
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn poses(&self) -> impl Iterator<Item = &PoseSE3> + '_ {
        self.entries.iter().map(|e| &e.1)
    }

    pub fn get(&self, i: usize) -> (f64, &PoseSE3) {
        let (t, p) = &self.entries[i];
        (*t, p)
    }

    /// KITTI pose format: one row-major 3x4 world-from-camera matrix per
    /// line, 12 floats.
    pub fn write_kitti(&self, path: impl AsRef<Path>) -> Result<(), OdometryError> {
        let path = path.as_ref();
        let mut out = String::new();
        for (_, pose) in &self.entries {
            let row = pose.kitti_row();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v:.9e}").expect("string write");
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| OdometryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// TUM format: `timestamp tx ty tz qx qy qz qw` per line.
    pub fn write_tum(&self, path: impl AsRef<Path>) -> Result<(), OdometryError> {
        let path = path.as_ref();
        let mut out = String::new();
        for (ts, pose) in &self.entries {
            let t = pose.translation();
            let q = pose.quaternion();
            writeln!(
                out,
                "{ts:.6} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e} {:.9e}",
                t.x, t.y, t.z, q.i, q.j, q.k, q.w
            )
            .expect("string write");
        }
        std::fs::write(path, out).map_err(|source| OdometryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads a KITTI pose file; timestamps are synthesized as the line
    /// index in seconds (the format itself carries none).
    pub fn read_kitti(path: impl AsRef<Path>) -> Result<Self, OdometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OdometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut traj = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let vals = parse_floats(line, 12, path, lineno + 1)?;
            let mut row = [0.0f64; 12];
            row.copy_from_slice(&vals);
            let pose = PoseSE3::from_kitti_row(&row).map_err(|e| {
                OdometryError::BadTrajectoryFile {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: e.to_string(),
                }
            })?;
            traj.push(lineno as f64, pose)?;
        }
        Ok(traj)
    }

    pub fn read_tum(path: impl AsRef<Path>) -> Result<Self, OdometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OdometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut traj = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = parse_floats(line, 8, path, lineno + 1)?;
            let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                v[7], v[4], v[5], v[6],
            ));
            let pose = PoseSE3::from_isometry(Isometry3::from_parts(
                Translation3::new(v[1], v[2], v[3]),
                q,
            ));
            traj.push(v[0], pose)?;
        }
        Ok(traj)
    }

    /// Sniffs KITTI (12 floats per line) vs TUM (8 floats) by content.
    pub fn read_auto(path: impl AsRef<Path>) -> Result<Self, OdometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OdometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'));
        match first.map(|l| l.split_whitespace().count()) {
            Some(12) => Self::read_kitti(path),
            Some(8) => Self::read_tum(path),
            Some(n) => Err(OdometryError::BadTrajectoryFile {
                path: path.display().to_string(),
                line: 1,
                reason: format!("{n} fields per line; expected 12 (KITTI) or 8 (TUM)"),
            }),
            None => Err(OdometryError::BadTrajectoryFile {
                path: path.display().to_string(),
                line: 1,
                reason: "empty trajectory file".into(),
            }),
        }
    }
}

fn parse_floats(
    line: &str,
    expect: usize,
    path: &Path,
    lineno: usize,
) -> Result<Vec<f64>, OdometryError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| OdometryError::BadTrajectoryFile {
        path: path.display().to_string(),
        line: lineno,
        reason: format!("bad float: {e}"),
    })?;
    if vals.len() != expect {
        return Err(OdometryError::BadTrajectoryFile {
            path: path.display().to_string(),
            line: lineno,
            reason: format!("{} fields, expected {expect}", vals.len()),
        });
    }
    Ok(vals)
}

/// Stereo classification: a feature is stereo when its disparity is
/// valid and the implied depth is no deeper than `max_depth`.
pub fn classify_mono_stereo(
    feats: &[OrbFeature],
    disparities: &[Option<f64>],
    rig: &crate::geometry::StereoRig,
    max_depth: f64,
) -> Vec<TrackedFeature> {
    assert_eq!(feats.len(), disparities.len());
    feats
        .iter()
        .zip(disparities)
        .map(|(f, d)| {
            let kind = match d {
                Some(d) => match crate::geometry::disparity_to_depth(*d, rig) {
                    Ok(depth) if depth <= max_depth => {
                        match crate::geometry::backproject(f.x0, f.y0, depth, &rig.intrinsics) {
                            Ok(point_cam) => FeatureKind::Stereo { depth, point_cam },
                            Err(_) => FeatureKind::Mono,
                        }
                    }
                    _ => FeatureKind::Mono,
                },
                None => FeatureKind::Mono,
            };
            TrackedFeature { feature: *f, kind }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, StereoRig};
    use crate::imaging::{BinaryDescriptor, FeaturePoint};
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    fn feat(x0: f64, y0: f64) -> OrbFeature {
        OrbFeature {
            point: FeaturePoint {
                x: x0 as f32,
                y: y0 as f32,
                level: 0,
                response: 1.0,
                angle: 0.0,
            },
            x0,
            y0,
            descriptor: BinaryDescriptor([0; 4]),
        }
    }

    #[test]
    fn pose_round_trips_kitti_row() {
        let r = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3);
        let pose = PoseSE3::from_parts(r.into_inner(), Vector3::new(1.0, 2.0, -3.0)).unwrap();
        let row = pose.kitti_row();
        let back = PoseSE3::from_kitti_row(&row).unwrap();
        assert_relative_eq!(pose.rotation(), back.rotation(), epsilon = 1e-12);
        assert_relative_eq!(pose.translation(), back.translation(), epsilon = 1e-12);
        // Orthonormality invariant.
        let gram = back.rotation().transpose() * back.rotation();
        assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
    }

    #[test]
    fn identity_row_parses() {
        let row = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let p = PoseSE3::from_kitti_row(&row).unwrap();
        assert_eq!(p.translation(), Vector3::zeros());
        assert_eq!(p.rotation(), Matrix3::identity());
    }

    #[test]
    fn bad_rotation_is_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 2.0;
        assert!(PoseSE3::from_parts(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn trajectory_requires_increasing_time() {
        let mut t = Trajectory::new();
        t.push(0.0, PoseSE3::identity()).unwrap();
        t.push(0.1, PoseSE3::identity()).unwrap();
        assert!(t.push(0.1, PoseSE3::identity()).is_err());
    }

    #[test]
    fn kitti_and_tum_files_round_trip() {
        let dir = tempdir().unwrap();
        let mut traj = Trajectory::new();
        for i in 0..5 {
            let r = nalgebra::Rotation3::from_euler_angles(0.0, 0.02 * i as f64, 0.0);
            let pose =
                PoseSE3::from_parts(r.into_inner(), Vector3::new(0.1 * i as f64, 0.0, i as f64))
                    .unwrap();
            traj.push(i as f64 * 0.1, pose).unwrap();
        }

        let kp = dir.path().join("poses.txt");
        traj.write_kitti(&kp).unwrap();
        let back = Trajectory::read_kitti(&kp).unwrap();
        assert_eq!(back.len(), 5);
        for i in 0..5 {
            assert_relative_eq!(
                back.get(i).1.translation(),
                traj.get(i).1.translation(),
                epsilon = 1e-8
            );
        }

        let tp = dir.path().join("traj_tum.txt");
        traj.write_tum(&tp).unwrap();
        let back = Trajectory::read_tum(&tp).unwrap();
        assert_eq!(back.len(), 5);
        for i in 0..5 {
            assert!((back.get(i).0 - traj.get(i).0).abs() < 1e-6);
            assert_relative_eq!(
                back.get(i).1.rotation(),
                traj.get(i).1.rotation(),
                epsilon = 1e-8
            );
        }

        // Sniffing picks the right parser for both.
        assert_eq!(Trajectory::read_auto(&kp).unwrap().len(), 5);
        assert_eq!(Trajectory::read_auto(&tp).unwrap().len(), 5);
    }

    #[test]
    fn truncated_pose_line_is_an_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        std::fs::write(&p, "1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert!(Trajectory::read_kitti(&p).is_err());
        assert!(Trajectory::read_auto(&p).is_err());
    }

    #[test]
    fn stereo_classification_thresholds() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let rig = StereoRig::new(k, 0.12).unwrap();
        let feats = vec![feat(100.0, 100.0), feat(200.0, 120.0), feat(300.0, 140.0)];
        // depths: none, fx*b/7.5 = 8 m, fx*b/0.5 = 120 m
        let disps = vec![None, Some(7.5), Some(0.5)];
        let tracked = classify_mono_stereo(&feats, &disps, &rig, 40.0);
        assert!(!tracked[0].is_stereo());
        assert!(tracked[1].is_stereo());
        assert!(!tracked[2].is_stereo(), "120 m exceeds max_depth 40");
        if let FeatureKind::Stereo { depth, point_cam } = tracked[1].kind {
            assert_relative_eq!(depth, 8.0, epsilon = 1e-12);
            assert_relative_eq!(point_cam.z, 8.0, epsilon = 1e-12);
        }
    }
}
