//! Sequence loaders and the settings file.
//!
//! Two on-disk layouts are understood:
//!
//! * KITTI odometry: `root/sequences/<id>/{image_0,image_1}/NNNNNN.pgm`,
//!   `times.txt`, `calib.txt`, ground truth at `root/poses/<id>.txt`.
//!   Intrinsics and baseline come from the P0/P1 projection matrices.
//! * generic: `root/{left,right[,depth][,mask]}/NNNNNN.{ppm,pgm}` with
//!   `times.txt`, `settings.txt`, optional `poses.txt` (KITTI format).
//!
//! All rasters are binary PNM (see the imaging module); depth is 16-bit
//! millimeters, masks are 8-bit class ids.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{CameraConfig, Config};
use crate::imaging::{
    read_depth_pgm, read_pgm, read_ppm, DepthImage, GrayImage, ImagingError, RgbImage,
};
use crate::odometry::{OdometryError, Trajectory};
use crate::semantics::{load_mask, LabelMask, SemanticsError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("left/right frame counts differ: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },
    #[error("{path}: {count} timestamps for {frames} frames")]
    TimesMismatch {
        path: String,
        count: usize,
        frames: usize,
    },
    #[error("missing {path}")]
    Missing { path: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Trajectory(#[from] OdometryError),
}

/// Paths backing one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePaths {
    pub left: PathBuf,
    pub right: PathBuf,
    pub depth: Option<PathBuf>,
    pub mask: Option<PathBuf>,
}

/// Fully loaded rasters for one frame.
pub struct FrameData {
    pub left_rgb: RgbImage,
    pub left_gray: GrayImage,
    pub right_gray: GrayImage,
    pub depth: Option<DepthImage>,
    pub mask: Option<LabelMask>,
    pub timestamp: f64,
}

/// A recorded stereo sequence with calibration and optional ground
/// truth.
#[derive(Debug, Clone)]
pub struct SequenceSource {
    pub frames: Vec<FramePaths>,
    pub timestamps: Vec<f64>,
    pub camera: CameraConfig,
    pub ground_truth: Option<Trajectory>,
    pub has_depth: bool,
    pub has_masks: bool,
}

impl SequenceSource {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads every raster of frame `i`. Missing mask files follow the
    /// strictness policy; a missing mask directory means no masks at all.
    pub fn load_frame(&self, i: usize, strict_masks: bool) -> Result<FrameData, DatasetError> {
        let paths = &self.frames[i];
        let (left_rgb, left_gray) = read_left(&paths.left)?;
        let right_gray = read_any_gray(&paths.right)?;
        let depth = match &paths.depth {
            Some(p) => Some(read_depth_pgm(p)?),
            None => None,
        };
        let mask = match &paths.mask {
            Some(p) => Some(load_mask(
                p,
                (left_gray.width(), left_gray.height()),
                strict_masks,
            )?),
            None => None,
        };
        Ok(FrameData {
            left_rgb,
            left_gray,
            right_gray,
            depth,
            mask,
            timestamp: self.timestamps[i],
        })
    }
}

fn read_left(path: &Path) -> Result<(RgbImage, GrayImage), DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => {
            let rgb = read_ppm(path)?;
            let gray = rgb.to_gray();
            Ok((rgb, gray))
        }
        _ => {
            let gray = read_pgm(path)?;
            Ok((RgbImage::from_gray(&gray), gray))
        }
    }
}

fn read_any_gray(path: &Path) -> Result<GrayImage, DatasetError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => Ok(read_ppm(path)?.to_gray()),
        _ => Ok(read_pgm(path)?),
    }
}

/// Sorted raster listing of a directory (deterministic regardless of
/// readdir order).
fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm") | Some("ppm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn read_times(path: &Path, frames: usize) -> Result<Vec<f64>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|_| DatasetError::Missing {
        path: path.display().to_string(),
    })?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        times.push(line.parse::<f64>().map_err(|e| DatasetError::MalformedLine {
            path: path.display().to_string(),
            line: i + 1,
            reason: format!("bad timestamp: {e}"),
        })?);
    }
    if times.len() != frames {
        return Err(DatasetError::TimesMismatch {
            path: path.display().to_string(),
            count: times.len(),
            frames,
        });
    }
    Ok(times)
}

/// Loads a KITTI odometry sequence. Ground truth (when the poses file
/// exists) is attached with the times.txt stamps.
pub fn load_kitti(root: impl AsRef<Path>, sequence_id: &str) -> Result<SequenceSource, DatasetError> {
    let root = root.as_ref();
    let seq_dir = root.join("sequences").join(sequence_id);
    if !seq_dir.is_dir() {
        return Err(DatasetError::Missing {
            path: seq_dir.display().to_string(),
        });
    }
    let left = list_rasters(&seq_dir.join("image_0"))?;
    let right = list_rasters(&seq_dir.join("image_1"))?;
    if left.len() != right.len() {
        return Err(DatasetError::CountMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    if left.is_empty() {
        return Err(DatasetError::Malformed {
            path: seq_dir.display().to_string(),
            reason: "no frames".into(),
        });
    }
    let timestamps = read_times(&seq_dir.join("times.txt"), left.len())?;
    let camera = parse_kitti_calib(&seq_dir.join("calib.txt"))?;

    let mut ground_truth = None;
    for candidate in [
        root.join("poses").join(format!("{sequence_id}.txt")),
        seq_dir.join("poses.txt"),
    ] {
        if candidate.is_file() {
            let raw = Trajectory::read_kitti(&candidate)?;
            let mut stamped = Trajectory::new();
            for (i, &ts) in timestamps.iter().enumerate().take(raw.len()) {
                stamped.push(ts, *raw.get(i).1)?;
            }
            ground_truth = Some(stamped);
            break;
        }
    }

    let frames = left
        .into_iter()
        .zip(right)
        .map(|(l, r)| FramePaths {
            left: l,
            right: r,
            depth: None,
            mask: None,
        })
        .collect();
    Ok(SequenceSource {
        frames,
        timestamps,
        camera,
        ground_truth,
        has_depth: false,
        has_masks: false,
    })
}

/// fx, fy, cx, cy from P0; baseline from P1 (P1[3] = -fx * baseline).
fn parse_kitti_calib(path: &Path) -> Result<CameraConfig, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|_| DatasetError::Missing {
        path: path.display().to_string(),
    })?;
    let mut p0: Option<Vec<f64>> = None;
    let mut p1: Option<Vec<f64>> = None;
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key != "P0" && key != "P1" {
            continue;
        }
        let vals: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| DatasetError::MalformedLine {
            path: path.display().to_string(),
            line: i + 1,
            reason: format!("bad float in {key}: {e}"),
        })?;
        if vals.len() != 12 {
            return Err(DatasetError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                reason: format!("{key} has {} values, expected 12", vals.len()),
            });
        }
        match key {
            "P0" => p0 = Some(vals),
            _ => p1 = Some(vals),
        }
    }
    let (p0, p1) = match (p0, p1) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(DatasetError::Malformed {
                path: path.display().to_string(),
                reason: "calib needs P0 and P1 lines".into(),
            })
        }
    };
    let fx = p0[0];
    let baseline = -p1[3] / fx;
    if !(baseline > 0.0) {
        return Err(DatasetError::Malformed {
            path: path.display().to_string(),
            reason: format!("non-positive baseline {baseline} from P1"),
        });
    }
    Ok(CameraConfig {
        fx,
        fy: p0[5],
        cx: p0[2],
        cy: p0[6],
        baseline,
    })
}

/// Loads the generic layout. Depth and mask directories are optional;
/// without depth the pipeline produces a trajectory only.
pub fn load_generic(root: impl AsRef<Path>) -> Result<SequenceSource, DatasetError> {
    let root = root.as_ref();
    let left = list_rasters(&root.join("left"))?;
    let right = list_rasters(&root.join("right"))?;
    if left.len() != right.len() {
        return Err(DatasetError::CountMismatch {
            left: left.len(),
            right: right.len(),
        });
    }
    if left.is_empty() {
        return Err(DatasetError::Malformed {
            path: root.display().to_string(),
            reason: "no frames in left/".into(),
        });
    }
    let timestamps = read_times(&root.join("times.txt"), left.len())?;
    let config = parse_settings(root.join("settings.txt"))?;
    let camera = config.camera.ok_or_else(|| DatasetError::Malformed {
        path: root.join("settings.txt").display().to_string(),
        reason: "settings must provide fx, fy, cx, cy, baseline".into(),
    })?;

    let depth_dir = root.join("depth");
    let mask_dir = root.join("mask");
    let has_depth = depth_dir.is_dir();
    let has_masks = mask_dir.is_dir();
    let frames: Vec<FramePaths> = left
        .into_iter()
        .zip(right)
        .enumerate()
        .map(|(i, (l, r))| FramePaths {
            left: l,
            right: r,
            depth: has_depth.then(|| depth_dir.join(format!("{i:06}.pgm"))),
            mask: has_masks.then(|| mask_dir.join(format!("{i:06}.pgm"))),
        })
        .collect();

    let gt_path = root.join("poses.txt");
    let ground_truth = if gt_path.is_file() {
        let raw = Trajectory::read_kitti(&gt_path)?;
        let mut stamped = Trajectory::new();
        for (i, &ts) in timestamps.iter().enumerate().take(raw.len()) {
            stamped.push(ts, *raw.get(i).1)?;
        }
        Some(stamped)
    } else {
        None
    };

    Ok(SequenceSource {
        frames,
        timestamps,
        camera,
        ground_truth,
        has_depth,
        has_masks,
    })
}

/// Writes a sequence back out in the generic layout (copying rasters),
/// so sources round-trip through disk.
pub fn write_generic(source: &SequenceSource, out_root: impl AsRef<Path>) -> Result<(), DatasetError> {
    let out_root = out_root.as_ref();
    let io_err = |p: &Path, source: std::io::Error| DatasetError::Io {
        path: p.display().to_string(),
        source,
    };
    for sub in ["left", "right"] {
        std::fs::create_dir_all(out_root.join(sub)).map_err(|e| io_err(out_root, e))?;
    }
    if source.has_depth {
        std::fs::create_dir_all(out_root.join("depth")).map_err(|e| io_err(out_root, e))?;
    }
    if source.has_masks {
        std::fs::create_dir_all(out_root.join("mask")).map_err(|e| io_err(out_root, e))?;
    }
    for (i, f) in source.frames.iter().enumerate() {
        let ext = |p: &Path| {
            p.extension()
                .and_then(|e| e.to_str())
                .unwrap_or("pgm")
                .to_string()
        };
        let copy = |from: &Path, to: PathBuf| {
            std::fs::copy(from, &to).map(|_| ()).map_err(|e| io_err(&to, e))
        };
        copy(&f.left, out_root.join("left").join(format!("{i:06}.{}", ext(&f.left))))?;
        copy(&f.right, out_root.join("right").join(format!("{i:06}.{}", ext(&f.right))))?;
        if let Some(d) = &f.depth {
            if d.is_file() {
                copy(d, out_root.join("depth").join(format!("{i:06}.pgm")))?;
            }
        }
        if let Some(m) = &f.mask {
            if m.is_file() {
                copy(m, out_root.join("mask").join(format!("{i:06}.pgm")))?;
            }
        }
    }
    let times: String = source
        .timestamps
        .iter()
        .map(|t| format!("{t:.6}\n"))
        .collect();
    std::fs::write(out_root.join("times.txt"), times).map_err(|e| io_err(out_root, e))?;
    let cam = &source.camera;
    let settings = format!(
        "# camera calibration\nfx: {}\nfy: {}\ncx: {}\ncy: {}\nbaseline: {}\n",
        cam.fx, cam.fy, cam.cx, cam.cy, cam.baseline
    );
    std::fs::write(out_root.join("settings.txt"), settings).map_err(|e| io_err(out_root, e))?;
    if let Some(gt) = &source.ground_truth {
        gt.write_kitti(out_root.join("poses.txt"))?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("{path}:{line}: unknown key '{key}'")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}:{line}: key '{key}': expected {want}, got '{value}'")]
    TypeMismatch {
        path: String,
        line: usize,
        key: String,
        want: &'static str,
        value: String,
    },
    #[error("{path}:{line}: malformed line (expected 'key: value')")]
    NotKeyValue { path: String, line: usize },
    #[error("{path}: camera keys are all-or-nothing; missing {missing:?}")]
    PartialCamera { path: String, missing: Vec<&'static str> },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

impl From<SettingsError> for DatasetError {
    fn from(e: SettingsError) -> Self {
        match e {
            SettingsError::Io { path, source } => DatasetError::Io { path, source },
            other => DatasetError::Malformed {
                path: String::new(),
                reason: other.to_string(),
            },
        }
    }
}

/// Parses `key: value` settings with `#` comments. Unknown keys are
/// rejected; anything absent keeps its documented default.
pub fn parse_settings(path: impl AsRef<Path>) -> Result<Config, SettingsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut config = Config::default();
    let mut cam: [Option<f64>; 5] = [None; 5];
    const CAM_KEYS: [&str; 5] = ["fx", "fy", "cx", "cy", "baseline"];

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = lineno + 1;
        let Some((key, value)) = line.split_once(':') else {
            return Err(SettingsError::NotKeyValue {
                path: path.display().to_string(),
                line: lineno,
            });
        };
        let key = key.trim();
        let value = value.trim();
        let type_err = |want: &'static str| SettingsError::TypeMismatch {
            path: path.display().to_string(),
            line: lineno,
            key: key.to_string(),
            want,
            value: value.to_string(),
        };
        let f = |v: &str| v.parse::<f64>().map_err(|_| type_err("a number"));
        let us = |v: &str| v.parse::<usize>().map_err(|_| type_err("a non-negative integer"));
        let u32_ = |v: &str| v.parse::<u32>().map_err(|_| type_err("a non-negative integer"));
        let u8_ = |v: &str| v.parse::<u8>().map_err(|_| type_err("a small integer"));
        let u64_ = |v: &str| v.parse::<u64>().map_err(|_| type_err("a non-negative integer"));
        let b = |v: &str| match v {
            "true" | "on" | "1" | "yes" => Ok(true),
            "false" | "off" | "0" | "no" => Ok(false),
            _ => Err(type_err("a boolean")),
        };

        if let Some(slot) = CAM_KEYS.iter().position(|&k| k == key) {
            cam[slot] = Some(f(value)?);
            continue;
        }
        match key {
            "seed" => config.seed = u64_(value)?,

            "orb.features" => config.orb.n_features = us(value)?,
            "orb.levels" => config.orb.levels = us(value)?,
            "orb.scale_factor" => config.orb.scale_factor = f(value)?,
            "orb.fast_threshold" => config.orb.fast_threshold = u8_(value)?,
            "orb.fallback_threshold" => config.orb.fallback_threshold = u8_(value)?,
            "orb.min_detections" => config.orb.min_detections = us(value)?,
            "orb.nms_radius" => config.orb.nms_radius = us(value)?,

            "flow.max_points" => config.flow.max_points = us(value)?,
            "flow.min_distance" => config.flow.min_distance = f(value)?,
            "flow.quality" => config.flow.quality = f(value)?,
            "flow.window" => config.flow.lk.window = us(value)?,
            "flow.max_iters" => config.flow.lk.max_iters = us(value)?,
            "flow.eps" => config.flow.lk.eps = f(value)?,
            "flow.levels" => config.flow.lk.levels = us(value)?,
            "flow.border_margin" => config.flow.border_margin = f(value)?,
            "flow.fb_check" => config.flow.fb_check = b(value)?,
            "flow.fb_threshold" => config.flow.fb_threshold = f(value)?,

            "epipolar.threshold" => {
                config.epipolar.threshold = f(value)?;
                config.odometry.epipolar_threshold = config.epipolar.threshold;
            }
            "epipolar.confidence" => config.epipolar.confidence = f(value)?,
            "epipolar.max_iters" => config.epipolar.max_iters = us(value)?,

            "stereo.search_band" => config.stereo.search_band = f(value)?,
            "stereo.max_hamming" => config.stereo.max_hamming = u32_(value)?,
            "stereo.ratio" => config.stereo.ratio = f(value)?,
            "stereo.max_disparity" => config.stereo.max_disparity = Some(f(value)?),
            "stereo.refine_window" => config.stereo.refine_window = us(value)?,

            "match.max_hamming" => config.odometry.matching.max_hamming = u32_(value)?,
            "match.ratio" => config.odometry.matching.ratio = f(value)?,

            "odometry.max_depth" => config.odometry.max_depth = Some(f(value)?),
            "odometry.huber_delta" => config.odometry.solver.huber_delta = f(value)?,
            "odometry.chi2" => config.odometry.solver.chi2_threshold = f(value)?,
            "odometry.max_iters" => config.odometry.solver.max_iters = us(value)?,
            "odometry.eps" => config.odometry.solver.eps = f(value)?,
            "odometry.min_matches" => config.odometry.solver.min_matches = us(value)?,
            "odometry.min_inliers" => config.odometry.solver.min_inliers = us(value)?,
            "odometry.ransac_support" => config.odometry.solver.min_ransac_support = f(value)?,
            "odometry.ransac_threshold" => config.odometry.solver.ransac.threshold = f(value)?,
            "odometry.ransac_iters" => config.odometry.solver.ransac.max_iters = us(value)?,
            "odometry.refine_observations" => config.odometry.refine_observations = b(value)?,

            "semantics.min_area" => config.semantics.min_area = us(value)?,
            "semantics.dilate_radius" => config.semantics.dilate_radius = us(value)?,
            "semantics.strict_masks" => config.semantics.strict_masks = b(value)?,
            "semantics.static_override" => config.semantics.static_override = b(value)?,
            "semantics.tau_move" => config.semantics.movement.tau_move = f(value)?,
            "semantics.n_min" => config.semantics.movement.n_min = us(value)?,
            "semantics.dynamic_classes" => config.semantics.set_dynamic_classes(value)?,

            "map.resolution" => config.map.resolution = f(value)?,
            "map.l_hit" => config.map.l_hit = f(value)?,
            "map.l_miss" => config.map.l_miss = f(value)?,
            "map.l_min" => config.map.l_min = f(value)?,
            "map.l_max" => config.map.l_max = f(value)?,
            "map.max_cloud_depth" => config.map.max_cloud_depth = f(value)?,
            "map.stride" => config.map.stride = us(value)?,

            "eval.max_dt" => config.eval.max_dt = f(value)?,

            _ => {
                return Err(SettingsError::UnknownKey {
                    path: path.display().to_string(),
                    line: lineno,
                    key: key.to_string(),
                })
            }
        }
    }

    if cam.iter().any(Option::is_some) {
        let missing: Vec<&'static str> = CAM_KEYS
            .iter()
            .zip(&cam)
            .filter(|(_, v)| v.is_none())
            .map(|(&k, _)| k)
            .collect();
        if !missing.is_empty() {
            return Err(SettingsError::PartialCamera {
                path: path.display().to_string(),
                missing,
            });
        }
        config.camera = Some(CameraConfig {
            fx: cam[0].unwrap(),
            fy: cam[1].unwrap(),
            cx: cam[2].unwrap(),
            cy: cam[3].unwrap(),
            baseline: cam[4].unwrap(),
        });
    }
    Ok(config)
}
