//! Central configuration: every tunable default in one place, overridden
//! by the settings file (see `datasets::parse_settings`).

use crate::flow::LkParams;
use crate::geometry::{CameraIntrinsics, GeometryError, RansacParams, StereoMatchParams, StereoRig};
use crate::imaging::OrbParams;
use crate::odometry::{MatchParams, PoseSolverParams};
use crate::semantics::{ClassTable, MovementParams, SemanticsError};

/// Camera numbers as they appear in the settings file; image dimensions
/// come from the data itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
}

impl CameraConfig {
    pub fn rig(&self, width: usize, height: usize) -> Result<StereoRig, GeometryError> {
        let k = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, width, height)?;
        StereoRig::new(k, self.baseline)
    }
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub max_points: usize,
    pub min_distance: f64,
    /// Harris quality ratio relative to the strongest response.
    pub quality: f64,
    pub lk: LkParams,
    /// Border band (pixels, boundary inclusive) for pair rejection.
    pub border_margin: f64,
    pub fb_check: bool,
    pub fb_threshold: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            max_points: 300,
            min_distance: 15.0,
            quality: 0.001,
            lk: LkParams::default(),
            border_margin: 10.0,
            fb_check: true,
            fb_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StereoConfig {
    pub search_band: f64,
    pub max_hamming: u32,
    pub ratio: f64,
    /// None = width / 8.
    pub max_disparity: Option<f64>,
    pub refine_window: usize,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            search_band: 2.0,
            max_hamming: 64,
            ratio: 0.9,
            max_disparity: None,
            refine_window: 5,
        }
    }
}

impl StereoConfig {
    pub fn params(&self, width: usize) -> StereoMatchParams {
        StereoMatchParams {
            search_band: self.search_band,
            max_hamming: self.max_hamming,
            ratio: self.ratio,
            max_disparity: self.max_disparity.unwrap_or(width as f64 / 8.0),
            refine_window: self.refine_window,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SemanticsConfig {
    pub min_area: usize,
    pub dilate_radius: usize,
    pub strict_masks: bool,
    /// Re-admit features on objects the movement check verified static.
    /// Off by default: potentially dynamic classes stay excluded even
    /// when currently parked.
    pub static_override: bool,
    pub movement: MovementParams,
    pub table: ClassTable,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        Self {
            min_area: 100,
            dilate_radius: 5,
            strict_masks: false,
            static_override: false,
            movement: MovementParams::default(),
            table: ClassTable::default(),
        }
    }
}

impl SemanticsConfig {
    pub fn set_dynamic_classes(&mut self, csv: &str) -> Result<(), SemanticsError> {
        let names: Vec<&str> = csv.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        self.table = ClassTable::from_names(&names)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OdometryConfig {
    /// None = 40 x baseline.
    pub max_depth: Option<f64>,
    pub matching: MatchParams,
    pub solver: PoseSolverParams,
    /// Per-level scaling of the epipolar threshold for ORB matches.
    pub epipolar_threshold: f64,
    /// Polish matched observations to subpixel with a short LK step
    /// before pose estimation.
    pub refine_observations: bool,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            matching: MatchParams::default(),
            solver: PoseSolverParams::default(),
            epipolar_threshold: 1.0,
            refine_observations: true,
        }
    }
}

impl OdometryConfig {
    pub fn max_depth(&self, baseline: f64) -> f64 {
        self.max_depth.unwrap_or(40.0 * baseline)
    }
}

#[derive(Debug, Clone)]
pub struct MapConfig {
    /// Meters per voxel.
    pub resolution: f64,
    pub l_hit: f64,
    pub l_miss: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub max_cloud_depth: f64,
    /// Pixel stride when building local clouds.
    pub stride: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.10,
            l_hit: 0.85,
            l_miss: -0.4,
            l_min: -2.0,
            l_max: 3.5,
            max_cloud_depth: 20.0,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Timestamp association tolerance, seconds.
    pub max_dt: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { max_dt: 0.02 }
    }
}

/// Everything the pipeline can be told, with the documented defaults.
#[derive(Debug, Clone, Default)]
pub struct Config {
    /// Absent until provided by a settings file or dataset calibration.
    pub camera: Option<CameraConfig>,
    pub orb: OrbParams,
    pub flow: FlowConfig,
    /// Fundamental-matrix RANSAC over flow tracks.
    pub epipolar: RansacParams,
    pub stereo: StereoConfig,
    pub semantics: SemanticsConfig,
    pub odometry: OdometryConfig,
    pub map: MapConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}
