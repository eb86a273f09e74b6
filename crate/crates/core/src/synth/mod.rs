//! Synthetic stereo scene generator with exact ground truth.
//!
//! Scenes are textured planes and axis-aligned boxes, plus rigid objects
//! translating along scripted waypoint paths. Rendering is plain
//! z-buffered rasterization with perspective-correct procedural value
//! noise, which keeps every output (stereo pair, dense depth, label
//! mask, poses) exactly self-consistent.
//!
//! Script format: `key: value` lines with `#` comments.
//!
//! ```text
//! width: 640
//! height: 480
//! fx: 500
//! fy: 500
//! cx: 320
//! cy: 240
//! baseline: 0.3
//! frames: 100
//! fps: 10
//! noise_sigma: 0
//! seed: 7
//! camera: 0,0,0 -> 0.2,0,2.5,3        # x,y,z[,yaw degrees] waypoints
//! plane: center=0,0,10 normal=0,0,-1 size=24,14 seed=1
//! box: center=2,0.4,7 size=1,1,1 seed=2
//! object: class=car size=1.6,1.2,1.2 seed=9 path=-4,0.5,6->4,0.5,6
//! ```

mod render;

pub use render::{render_frame, render_sequence, FrameRender, RenderStats};

use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::imaging::ImagingError;
use crate::semantics::ClassTable;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("frame {frame}: no static geometry in view")]
    NothingInView { frame: usize },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle centered at `center` with the given normal, extents
    /// (width, height) along the tangent frame.
    Plane {
        center: Point3<f64>,
        normal: Vector3<f64>,
        size: (f64, f64),
    },
    /// Axis-aligned box: full extents (sx, sy, sz) around `center`.
    Box {
        center: Point3<f64>,
        size: (f64, f64, f64),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub texture_seed: u64,
}

/// A rigid body translating along a piecewise-linear waypoint path over
/// the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObject {
    /// Extents of the axis-aligned box carried along the path.
    pub size: (f64, f64, f64),
    pub class_id: u8,
    pub waypoints: Vec<Point3<f64>>,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraKey {
    pub position: Point3<f64>,
    /// Yaw about +y in radians.
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub frames: usize,
    pub fps: f64,
    /// Additive Gaussian intensity noise, standard deviation in levels.
    pub noise_sigma: f64,
    pub seed: u64,
    pub statics: Vec<Primitive>,
    pub dynamics: Vec<DynamicObject>,
    pub camera_path: Vec<CameraKey>,
}

impl Default for SceneScript {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            baseline: 0.3,
            frames: 1,
            fps: 10.0,
            noise_sigma: 0.0,
            seed: 0,
            statics: Vec::new(),
            dynamics: Vec::new(),
            camera_path: vec![CameraKey {
                position: Point3::origin(),
                yaw: 0.0,
            }],
        }
    }
}

impl SceneScript {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.frames == 0 {
            return Err(SynthError::Validation("frame_count must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(SynthError::Validation("fps must be positive".into()));
        }
        if self.statics.is_empty() {
            return Err(SynthError::Validation(
                "scene needs at least one static primitive".into(),
            ));
        }
        if self.camera_path.is_empty() {
            return Err(SynthError::Validation("camera path is empty".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SynthError::Validation("noise_sigma must be >= 0".into()));
        }
        for obj in &self.dynamics {
            if obj.class_id == 0 || obj.class_id > crate::semantics::NUM_CLASSES {
                return Err(SynthError::Validation(format!(
                    "dynamic object class id {} outside 1..=20",
                    obj.class_id
                )));
            }
            if obj.waypoints.is_empty() {
                return Err(SynthError::Validation("object path is empty".into()));
            }
        }
        Ok(())
    }

    /// Piecewise-linear camera pose at frame `i`.
    pub fn camera_at(&self, frame: usize) -> CameraKey {
        interp_keys(&self.camera_path, path_param(frame, self.frames))
    }

    /// World-space center of a dynamic object at frame `i`.
    pub fn object_center_at(&self, obj: &DynamicObject, frame: usize) -> Point3<f64> {
        interp_points(&obj.waypoints, path_param(frame, self.frames))
    }

    /// World-space axis-aligned bounds of a dynamic object at frame `i`.
    pub fn object_aabb_at(&self, obj: &DynamicObject, frame: usize) -> (Point3<f64>, Point3<f64>) {
        let c = self.object_center_at(obj, frame);
        let h = Vector3::new(obj.size.0 / 2.0, obj.size.1 / 2.0, obj.size.2 / 2.0);
        (c - h, c + h)
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }
}

fn path_param(frame: usize, frames: usize) -> f64 {
    if frames <= 1 {
        0.0
    } else {
        frame as f64 / (frames - 1) as f64
    }
}

fn interp_points(pts: &[Point3<f64>], s: f64) -> Point3<f64> {
    if pts.len() == 1 {
        return pts[0];
    }
    let segs = (pts.len() - 1) as f64;
    let x = (s.clamp(0.0, 1.0)) * segs;
    let i = (x.floor() as usize).min(pts.len() - 2);
    let a = x - i as f64;
    Point3::from(pts[i].coords * (1.0 - a) + pts[i + 1].coords * a)
}

fn interp_keys(keys: &[CameraKey], s: f64) -> CameraKey {
    if keys.len() == 1 {
        return keys[0];
    }
    let segs = (keys.len() - 1) as f64;
    let x = (s.clamp(0.0, 1.0)) * segs;
    let i = (x.floor() as usize).min(keys.len() - 2);
    let a = x - i as f64;
    CameraKey {
        position: Point3::from(keys[i].position.coords * (1.0 - a) + keys[i + 1].position.coords * a),
        yaw: keys[i].yaw * (1.0 - a) + keys[i + 1].yaw * a,
    }
}

/// Parses the script text format documented in the module header.
pub fn parse_script(path: impl AsRef<Path>) -> Result<SceneScript, SynthError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_script_str(&text, &path.display().to_string())
}

pub fn parse_script_str(text: &str, origin: &str) -> Result<SceneScript, SynthError> {
    let mut script = SceneScript {
        camera_path: Vec::new(),
        ..Default::default()
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let err = |reason: String| SynthError::Parse {
            path: origin.to_string(),
            line: lineno,
            reason,
        };
        let Some((key, value)) = line.split_once(':') else {
            return Err(err("expected 'key: value'".into()));
        };
        let key = key.trim();
        let value = value.trim();
        let f = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| err(format!("'{v}' is not a number")))
        };
        match key {
            "width" => script.width = f(value)? as usize,
            "height" => script.height = f(value)? as usize,
            "fx" => script.fx = f(value)?,
            "fy" => script.fy = f(value)?,
            "cx" => script.cx = f(value)?,
            "cy" => script.cy = f(value)?,
            "baseline" => script.baseline = f(value)?,
            "frames" => {
                script.frames = value
                    .parse::<usize>()
                    .map_err(|_| err(format!("'{value}' is not a frame count")))?
            }
            "fps" => script.fps = f(value)?,
            "noise_sigma" => script.noise_sigma = f(value)?,
            "seed" => {
                script.seed = value
                    .parse::<u64>()
                    .map_err(|_| err(format!("'{value}' is not a seed")))?
            }
            "camera" => {
                script.camera_path = parse_waypoints(value)
                    .map_err(|e| err(format!("camera path: {e}")))?;
            }
            "plane" => {
                let attrs = parse_attrs(value).map_err(|e| err(format!("plane: {e}")))?;
                script.statics.push(Primitive {
                    shape: Shape::Plane {
                        center: attrs.point("center").map_err(&err)?,
                        normal: attrs.vector("normal").map_err(&err)?,
                        size: attrs.pair("size").map_err(&err)?,
                    },
                    texture_seed: attrs.seed().map_err(&err)?,
                });
            }
            "box" => {
                let attrs = parse_attrs(value).map_err(|e| err(format!("box: {e}")))?;
                script.statics.push(Primitive {
                    shape: Shape::Box {
                        center: attrs.point("center").map_err(&err)?,
                        size: attrs.triple("size").map_err(&err)?,
                    },
                    texture_seed: attrs.seed().map_err(&err)?,
                });
            }
            "object" => {
                let attrs = parse_attrs(value).map_err(|e| err(format!("object: {e}")))?;
                let class_name = attrs.raw("class").map_err(&err)?;
                let class_id = ClassTable::id_of(&class_name)
                    .ok_or_else(|| err(format!("unknown class '{class_name}'")))?;
                let path_text = attrs.raw("path").map_err(&err)?;
                let waypoints = parse_waypoints(&path_text)
                    .map_err(|e| err(format!("object path: {e}")))?
                    .into_iter()
                    .map(|k| k.position)
                    .collect();
                script.dynamics.push(DynamicObject {
                    size: attrs.triple("size").map_err(&err)?,
                    class_id,
                    waypoints,
                    texture_seed: attrs.seed().map_err(&err)?,
                });
            }
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    if script.camera_path.is_empty() {
        script.camera_path.push(CameraKey {
            position: Point3::origin(),
            yaw: 0.0,
        });
    }
    script.validate()?;
    Ok(script)
}

/// `x,y,z[,yaw_deg]` waypoints joined by `->`.
fn parse_waypoints(text: &str) -> Result<Vec<CameraKey>, String> {
    let mut out = Vec::new();
    for part in text.split("->") {
        let comps: Result<Vec<f64>, _> = part.trim().split(',').map(|c| c.trim().parse::<f64>()).collect();
        let comps = comps.map_err(|_| format!("bad waypoint '{}'", part.trim()))?;
        match comps.len() {
            3 => out.push(CameraKey {
                position: Point3::new(comps[0], comps[1], comps[2]),
                yaw: 0.0,
            }),
            4 => out.push(CameraKey {
                position: Point3::new(comps[0], comps[1], comps[2]),
                yaw: comps[3].to_radians(),
            }),
            n => return Err(format!("waypoint needs 3 or 4 components, got {n}")),
        }
    }
    if out.is_empty() {
        return Err("no waypoints".into());
    }
    Ok(out)
}

struct Attrs(Vec<(String, String)>);

impl Attrs {
    fn raw(&self, key: &str) -> Result<String, String> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| format!("missing attribute '{key}'"))
    }

    fn nums(&self, key: &str, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.raw(key)?;
        let vals: Result<Vec<f64>, _> = raw.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|_| format!("attribute '{key}': bad number in '{raw}'"))?;
        if vals.len() != n {
            return Err(format!("attribute '{key}' needs {n} components, got {}", vals.len()));
        }
        Ok(vals)
    }

    fn point(&self, key: &str) -> Result<Point3<f64>, String> {
        let v = self.nums(key, 3)?;
        Ok(Point3::new(v[0], v[1], v[2]))
    }

    fn vector(&self, key: &str) -> Result<Vector3<f64>, String> {
        let v = self.nums(key, 3)?;
        let vec = Vector3::new(v[0], v[1], v[2]);
        if vec.norm() < 1e-9 {
            return Err(format!("attribute '{key}' must be a nonzero vector"));
        }
        Ok(vec)
    }

    fn pair(&self, key: &str) -> Result<(f64, f64), String> {
        let v = self.nums(key, 2)?;
        Ok((v[0], v[1]))
    }

    fn triple(&self, key: &str) -> Result<(f64, f64, f64), String> {
        let v = self.nums(key, 3)?;
        Ok((v[0], v[1], v[2]))
    }

    fn seed(&self) -> Result<u64, String> {
        let raw = self.raw("seed")?;
        raw.parse::<u64>().map_err(|_| format!("bad seed '{raw}'"))
    }
}

/// `key=value` tokens separated by whitespace.
fn parse_attrs(text: &str) -> Result<Attrs, String> {
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        let Some((k, v)) = tok.split_once('=') else {
            return Err(format!("expected key=value, got '{tok}'"));
        };
        out.push((k.to_string(), v.to_string()));
    }
    Ok(Attrs(out))
}
