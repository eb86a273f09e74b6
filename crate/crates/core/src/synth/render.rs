//! Z-buffered triangle rasterization and sequence emission.

use std::path::Path;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraKey, SceneScript, Shape, SynthError};
use crate::imaging::{
    write_depth_pgm, write_pgm, write_ppm, DepthImage, GrayImage, RgbImage,
};
use crate::odometry::{PoseSE3, Trajectory};
use crate::semantics::LabelMask;

const NEAR_PLANE: f64 = 0.1;
/// Minimum visible static-geometry pixels per frame.
const MIN_STATIC_PIXELS: usize = 100;
const BACKGROUND: [u8; 3] = [8, 8, 12];

/// All rasters of one rendered frame plus the ground-truth pose.
pub struct FrameRender {
    pub left_rgb: RgbImage,
    pub right_gray: GrayImage,
    /// Left-camera depth in meters (exact z-buffer values).
    pub depth: DepthImage,
    /// Dynamic-object footprint labels (statics are background).
    pub mask: LabelMask,
    /// Left camera-to-world pose.
    pub pose: PoseSE3,
    pub static_pixels: usize,
    pub dynamic_pixels: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RenderStats {
    pub frames: usize,
    pub min_static_pixels: usize,
    pub max_dynamic_pixels: usize,
}

struct Tri {
    v: [Point3<f64>; 3],
    uv: [(f64, f64); 3],
    texture_seed: u64,
    tint: [f64; 3],
    label: u8,
}

fn camera_isometry(key: &CameraKey) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(key.position.coords),
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), key.yaw),
    )
}

/// Renders one frame of the script (both cameras, depth, mask).
pub fn render_frame(script: &SceneScript, frame: usize) -> Result<FrameRender, SynthError> {
    let tris = build_triangles(script, frame);
    let cam = script.camera_at(frame);
    let left_pose = camera_isometry(&cam);
    let right_offset = left_pose.rotation * Vector3::new(script.baseline, 0.0, 0.0);
    let right_pose = Isometry3::from_parts(
        Translation3::from(left_pose.translation.vector + right_offset),
        left_pose.rotation,
    );

    let left = rasterize(script, &tris, &left_pose);
    let right = rasterize(script, &tris, &right_pose);

    let static_pixels = left
        .depth
        .iter()
        .zip(&left.label)
        .filter(|(&z, &l)| z.is_finite() && l == 0)
        .count();
    if static_pixels < MIN_STATIC_PIXELS {
        return Err(SynthError::NothingInView { frame });
    }
    let dynamic_pixels = left.label.iter().filter(|&&l| l != 0).count();

    // Additive intensity noise, per-frame per-camera streams.
    let mut left_rgb = left.rgb;
    let mut right_intensity = right.intensity;
    if script.noise_sigma > 0.0 {
        add_noise_rgb(
            &mut left_rgb,
            script.noise_sigma,
            &mut ChaCha8Rng::seed_from_u64(script.seed ^ (frame as u64) << 1),
        );
        add_noise_gray(
            &mut right_intensity,
            script.noise_sigma,
            &mut ChaCha8Rng::seed_from_u64(script.seed ^ ((frame as u64) << 1 | 1)),
        );
    }

    let (w, h) = (script.width, script.height);
    let depth_m: Vec<f32> = left
        .depth
        .iter()
        .map(|&z| if z.is_finite() { z as f32 } else { 0.0 })
        .collect();
    Ok(FrameRender {
        left_rgb: RgbImage::new(w, h, left_rgb).expect("buffer sized by renderer"),
        right_gray: GrayImage::new(w, h, right_intensity).expect("buffer sized by renderer"),
        depth: DepthImage::new(w, h, depth_m).expect("buffer sized by renderer"),
        mask: LabelMask::new(w, h, left.label).expect("labels validated by script"),
        pose: PoseSE3::from_isometry(left_pose),
        static_pixels,
        dynamic_pixels,
    })
}

/// Renders the whole sequence into the generic dataset layout:
/// left (PPM), right/depth/mask (PGM), times.txt, settings.txt and
/// ground-truth poses.txt.
pub fn render_sequence(
    script: &SceneScript,
    out_root: impl AsRef<Path>,
) -> Result<RenderStats, SynthError> {
    script.validate()?;
    let out_root = out_root.as_ref();
    let io_err = |p: &Path, source: std::io::Error| SynthError::Io {
        path: p.display().to_string(),
        source,
    };
    for sub in ["left", "right", "depth", "mask"] {
        std::fs::create_dir_all(out_root.join(sub)).map_err(|e| io_err(out_root, e))?;
    }

    let mut stats = RenderStats {
        frames: script.frames,
        min_static_pixels: usize::MAX,
        max_dynamic_pixels: 0,
    };
    let mut trajectory = Trajectory::new();
    let mut times = String::new();
    for frame in 0..script.frames {
        let render = render_frame(script, frame)?;
        stats.min_static_pixels = stats.min_static_pixels.min(render.static_pixels);
        stats.max_dynamic_pixels = stats.max_dynamic_pixels.max(render.dynamic_pixels);
        write_ppm(&render.left_rgb, out_root.join("left").join(format!("{frame:06}.ppm")))?;
        write_pgm(&render.right_gray, out_root.join("right").join(format!("{frame:06}.pgm")))?;
        write_depth_pgm(&render.depth, out_root.join("depth").join(format!("{frame:06}.pgm")))?;
        let mask_img = GrayImage::new(script.width, script.height, render.mask.labels().to_vec())
            .expect("mask buffer");
        write_pgm(&mask_img, out_root.join("mask").join(format!("{frame:06}.pgm")))?;
        trajectory
            .push(script.timestamp(frame), render.pose)
            .expect("strictly increasing frame times");
        times.push_str(&format!("{:.6}\n", script.timestamp(frame)));
    }
    std::fs::write(out_root.join("times.txt"), times).map_err(|e| io_err(out_root, e))?;
    trajectory
        .write_kitti(out_root.join("poses.txt"))
        .map_err(|e| SynthError::Validation(format!("cannot write poses: {e}")))?;
    let settings = format!(
        "# generated stereo sequence\nfx: {}\nfy: {}\ncx: {}\ncy: {}\nbaseline: {}\nseed: {}\n",
        script.fx, script.fy, script.cx, script.cy, script.baseline, script.seed
    );
    std::fs::write(out_root.join("settings.txt"), settings).map_err(|e| io_err(out_root, e))?;
    Ok(stats)
}

struct RasterOut {
    rgb: Vec<u8>,
    intensity: Vec<u8>,
    depth: Vec<f64>,
    label: Vec<u8>,
}

fn rasterize(script: &SceneScript, tris: &[Tri], cam_pose: &Isometry3<f64>) -> RasterOut {
    let (w, h) = (script.width, script.height);
    let world_to_cam = cam_pose.inverse();
    let mut rgb = Vec::with_capacity(3 * w * h);
    for _ in 0..w * h {
        rgb.extend_from_slice(&BACKGROUND);
    }
    let mut intensity = vec![BACKGROUND[0]; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut label = vec![0u8; w * h];

    for tri in tris {
        let cam_pts: Vec<(Point3<f64>, (f64, f64))> = tri
            .v
            .iter()
            .zip(&tri.uv)
            .map(|(p, &uv)| (world_to_cam * p, uv))
            .collect();
        for clipped in clip_near(&cam_pts) {
            raster_triangle(script, &clipped, tri, &mut rgb, &mut intensity, &mut depth, &mut label);
        }
    }
    RasterOut {
        rgb,
        intensity,
        depth,
        label,
    }
}

type ClippedVert = (Point3<f64>, (f64, f64));

/// Sutherland-Hodgman against z >= NEAR_PLANE, fanned back into
/// triangles.
fn clip_near(verts: &[ClippedVert]) -> Vec<[ClippedVert; 3]> {
    let mut poly: Vec<ClippedVert> = Vec::with_capacity(4);
    let n = verts.len();
    for i in 0..n {
        let (a, ua) = verts[i];
        let (b, ub) = verts[(i + 1) % n];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            poly.push((a, ua));
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let p = Point3::from(a.coords + (b.coords - a.coords) * t);
            let uv = (ua.0 + (ub.0 - ua.0) * t, ua.1 + (ub.1 - ua.1) * t);
            poly.push((p, uv));
        }
    }
    let mut out = Vec::new();
    for i in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[i], poly[i + 1]]);
    }
    out
}

fn raster_triangle(
    script: &SceneScript,
    verts: &[ClippedVert; 3],
    tri: &Tri,
    rgb: &mut [u8],
    intensity: &mut [u8],
    depth: &mut [f64],
    label: &mut [u8],
) {
    let (w, h) = (script.width, script.height);
    let project = |p: &Point3<f64>| {
        (
            script.fx * p.x / p.z + script.cx,
            script.fy * p.y / p.z + script.cy,
        )
    };
    let s: Vec<(f64, f64)> = verts.iter().map(|(p, _)| project(p)).collect();
    let area = edge(s[0], s[1], s[2]);
    if area.abs() < 1e-12 {
        return;
    }
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min((w - 1) as f64) as usize;
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min((h - 1) as f64) as usize;
    if min_x > max_x || min_y > max_y {
        return;
    }

    let inv_z: [f64; 3] = [1.0 / verts[0].0.z, 1.0 / verts[1].0.z, 1.0 / verts[2].0.z];
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let p = (x as f64, y as f64);
            let w0 = edge(s[1], s[2], p) / area;
            let w1 = edge(s[2], s[0], p) / area;
            let w2 = edge(s[0], s[1], p) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let zi = w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2];
            let z = 1.0 / zi;
            let idx = y * w + x;
            if z >= depth[idx] {
                continue;
            }
            depth[idx] = z;
            label[idx] = tri.label;
            let u = (w0 * verts[0].1 .0 * inv_z[0]
                + w1 * verts[1].1 .0 * inv_z[1]
                + w2 * verts[2].1 .0 * inv_z[2])
                / zi;
            let v = (w0 * verts[0].1 .1 * inv_z[0]
                + w1 * verts[1].1 .1 * inv_z[1]
                + w2 * verts[2].1 .1 * inv_z[2])
                / zi;
            let t = value_noise(tri.texture_seed, u, v);
            let shade = 40.0 + 185.0 * t;
            let px = [
                (shade * tri.tint[0]).clamp(0.0, 255.0) as u8,
                (shade * tri.tint[1]).clamp(0.0, 255.0) as u8,
                (shade * tri.tint[2]).clamp(0.0, 255.0) as u8,
            ];
            rgb[3 * idx..3 * idx + 3].copy_from_slice(&px);
            // Right-camera gray output uses the same luma convention as
            // the pipeline's RGB conversion.
            intensity[idx] = (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64)
                .round()
                .min(255.0) as u8;
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut v = (x as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    v ^= v >> 33;
    v = v.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    v ^= v >> 33;
    (v & 0xFFFF) as f64 / 65535.0
}

/// Octave-mixed value noise over surface coordinates in meters; smooth
/// enough for subpixel tracking, contrasty enough for corner detection.
fn value_noise(seed: u64, u: f64, v: f64) -> f64 {
    const OCTAVES: [(f64, f64); 4] = [(0.7, 1.0), (0.28, 0.65), (0.12, 0.65), (0.05, 0.6)];
    let mut acc = 0.0;
    let mut total = 0.0;
    for (i, &(wavelength, amp)) in OCTAVES.iter().enumerate() {
        let xf = u / wavelength;
        let yf = v / wavelength;
        let x0 = xf.floor() as i64;
        let y0 = yf.floor() as i64;
        let tx = smoothstep(xf - x0 as f64);
        let ty = smoothstep(yf - y0 as f64);
        let s = seed.wrapping_add(i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
        let val = (1.0 - ty)
            * ((1.0 - tx) * hash2(s, x0, y0) + tx * hash2(s, x0 + 1, y0))
            + ty * ((1.0 - tx) * hash2(s, x0, y0 + 1) + tx * hash2(s, x0 + 1, y0 + 1));
        acc += amp * val;
        total += amp;
    }
    acc / total
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn tint(seed: u64) -> [f64; 3] {
    [
        0.55 + 0.45 * hash2(seed, 101, 7),
        0.55 + 0.45 * hash2(seed, 211, 13),
        0.55 + 0.45 * hash2(seed, 307, 19),
    ]
}

fn build_triangles(script: &SceneScript, frame: usize) -> Vec<Tri> {
    let mut tris = Vec::new();
    for p in &script.statics {
        shape_triangles(&p.shape, p.texture_seed, 0, &mut tris);
    }
    for obj in &script.dynamics {
        let center = script.object_center_at(obj, frame);
        shape_triangles(
            &Shape::Box {
                center,
                size: obj.size,
            },
            obj.texture_seed,
            obj.class_id,
            &mut tris,
        );
    }
    tris
}

fn shape_triangles(shape: &Shape, texture_seed: u64, label: u8, out: &mut Vec<Tri>) {
    let tint = tint(texture_seed);
    let mut quad = |corners: [Point3<f64>; 4], uvs: [(f64, f64); 4]| {
        out.push(Tri {
            v: [corners[0], corners[1], corners[2]],
            uv: [uvs[0], uvs[1], uvs[2]],
            texture_seed,
            tint,
            label,
        });
        out.push(Tri {
            v: [corners[0], corners[2], corners[3]],
            uv: [uvs[0], uvs[2], uvs[3]],
            texture_seed,
            tint,
            label,
        });
    };
    match shape {
        Shape::Plane {
            center,
            normal,
            size,
        } => {
            let n = normal.normalize();
            let up = if n.cross(&Vector3::y()).norm() > 1e-6 {
                Vector3::y()
            } else {
                Vector3::x()
            };
            let t1 = n.cross(&up).normalize();
            let t2 = n.cross(&t1).normalize();
            let (hw, hh) = (size.0 / 2.0, size.1 / 2.0);
            quad(
                [
                    center - t1 * hw - t2 * hh,
                    center + t1 * hw - t2 * hh,
                    center + t1 * hw + t2 * hh,
                    center - t1 * hw + t2 * hh,
                ],
                [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)],
            );
        }
        Shape::Box { center, size } => {
            let (hx, hy, hz) = (size.0 / 2.0, size.1 / 2.0, size.2 / 2.0);
            let c = center;
            // +-z faces (u = x, v = y), +-x faces (u = z, v = y),
            // +-y faces (u = x, v = z); offsets decorrelate the octaves
            // between faces of one box.
            for (sign, off) in [(1.0, 0.0), (-1.0, 37.0)] {
                quad(
                    [
                        Point3::new(c.x - hx, c.y - hy, c.z + sign * hz),
                        Point3::new(c.x + hx, c.y - hy, c.z + sign * hz),
                        Point3::new(c.x + hx, c.y + hy, c.z + sign * hz),
                        Point3::new(c.x - hx, c.y + hy, c.z + sign * hz),
                    ],
                    [
                        (off - hx, -hy),
                        (off + hx, -hy),
                        (off + hx, hy),
                        (off - hx, hy),
                    ],
                );
            }
            for (sign, off) in [(1.0, 91.0), (-1.0, 133.0)] {
                quad(
                    [
                        Point3::new(c.x + sign * hx, c.y - hy, c.z - hz),
                        Point3::new(c.x + sign * hx, c.y - hy, c.z + hz),
                        Point3::new(c.x + sign * hx, c.y + hy, c.z + hz),
                        Point3::new(c.x + sign * hx, c.y + hy, c.z - hz),
                    ],
                    [
                        (off - hz, -hy),
                        (off + hz, -hy),
                        (off + hz, hy),
                        (off - hz, hy),
                    ],
                );
            }
            for (sign, off) in [(1.0, 177.0), (-1.0, 229.0)] {
                quad(
                    [
                        Point3::new(c.x - hx, c.y + sign * hy, c.z - hz),
                        Point3::new(c.x + hx, c.y + sign * hy, c.z - hz),
                        Point3::new(c.x + hx, c.y + sign * hy, c.z + hz),
                        Point3::new(c.x - hx, c.y + sign * hy, c.z + hz),
                    ],
                    [
                        (off - hx, -hz),
                        (off + hx, -hz),
                        (off + hx, hz),
                        (off - hx, hz),
                    ],
                );
            }
        }
    }
}

fn add_noise_rgb(rgb: &mut [u8], sigma: f64, rng: &mut ChaCha8Rng) {
    for px in rgb.chunks_exact_mut(3) {
        let n = gaussian(rng) * sigma;
        for c in px {
            *c = (*c as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
}

fn add_noise_gray(gray: &mut [u8], sigma: f64, rng: &mut ChaCha8Rng) {
    for p in gray {
        *p = (*p as f64 + gaussian(rng) * sigma).round().clamp(0.0, 255.0) as u8;
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
