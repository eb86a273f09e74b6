//! Colored point clouds and the log-odds occupancy voxel map.
//!
//! The map is a sparse hash of integer cells rather than a literal
//! octree: the observable behavior (occupancy after hits, free-space
//! carving along rays, refill of vacated space) is the same at this
//! scale and far easier to verify. Within one integrated cloud each cell
//! is updated at most once, and a cell that is both an endpoint and a
//! ray pass-through receives only the hit.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::{BuildHasherDefault, Hasher};
use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

use crate::config::MapConfig;
use crate::geometry::{backproject, CameraIntrinsics};
use crate::imaging::{DepthImage, RgbImage};
use crate::odometry::PoseSE3;
use crate::semantics::{ClassTable, LabelMask};

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("raster dimensions disagree: left {left_w}x{left_h}, depth {depth_w}x{depth_h}{mask}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        depth_w: usize,
        depth_h: usize,
        mask: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    BadPly {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Camera-frame points with their left-image colors.
#[derive(Debug, Clone, Default)]
pub struct LocalCloud {
    pub points: Vec<(Point3<f64>, [u8; 3])>,
}

/// Multiply-mix hasher for cell indices; the default SipHash dominates
/// integration time on dense clouds.
#[derive(Default, Clone)]
struct CellHasher(u64);

impl Hasher for CellHasher {
    #[inline]
    fn finish(&self) -> u64 {
        self.0
    }

    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x0100_0000_01b3);
        }
    }

    #[inline]
    fn write_i32(&mut self, i: i32) {
        self.0 = (self.0 ^ i as u32 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.0 ^= self.0 >> 29;
    }
}

type CellIndexMap<V> = HashMap<(i32, i32, i32), V, BuildHasherDefault<CellHasher>>;
type CellIndexSet = HashSet<(i32, i32, i32), BuildHasherDefault<CellHasher>>;

#[derive(Debug, Clone, Copy)]
struct Cell {
    log_odds: f64,
    color_sum: [f64; 3],
    samples: u32,
}

/// Sparse occupancy grid; a cell is occupied iff its log odds are
/// positive.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    config: MapConfig,
    cells: HashMap<(i32, i32, i32), Cell>,
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        Self {
            config,
            cells: HashMap::new(),
        }
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn cell_of(&self, p: &Point3<f64>) -> (i32, i32, i32) {
        (
            (p.x / self.config.resolution).floor() as i32,
            (p.y / self.config.resolution).floor() as i32,
            (p.z / self.config.resolution).floor() as i32,
        )
    }

    /// Center of a cell in world coordinates.
    pub fn cell_center(&self, c: (i32, i32, i32)) -> Point3<f64> {
        let r = self.config.resolution;
        Point3::new(
            (c.0 as f64 + 0.5) * r,
            (c.1 as f64 + 0.5) * r,
            (c.2 as f64 + 0.5) * r,
        )
    }

    pub fn log_odds(&self, c: (i32, i32, i32)) -> Option<f64> {
        self.cells.get(&c).map(|cell| cell.log_odds)
    }

    pub fn is_occupied(&self, c: (i32, i32, i32)) -> bool {
        self.log_odds(c).map(|lo| lo > 0.0).unwrap_or(false)
    }

    /// Occupied cells in lexicographic order with their mean colors.
    pub fn occupied_cells(&self) -> Vec<((i32, i32, i32), [u8; 3])> {
        let mut out: Vec<_> = self
            .cells
            .iter()
            .filter(|(_, cell)| cell.log_odds > 0.0)
            .map(|(&idx, cell)| {
                let n = cell.samples.max(1) as f64;
                let color = [
                    (cell.color_sum[0] / n).round().clamp(0.0, 255.0) as u8,
                    (cell.color_sum[1] / n).round().clamp(0.0, 255.0) as u8,
                    (cell.color_sum[2] / n).round().clamp(0.0, 255.0) as u8,
                ];
                (idx, color)
            })
            .collect();
        out.sort_unstable_by_key(|&(idx, _)| idx);
        out
    }
}

/// Builds the per-frame cloud: every `stride`-th pixel with a valid
/// depth within `max_cloud_depth`, skipping dynamic-class pixels when a
/// mask is given, colored from the left frame.
pub fn build_local_cloud(
    left: &RgbImage,
    depth: &DepthImage,
    mask: Option<&LabelMask>,
    k: &CameraIntrinsics,
    table: &ClassTable,
    max_cloud_depth: f64,
    stride: usize,
) -> Result<LocalCloud, MappingError> {
    assert!(stride >= 1);
    let dims_ok = left.width() == depth.width() && left.height() == depth.height();
    let mask_ok = mask.map_or(true, |m| {
        m.width() == left.width() && m.height() == left.height()
    });
    if !dims_ok || !mask_ok {
        return Err(MappingError::DimensionMismatch {
            left_w: left.width(),
            left_h: left.height(),
            depth_w: depth.width(),
            depth_h: depth.height(),
            mask: mask
                .map(|m| format!(", mask {}x{}", m.width(), m.height()))
                .unwrap_or_default(),
        });
    }
    let mut points = Vec::new();
    for y in (0..left.height()).step_by(stride) {
        for x in (0..left.width()).step_by(stride) {
            if let Some(m) = mask {
                if table.is_dynamic(m.get(x, y)) {
                    continue;
                }
            }
            let Some(z) = depth.get(x, y) else { continue };
            let z = z as f64;
            if z > max_cloud_depth {
                continue;
            }
            let p = backproject(x as f64, y as f64, z, k).expect("validated depth");
            points.push((p, left.get(x, y)));
        }
    }
    Ok(LocalCloud { points })
}

/// Fuses one posed cloud into the map: endpoint cells take a hit update,
/// cells along each sensor ray take a miss, each at most once per call.
/// Free space is carved once per distinct endpoint cell (ray to the cell
/// center), which keeps dense clouds affordable.
pub fn integrate(map: &mut VoxelMap, cloud: &LocalCloud, pose: &PoseSE3, sensor_origin: &Point3<f64>) {
    let mut hits: CellIndexMap<([f64; 3], u32)> = CellIndexMap::default();
    let mut misses: CellIndexSet = CellIndexSet::default();
    let origin_cell = map.cell_of(sensor_origin);
    for (p_cam, color) in &cloud.points {
        let p_world = pose.transform(p_cam);
        let end_cell = map.cell_of(&p_world);
        let entry = hits.entry(end_cell).or_insert(([0.0; 3], 0));
        entry.0[0] += color[0] as f64;
        entry.0[1] += color[1] as f64;
        entry.0[2] += color[2] as f64;
        entry.1 += 1;
    }
    let mut scratch = Vec::new();
    for &end_cell in hits.keys() {
        let target = map.cell_center(end_cell);
        walk_ray(map.resolution(), sensor_origin, &target, &mut scratch);
        for &c in &scratch {
            if c != end_cell && c != origin_cell {
                misses.insert(c);
            }
        }
    }

    let cfg = map.config.clone();
    for (idx, (color_sum, n)) in hits.iter() {
        let cell = map.cells.entry(*idx).or_insert(Cell {
            log_odds: 0.0,
            color_sum: [0.0; 3],
            samples: 0,
        });
        cell.log_odds = (cell.log_odds + cfg.l_hit).clamp(cfg.l_min, cfg.l_max);
        for i in 0..3 {
            cell.color_sum[i] += color_sum[i];
        }
        cell.samples += n;
    }
    for idx in misses {
        if hits.contains_key(&idx) {
            continue; // endpoint wins within a frame
        }
        let cell = map.cells.entry(idx).or_insert(Cell {
            log_odds: 0.0,
            color_sum: [0.0; 3],
            samples: 0,
        });
        cell.log_odds = (cell.log_odds + cfg.l_miss).clamp(cfg.l_min, cfg.l_max);
    }
}

/// Integer cells strictly between the origin's and endpoint's cells
/// along the segment (3D digital differential analyzer), collected into
/// the reused `out` buffer.
fn walk_ray(resolution: f64, from: &Point3<f64>, to: &Point3<f64>, out: &mut Vec<(i32, i32, i32)>) {
    out.clear();
    let cell = |p: &Point3<f64>| {
        (
            (p.x / resolution).floor() as i32,
            (p.y / resolution).floor() as i32,
            (p.z / resolution).floor() as i32,
        )
    };
    let start = cell(from);
    let end = cell(to);
    if start == end {
        return;
    }
    let dir = to - from;
    let len = dir.norm();
    if len < 1e-12 {
        return;
    }
    let step = (
        if dir.x > 0.0 { 1i32 } else { -1 },
        if dir.y > 0.0 { 1i32 } else { -1 },
        if dir.z > 0.0 { 1i32 } else { -1 },
    );
    let next_boundary = |i: i32, s: i32| {
        if s > 0 {
            (i + 1) as f64 * resolution
        } else {
            i as f64 * resolution
        }
    };
    let safe_div = |num: f64, den: f64| {
        if den.abs() < 1e-15 {
            f64::INFINITY
        } else {
            num / den
        }
    };
    let mut current = start;
    // t parameterizes the segment on [0, 1]; each t_max holds the
    // parameter of the next boundary crossing along that axis. The walk
    // stops once the next crossing falls beyond the segment, so exact
    // boundary endpoints cannot send it off the rails.
    let mut t_max = (
        safe_div(next_boundary(start.0, step.0) - from.x, dir.x),
        safe_div(next_boundary(start.1, step.1) - from.y, dir.y),
        safe_div(next_boundary(start.2, step.2) - from.z, dir.z),
    );
    let t_delta = (
        safe_div(resolution * step.0 as f64, dir.x),
        safe_div(resolution * step.1 as f64, dir.y),
        safe_div(resolution * step.2 as f64, dir.z),
    );
    loop {
        let t_next = t_max.0.min(t_max.1).min(t_max.2);
        if t_next >= 1.0 {
            break;
        }
        if t_max.0 <= t_max.1 && t_max.0 <= t_max.2 {
            current.0 += step.0;
            t_max.0 += t_delta.0;
        } else if t_max.1 <= t_max.2 {
            current.1 += step.1;
            t_max.1 += t_delta.1;
        } else {
            current.2 += step.2;
            t_max.2 += t_delta.2;
        }
        if current == end {
            break;
        }
        out.push(current);
    }
}

/// Writes occupied cells as ASCII PLY vertices (cell centers, mean
/// colors), lexicographic cell order.
pub fn export_ply(map: &VoxelMap, path: impl AsRef<Path>) -> Result<(), MappingError> {
    let path = path.as_ref();
    let occupied = map.occupied_cells();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", occupied.len()).expect("string write");
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for (idx, color) in occupied {
        let c = map.cell_center(idx);
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {} {} {}",
            c.x, c.y, c.z, color[0], color[1], color[2]
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back an ASCII PLY written by [`export_ply`] (positions and
/// colors only).
pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<(Point3<f64>, [u8; 3])>, MappingError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |line: usize, reason: &str| MappingError::BadPly {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let mut vertex_count: Option<usize> = None;
    for (i, line) in lines.by_ref() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            vertex_count = Some(rest.parse().map_err(|_| bad(i + 1, "bad vertex count"))?);
        }
        if line == "end_header" {
            break;
        }
    }
    let count = vertex_count.ok_or_else(|| bad(1, "missing element vertex"))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 6 {
            return Err(bad(i + 1, "expected 6 fields per vertex"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad float"));
        let c = |s: &str| s.parse::<u8>().map_err(|_| bad(i + 1, "bad color"));
        out.push((
            Point3::new(f(fields[0])?, f(fields[1])?, f(fields[2])?),
            [c(fields[3])?, c(fields[4])?, c(fields[5])?],
        ));
    }
    if out.len() != count {
        return Err(bad(0, "vertex count mismatch"));
    }
    Ok(out)
}

/// Occupancy dump for tests: `i,j,k,log_odds` rows in lexicographic
/// order (all cells, not only occupied ones).
pub fn write_occupancy_csv(map: &VoxelMap, path: impl AsRef<Path>) -> Result<(), MappingError> {
    let path = path.as_ref();
    let mut cells: Vec<_> = map.cells.iter().collect();
    cells.sort_unstable_by_key(|(&idx, _)| idx);
    let mut out = String::from("i,j,k,log_odds\n");
    for (idx, cell) in cells {
        writeln!(out, "{},{},{},{:.6}", idx.0, idx.1, idx.2, cell.log_odds).expect("string write");
    }
    std::fs::write(path, out).map_err(|source| MappingError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn map() -> VoxelMap {
        VoxelMap::new(MapConfig::default())
    }

    fn cloud_of(points: &[(f64, f64, f64)]) -> LocalCloud {
        LocalCloud {
            points: points
                .iter()
                .map(|&(x, y, z)| (Point3::new(x, y, z), [200, 100, 50]))
                .collect(),
        }
    }

    #[test]
    fn empty_cloud_changes_nothing() {
        let mut m = map();
        integrate(&mut m, &LocalCloud::default(), &PoseSE3::identity(), &Point3::origin());
        assert!(m.is_empty());
    }

    #[test]
    fn single_observation_marks_endpoint_and_frees_ray() {
        let mut m = map();
        // Sensor at the center of cell (0,0,0); endpoint straight down z
        // in cell (0,0,10).
        let origin = Point3::new(0.05, 0.05, 0.05);
        integrate(&mut m, &cloud_of(&[(0.05, 0.05, 1.05)]), &PoseSE3::identity(), &origin);
        assert_eq!(m.log_odds((0, 0, 10)), Some(0.85));
        assert!(m.is_occupied((0, 0, 10)));
        for k in 1..10 {
            assert_eq!(m.log_odds((0, 0, k)), Some(-0.4), "ray cell {k}");
        }
        // The sensor's own cell is left alone.
        assert_eq!(m.log_odds((0, 0, 0)), None);
    }

    #[test]
    fn vacated_space_refills_after_seven_misses() {
        // 3 hits then misses: 3*0.85 - n*0.4 crosses zero at n = 7.
        let mut m = map();
        let origin = Point3::new(0.05, 0.05, 0.05);
        let target = cloud_of(&[(0.05, 0.05, 1.05)]);
        for _ in 0..3 {
            integrate(&mut m, &target, &PoseSE3::identity(), &origin);
        }
        assert_eq!(m.log_odds((0, 0, 10)), Some(3.0 * 0.85));
        // Now the object is gone: rays pass through to a farther wall.
        let beyond = cloud_of(&[(0.05, 0.05, 2.05)]);
        for pass in 1..=6 {
            integrate(&mut m, &beyond, &PoseSE3::identity(), &origin);
            assert!(
                m.is_occupied((0, 0, 10)),
                "cell freed too early after {pass} passes"
            );
        }
        integrate(&mut m, &beyond, &PoseSE3::identity(), &origin);
        assert!(!m.is_occupied((0, 0, 10)), "7th miss must free the cell");
        let lo = m.log_odds((0, 0, 10)).unwrap();
        assert!((lo - (3.0 * 0.85 - 7.0 * 0.4)).abs() < 1e-9);
    }

    #[test]
    fn log_odds_stay_clamped() {
        let mut m = map();
        let origin = Point3::new(0.05, 0.05, 0.05);
        let target = cloud_of(&[(0.05, 0.05, 1.05)]);
        for _ in 0..20 {
            integrate(&mut m, &target, &PoseSE3::identity(), &origin);
        }
        assert_eq!(m.log_odds((0, 0, 10)), Some(3.5));
        let beyond = cloud_of(&[(0.05, 0.05, 2.05)]);
        for _ in 0..40 {
            integrate(&mut m, &beyond, &PoseSE3::identity(), &origin);
        }
        assert_eq!(m.log_odds((0, 0, 10)), Some(-2.0));
    }

    #[test]
    fn endpoint_beats_ray_within_one_frame() {
        // Two points along the same ray: the near endpoint is also a
        // pass-through cell of the far one, but receives only the hit.
        let mut m = map();
        let origin = Point3::new(0.05, 0.05, 0.05);
        let cloud = cloud_of(&[(0.05, 0.05, 1.05), (0.05, 0.05, 2.05)]);
        integrate(&mut m, &cloud, &PoseSE3::identity(), &origin);
        assert_eq!(m.log_odds((0, 0, 10)), Some(0.85));
        assert_eq!(m.log_odds((0, 0, 20)), Some(0.85));
        // Integration order within the frame is irrelevant.
        let mut m2 = map();
        let cloud_rev = cloud_of(&[(0.05, 0.05, 2.05), (0.05, 0.05, 1.05)]);
        integrate(&mut m2, &cloud_rev, &PoseSE3::identity(), &origin);
        assert_eq!(m.occupied_cells(), m2.occupied_cells());
        assert_eq!(m.log_odds((0, 0, 15)), m2.log_odds((0, 0, 15)));
    }

    #[test]
    fn ply_export_round_trips() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("map.ply");
        let mut m = map();
        // Empty map first.
        export_ply(&m, &p).unwrap();
        assert!(read_ply(&p).unwrap().is_empty());

        let origin = Point3::new(0.05, 0.05, 0.05);
        integrate(
            &mut m,
            &cloud_of(&[(0.15, 0.25, 0.32), (1.05, -0.44, 2.05)]),
            &PoseSE3::identity(),
            &origin,
        );
        export_ply(&m, &p).unwrap();
        let verts = read_ply(&p).unwrap();
        let expected = m.occupied_cells();
        assert_eq!(verts.len(), expected.len());
        for ((idx, color), (pos, vcolor)) in expected.iter().zip(&verts) {
            let center = m.cell_center(*idx);
            assert!((center - pos).norm() < 1e-5);
            assert_eq!(color, vcolor);
        }
        // Cell (1,2,3) center convention.
        assert!((map().cell_center((1, 2, 3)) - Point3::new(0.15, 0.25, 0.35)).norm() < 1e-12);
    }

    #[test]
    fn local_cloud_respects_mask_depth_and_dims() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        let table = ClassTable::default();
        let left = RgbImage::constant(64, 48, [10, 20, 30]);
        let mut depth = DepthImage::invalid(64, 48);
        depth.set(10, 10, 5.0); // valid
        depth.set(20, 10, 150.0); // beyond max_cloud_depth
        depth.set(30, 10, 5.0); // will be masked
        let mut mask = LabelMask::background(64, 48);
        mask.set(30, 10, 7); // car

        let cloud =
            build_local_cloud(&left, &depth, Some(&mask), &k, &table, 20.0, 1).unwrap();
        assert_eq!(cloud.points.len(), 1);
        let (p, color) = cloud.points[0];
        assert!((p - Point3::new((10.0 - 32.0) * 5.0 / 100.0, (10.0 - 24.0) * 5.0 / 100.0, 5.0)).norm() < 1e-12);
        assert_eq!(color, [10, 20, 30]);

        // Without the mask the car pixel contributes.
        let cloud = build_local_cloud(&left, &depth, None, &k, &table, 20.0, 1).unwrap();
        assert_eq!(cloud.points.len(), 2);

        let bad_depth = DepthImage::invalid(32, 24);
        assert!(build_local_cloud(&left, &bad_depth, None, &k, &table, 20.0, 1).is_err());
    }

    #[test]
    fn occupancy_csv_is_sorted_and_deterministic() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let mut m = map();
        let origin = Point3::new(0.05, 0.05, 0.05);
        integrate(
            &mut m,
            &cloud_of(&[(0.5, 0.2, 1.0), (-0.3, 0.1, 0.8), (0.05, 0.05, 2.0)]),
            &PoseSE3::identity(),
            &origin,
        );
        write_occupancy_csv(&m, &p1).unwrap();
        write_occupancy_csv(&m, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.starts_with("i,j,k,log_odds\n"));
        assert!(text.lines().count() > 3);
    }
}
