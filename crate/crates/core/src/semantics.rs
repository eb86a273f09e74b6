//! Per-frame semantic label masks and the dynamic-class policy.
//!
//! Masks are an input contract: 8-bit rasters whose pixel values are
//! class ids of the twenty-class palette below (0 = background),
//! produced offline by any segmenter or by the synthetic renderer. This
//! module implements the policy side: which classes count as potentially
//! dynamic, which features get rejected, and the per-object movement
//! check that combines masks with epipolar outliers.

use std::collections::VecDeque;
use std::path::Path;

use thiserror::Error;

use crate::flow::{FlowPoint, FlowStatus};
use crate::imaging::{read_label_pgm, ImagingError};

pub const NUM_CLASSES: u8 = 20;

/// The twenty-class palette, ids 1..=20 in this order; 0 is background.
pub const CLASS_NAMES: [&str; NUM_CLASSES as usize] = [
    "airplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "dining table",
    "dog",
    "horse",
    "motorbike",
    "person",
    "potted plant",
    "sheep",
    "sofa",
    "train",
    "tv/monitor",
];

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("mask {path} missing (strict mode)")]
    MissingMask { path: String },
    #[error("mask {path} is {got_w}x{got_h}, frame is {want_w}x{want_h}")]
    SizeMismatch {
        path: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("mask {path} holds label {label} at ({x}, {y}), valid ids are 0..=20")]
    BadLabel {
        path: String,
        label: u8,
        x: usize,
        y: usize,
    },
    #[error("unknown class name '{0}'")]
    UnknownClass(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Per-pixel class ids paired with a left frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, SemanticsError> {
        assert_eq!(labels.len(), width * height);
        for (i, &l) in labels.iter().enumerate() {
            if l > NUM_CLASSES {
                return Err(SemanticsError::BadLabel {
                    path: "<memory>".into(),
                    label: l,
                    x: i % width,
                    y: i / width,
                });
            }
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label <= NUM_CLASSES);
        self.labels[y * self.width + x] = label;
    }

    /// Label under a subpixel point, nearest-pixel with clamping.
    #[inline]
    pub fn label_at(&self, x: f64, y: f64) -> u8 {
        let xi = (x.round() as i64).clamp(0, self.width as i64 - 1) as usize;
        let yi = (y.round() as i64).clamp(0, self.height as i64 - 1) as usize;
        self.labels[yi * self.width + xi]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Class palette plus the subset treated as potentially dynamic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    /// Bit i set = class id i is potentially dynamic (bit 0 unused).
    dynamic_bits: u32,
}

impl Default for ClassTable {
    /// The plausibly mobile classes: every animal and vehicle plus
    /// person; furniture and fixtures stay static.
    fn default() -> Self {
        let mut t = Self { dynamic_bits: 0 };
        for name in [
            "person",
            "car",
            "bus",
            "bicycle",
            "motorbike",
            "dog",
            "cat",
            "bird",
            "cow",
            "horse",
            "sheep",
            "boat",
            "airplane",
            "train",
        ] {
            t.set_dynamic(Self::id_of(name).expect("default names are valid"), true);
        }
        t
    }
}

impl ClassTable {
    pub fn empty() -> Self {
        Self { dynamic_bits: 0 }
    }

    pub fn from_names(names: &[&str]) -> Result<Self, SemanticsError> {
        let mut t = Self::empty();
        for n in names {
            let id =
                Self::id_of(n).ok_or_else(|| SemanticsError::UnknownClass(n.to_string()))?;
            t.set_dynamic(id, true);
        }
        Ok(t)
    }

    pub fn id_of(name: &str) -> Option<u8> {
        let needle = name.trim().to_ascii_lowercase();
        CLASS_NAMES
            .iter()
            .position(|&n| n == needle)
            .map(|i| (i + 1) as u8)
    }

    pub fn name_of(id: u8) -> Option<&'static str> {
        (1..=NUM_CLASSES)
            .contains(&id)
            .then(|| CLASS_NAMES[(id - 1) as usize])
    }

    pub fn set_dynamic(&mut self, id: u8, dynamic: bool) {
        assert!((1..=NUM_CLASSES).contains(&id));
        if dynamic {
            self.dynamic_bits |= 1 << id;
        } else {
            self.dynamic_bits &= !(1 << id);
        }
    }

    #[inline]
    pub fn is_dynamic(&self, id: u8) -> bool {
        id >= 1 && id <= NUM_CLASSES && (self.dynamic_bits >> id) & 1 == 1
    }

    pub fn dynamic_ids(&self) -> Vec<u8> {
        (1..=NUM_CLASSES).filter(|&id| self.is_dynamic(id)).collect()
    }
}

/// One connected blob of a single class.
#[derive(Debug, Clone)]
pub struct ObjectInstance {
    pub class_id: u8,
    /// Linear pixel indices (y * width + x), in scan order.
    pub pixels: Vec<u32>,
    /// (x_min, y_min, x_max, y_max), inclusive.
    pub bbox: (usize, usize, usize, usize),
    pub moving: bool,
}

/// Loads a mask raster and validates it against the paired frame.
/// A missing file is fatal under `strict`, otherwise it degrades to an
/// all-background mask with a logged warning. A size mismatch is always
/// fatal.
pub fn load_mask(
    path: impl AsRef<Path>,
    expected: (usize, usize),
    strict: bool,
) -> Result<LabelMask, SemanticsError> {
    let path = path.as_ref();
    if !path.exists() {
        if strict {
            return Err(SemanticsError::MissingMask {
                path: path.display().to_string(),
            });
        }
        log::warn!(
            "mask {} missing, treating frame as all background",
            path.display()
        );
        return Ok(LabelMask::background(expected.0, expected.1));
    }
    let raster = read_label_pgm(path)?;
    if (raster.width(), raster.height()) != expected {
        return Err(SemanticsError::SizeMismatch {
            path: path.display().to_string(),
            got_w: raster.width(),
            got_h: raster.height(),
            want_w: expected.0,
            want_h: expected.1,
        });
    }
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            let l = raster.get(x, y);
            if l > NUM_CLASSES {
                return Err(SemanticsError::BadLabel {
                    path: path.display().to_string(),
                    label: l,
                    x,
                    y,
                });
            }
        }
    }
    Ok(LabelMask {
        width: raster.width(),
        height: raster.height(),
        labels: raster.data().to_vec(),
    })
}

/// 8-connected components per class id; blobs smaller than `min_area`
/// pixels are discarded. Instances come back in discovery (scan) order.
pub fn connected_components(mask: &LabelMask, min_area: usize) -> Vec<ObjectInstance> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if visited[start] || mask.labels[start] == 0 {
            continue;
        }
        let class_id = mask.labels[start];
        let mut pixels = Vec::new();
        let mut bbox = (usize::MAX, usize::MAX, 0usize, 0usize);
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            pixels.push(i as u32);
            let (x, y) = (i % w, i / w);
            bbox = (
                bbox.0.min(x),
                bbox.1.min(y),
                bbox.2.max(x),
                bbox.3.max(y),
            );
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if !visited[ni] && mask.labels[ni] == class_id {
                        visited[ni] = true;
                        queue.push_back(ni);
                    }
                }
            }
        }
        if pixels.len() >= min_area {
            pixels.sort_unstable();
            out.push(ObjectInstance {
                class_id,
                pixels,
                bbox,
                moving: false,
            });
        }
    }
    out
}

/// Grows every dynamic-class region by a rasterized disk. A pixel that
/// already carries a dynamic label keeps it; non-dynamic labels and
/// background may be overwritten by a dynamic id, never the other way
/// around.
pub fn dilate_dynamic(mask: &LabelMask, radius: usize, table: &ClassTable) -> LabelMask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let mut disk = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                disk.push((dx, dy));
            }
        }
    }
    let (w, h) = (mask.width, mask.height);
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            let id = mask.labels[y * w + x];
            if !table.is_dynamic(id) {
                continue;
            }
            for &(dx, dy) in &disk {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let ni = ny as usize * w + nx as usize;
                // First dynamic writer in scan order wins; original
                // dynamic labels are never replaced.
                if !table.is_dynamic(mask.labels[ni]) && !table.is_dynamic(out.labels[ni]) {
                    out.labels[ni] = id;
                }
            }
        }
    }
    out
}

/// Keep/reject flags for level-0 feature locations: reject iff the pixel
/// label belongs to the dynamic set (true = keep).
pub fn reject_masked_features(
    points_l0: &[(f64, f64)],
    mask: &LabelMask,
    table: &ClassTable,
) -> Vec<bool> {
    points_l0
        .iter()
        .map(|&(x, y)| !table.is_dynamic(mask.label_at(x, y)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MovementParams {
    /// Outlier fraction above which an object counts as moving.
    pub tau_move: f64,
    /// Minimum flow points inside an object for a verdict; below this the
    /// object is conservatively treated as moving.
    pub n_min: usize,
}

impl Default for MovementParams {
    fn default() -> Self {
        Self {
            tau_move: 0.5,
            n_min: 5,
        }
    }
}

/// Per-object moving flags from the epipolar classification of tracked
/// flow points falling inside each object (current-frame positions).
/// `epi_inlier[i]` pairs with `flows[i]`; points that are not `Tracked`
/// are ignored.
pub fn movement_check(
    objs: &[ObjectInstance],
    mask_dims: (usize, usize),
    flows: &[FlowPoint],
    epi_inlier: &[bool],
    params: &MovementParams,
) -> Vec<bool> {
    assert_eq!(flows.len(), epi_inlier.len());
    let (w, h) = mask_dims;
    // Object index raster for O(1) point-in-object lookups.
    const NONE: u32 = u32::MAX;
    let mut index = vec![NONE; w * h];
    for (oi, obj) in objs.iter().enumerate() {
        for &p in &obj.pixels {
            index[p as usize] = oi as u32;
        }
    }
    let mut total = vec![0usize; objs.len()];
    let mut outliers = vec![0usize; objs.len()];
    for (f, &inlier) in flows.iter().zip(epi_inlier) {
        if f.status != FlowStatus::Tracked {
            continue;
        }
        let x = (f.curr.0.round() as i64).clamp(0, w as i64 - 1) as usize;
        let y = (f.curr.1.round() as i64).clamp(0, h as i64 - 1) as usize;
        let oi = index[y * w + x];
        if oi == NONE {
            continue;
        }
        total[oi as usize] += 1;
        if !inlier {
            outliers[oi as usize] += 1;
        }
    }
    (0..objs.len())
        .map(|i| {
            if total[i] < params.n_min {
                true // too few observations: conservative default
            } else {
                outliers[i] as f64 / total[i] as f64 > params.tau_move
            }
        })
        .collect()
}
