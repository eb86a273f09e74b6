//! Image containers and the ORB feature machinery.
//!
//! Rasters are dense row-major buffers with explicit units: 8-bit
//! intensities for [`GrayImage`], packed RGB for [`RgbImage`], meters for
//! [`DepthImage`]. Pixel (0, 0) is the center of the top-left pixel;
//! subpixel coordinates are valid on `[0, width-1] x [0, height-1]`.

mod fast;
mod harris;
mod orb;
mod pattern;
mod pnm;
mod pyramid;

pub use fast::detect_fast;
pub use harris::{harris_response, ResponseMap};
pub use orb::{
    compute_descriptor, compute_orientation, extract_orb, OrbFeature, OrbParams, DESCRIPTOR_BITS,
};
pub use pattern::BRIEF_PATTERN;
pub use pnm::{
    read_depth_pgm, read_label_pgm, read_pgm, read_ppm, write_depth_pgm, write_label_pgm,
    write_pgm, write_ppm,
};
pub use pyramid::{build_pyramid, ImagePyramid};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions {width}x{height} invalid or too small: {reason}")]
    BadDimensions {
        width: usize,
        height: usize,
        reason: String,
    },
    #[error("pixel buffer length {got} does not match {width}x{height}")]
    BadBufferLength {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("patch around ({x:.1}, {y:.1}) radius {radius} leaves the image")]
    PatchOutOfBounds { x: f32, y: f32, radius: usize },
    #[error("{path}: {reason}")]
    BadFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::BadDimensions {
                width,
                height,
                reason: "zero extent".into(),
            });
        }
        if data.len() != width * height {
            return Err(ImagingError::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("nonzero dims")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("nonzero dims")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = v;
    }

    /// Signed-coordinate access with edge clamping.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let xc = x.clamp(0, self.width as i64 - 1) as usize;
        let yc = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample; the caller must keep (x, y) inside
    /// `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        debug_assert!(x >= 0.0 && x <= (self.width - 1) as f64);
        debug_assert!(y >= 0.0 && y <= (self.height - 1) as f64);
        let x0 = x as usize;
        let y0 = y as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f64;
        let ay = y - y0 as f64;
        let p00 = self.data[y0 * self.width + x0] as f64;
        let p10 = self.data[y0 * self.width + x1] as f64;
        let p01 = self.data[y1 * self.width + x0] as f64;
        let p11 = self.data[y1 * self.width + x1] as f64;
        (1.0 - ay) * ((1.0 - ax) * p00 + ax * p10) + ay * ((1.0 - ax) * p01 + ax * p11)
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

/// Packed 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::BadDimensions {
                width,
                height,
                reason: "zero extent".into(),
            });
        }
        if data.len() != 3 * width * height {
            return Err(ImagingError::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data).expect("nonzero dims")
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        let mut data = Vec::with_capacity(3 * gray.width * gray.height);
        for &v in &gray.data {
            data.extend_from_slice(&[v, v, v]);
        }
        Self {
            width: gray.width,
            height: gray.height,
            data,
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        debug_assert!(x < self.width && y < self.height);
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        debug_assert!(x < self.width && y < self.height);
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fixed luma conversion: round(0.299 R + 0.587 G + 0.114 B).
    pub fn to_gray(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            data.push(luma.round().min(255.0) as u8);
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Per-pixel depth in meters; 0 (or any non-positive value) marks an
/// invalid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::BadDimensions {
                width,
                height,
                reason: "zero extent".into(),
            });
        }
        if data.len() != width * height {
            return Err(ImagingError::BadBufferLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height]).expect("nonzero dims")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        debug_assert!(x < self.width && y < self.height);
        let z = self.data[y * self.width + x];
        (z > 0.0).then_some(z)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, meters: f32) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = meters;
    }
}

/// Detected corner with subpixel location in its pyramid level's
/// coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub x: f32,
    pub y: f32,
    pub level: usize,
    pub response: f32,
    /// Orientation in radians, in [-pi, pi].
    pub angle: f32,
}

impl FeaturePoint {
    /// Location mapped down to level-0 pixel coordinates.
    pub fn level0(&self, scale_factor: f64) -> (f64, f64) {
        let s = scale_factor.powi(self.level as i32);
        (self.x as f64 * s, self.y as f64 * s)
    }
}

/// 256-bit binary descriptor compared under Hamming distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    #[inline]
    pub fn hamming(&self, other: &Self) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}
