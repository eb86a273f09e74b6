//! Binary PNM readers and writers: PGM (P5) for grayscale and label
//! rasters, 16-bit PGM for depth in millimeters, PPM (P6) for RGB.
//!
//! The writers emit a canonical header (`P5\n<w> <h>\n<maxval>\n`), so a
//! file produced here round-trips bit-exactly through the reader.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DepthImage, GrayImage, ImagingError, RgbImage};

fn io_err(path: &Path, source: std::io::Error) -> ImagingError {
    ImagingError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> ImagingError {
    ImagingError::BadFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

/// Parses a PNM header: magic, then three ASCII integers separated by
/// whitespace, with `#` comments allowed, terminated by one whitespace
/// byte before the raster.
fn parse_header(bytes: &[u8], path: &Path) -> Result<PnmHeader, ImagingError> {
    if bytes.len() < 2 {
        return Err(bad(path, "truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(path, "malformed header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are utf8");
        *field = text
            .parse::<u32>()
            .map_err(|_| bad(path, "header field out of range"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing raster separator"));
    }
    pos += 1;
    Ok(PnmHeader {
        magic,
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: fields[2],
        data_offset: pos,
    })
}

fn read_raster<'a>(
    bytes: &'a [u8],
    header: &PnmHeader,
    bytes_per_pixel: usize,
    path: &Path,
) -> Result<&'a [u8], ImagingError> {
    let need = header.width * header.height * bytes_per_pixel;
    let raster = &bytes[header.data_offset..];
    if raster.len() < need {
        return Err(bad(
            path,
            format!("raster truncated: need {need} bytes, have {}", raster.len()),
        ));
    }
    Ok(&raster[..need])
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(&bytes, path)?;
    if header.magic != *b"P5" {
        return Err(bad(path, "not a binary PGM (expected P5)"));
    }
    if header.maxval != 255 {
        return Err(bad(path, format!("expected maxval 255, got {}", header.maxval)));
    }
    let raster = read_raster(&bytes, &header, 1, path)?;
    GrayImage::new(header.width, header.height, raster.to_vec())
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend_from_slice(img.data());
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(&bytes, path)?;
    if header.magic != *b"P6" {
        return Err(bad(path, "not a binary PPM (expected P6)"));
    }
    if header.maxval != 255 {
        return Err(bad(path, format!("expected maxval 255, got {}", header.maxval)));
    }
    let raster = read_raster(&bytes, &header, 3, path)?;
    RgbImage::new(header.width, header.height, raster.to_vec())
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.data().len() + 32);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).expect("vec write");
    out.extend_from_slice(img.data());
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a 16-bit PGM holding depth in millimeters (big-endian sample
/// order per the PNM spec); 0 marks invalid depth.
pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<DepthImage, ImagingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(&bytes, path)?;
    if header.magic != *b"P5" {
        return Err(bad(path, "not a binary PGM (expected P5)"));
    }
    if header.maxval != 65535 {
        return Err(bad(
            path,
            format!("expected maxval 65535 for depth, got {}", header.maxval),
        ));
    }
    let raster = read_raster(&bytes, &header, 2, path)?;
    let data = raster
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 1000.0)
        .collect();
    DepthImage::new(header.width, header.height, data)
}

pub fn write_depth_pgm(depth: &DepthImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(depth.data().len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", depth.width(), depth.height()).expect("vec write");
    for &z in depth.data() {
        let mm = if z > 0.0 {
            (z as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&mm.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads an 8-bit PGM as a raw per-pixel label raster (no maxval
/// restriction beyond 255). Validation of the label range happens in the
/// semantics module.
pub fn read_label_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImagingError> {
    read_pgm(path)
}

pub fn write_label_pgm(labels: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    write_pgm(labels, path)
}
