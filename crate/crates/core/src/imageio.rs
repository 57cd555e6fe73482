//! Grid file formats: PFM for float images, binary PGM for masks and
//! 16-bit grayscale PNG for packed label maps.
//!
//! Grids are `[[row, col]]` with row 0 at the top. PFM stores rows bottom
//! to top; this module flips on read and write.

use std::path::Path;

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("malformed {format} header: {msg}")]
    Header { format: &'static str, msg: String },
    #[error("{format} data truncated: expected {expected} bytes, got {got}")]
    Truncated { format: &'static str, expected: usize, got: usize },
    #[error("label {0} does not fit in 16 bits")]
    LabelRange(u32),
    #[error(transparent)]
    Png(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits off `n` whitespace-separated header tokens, skipping `#` comments,
/// and returns them with the offset just past the single whitespace byte
/// that ends the last token.
fn header_tokens<'a>(bytes: &'a [u8], n: usize, format: &'static str) -> Result<(Vec<&'a str>, usize), ImageIoError> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(ImageIoError::Header { format, msg: "unexpected end of header".into() });
        }
        let tok = std::str::from_utf8(&bytes[start..i])
            .map_err(|_| ImageIoError::Header { format, msg: "non-ASCII header".into() })?;
        tokens.push(tok);
    }
    if i >= bytes.len() {
        return Err(ImageIoError::Header { format, msg: "missing data".into() });
    }
    Ok((tokens, i + 1))
}

fn parse_dim(tok: &str, format: &'static str) -> Result<usize, ImageIoError> {
    tok.parse::<usize>()
        .ok()
        .filter(|&v| v > 0)
        .ok_or_else(|| ImageIoError::Header { format, msg: format!("bad dimension {tok:?}") })
}

/// Single-channel little-endian PFM.
pub fn encode_pfm(grid: &Array2<f32>) -> Vec<u8> {
    let (h, w) = grid.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for row in grid.rows().into_iter().rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Array2<f32>, ImageIoError> {
    const F: &str = "PFM";
    let (tok, off) = header_tokens(bytes, 4, F)?;
    if tok[0] != "Pf" {
        return Err(ImageIoError::Header { format: F, msg: format!("expected Pf, got {:?}", tok[0]) });
    }
    let w = parse_dim(tok[1], F)?;
    let h = parse_dim(tok[2], F)?;
    let scale: f64 = tok[3].parse().map_err(|_| ImageIoError::Header { format: F, msg: "bad scale".into() })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImageIoError::Header { format: F, msg: "bad scale".into() });
    }
    let little = scale < 0.0;
    let expected = 4 * h * w;
    let data = &bytes[off..];
    if data.len() < expected {
        return Err(ImageIoError::Truncated { format: F, expected, got: data.len() });
    }
    let mut grid = Array2::zeros((h, w));
    for (i, b) in data[..expected].chunks_exact(4).enumerate() {
        let b = [b[0], b[1], b[2], b[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        grid[[h - 1 - i / w, i % w]] = v;
    }
    Ok(grid)
}

/// 8-bit binary PGM.
pub fn encode_pgm(grid: &Array2<u8>) -> Vec<u8> {
    let (h, w) = grid.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(grid.iter());
    out
}

/// Binary PGM with maxval up to 65535 (16-bit samples are big-endian).
pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<u16>, ImageIoError> {
    const F: &str = "PGM";
    let (tok, off) = header_tokens(bytes, 4, F)?;
    if tok[0] != "P5" {
        return Err(ImageIoError::Header { format: F, msg: format!("expected P5, got {:?}", tok[0]) });
    }
    let w = parse_dim(tok[1], F)?;
    let h = parse_dim(tok[2], F)?;
    let maxval = tok[3]
        .parse::<u32>()
        .ok()
        .filter(|m| (1..=65535).contains(m))
        .ok_or_else(|| ImageIoError::Header { format: F, msg: "bad maxval".into() })?;
    let wide = maxval > 255;
    let expected = h * w * if wide { 2 } else { 1 };
    let data = &bytes[off..];
    if data.len() < expected {
        return Err(ImageIoError::Truncated { format: F, expected, got: data.len() });
    }
    let values: Vec<u16> = if wide {
        data[..expected].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        data[..expected].iter().map(|&b| b as u16).collect()
    };
    Ok(Array2::from_shape_vec((h, w), values).expect("length checked"))
}

pub fn mask_to_pgm(mask: &Array2<bool>) -> Vec<u8> {
    encode_pgm(&mask.mapv(|m| if m { 255 } else { 0 }))
}

/// Nonzero samples are `true`.
pub fn pgm_to_mask(bytes: &[u8]) -> Result<Array2<bool>, ImageIoError> {
    Ok(decode_pgm(bytes)?.mapv(|v| v != 0))
}

pub fn write_label_png(path: &Path, labels: &Array2<u32>) -> Result<(), ImageIoError> {
    let (h, w) = labels.dim();
    let mut raw = Vec::with_capacity(h * w);
    for &l in labels {
        raw.push(u16::try_from(l).map_err(|_| ImageIoError::LabelRange(l))?);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_label_png(path: &Path) -> Result<Array2<u32>, ImageIoError> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(u32::from).collect();
    Ok(Array2::from_shape_vec((h as usize, w as usize), data).expect("buffer size"))
}

pub fn read_pfm(path: &Path) -> Result<Array2<f32>, ImageIoError> {
    decode_pfm(&std::fs::read(path)?)
}

pub fn write_pfm(path: &Path, grid: &Array2<f32>) -> Result<(), ImageIoError> {
    Ok(std::fs::write(path, encode_pfm(grid))?)
}

pub fn read_mask(path: &Path) -> Result<Array2<bool>, ImageIoError> {
    pgm_to_mask(&std::fs::read(path)?)
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<(), ImageIoError> {
    Ok(std::fs::write(path, mask_to_pgm(mask))?)
}
