//! Binary PGM (P5) images with maxval ≤ 255; masks use 0/255.

use std::fs;
use std::path::Path;

use flowscene_core::OcclusionMask;

use crate::error::{FormatError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u8, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || maxval == 0 {
            return Err(FormatError::invalid("PGM needs positive dimensions and maxval"));
        }
        if data.len() != width * height {
            return Err(FormatError::invalid("PGM data length"));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(FormatError::invalid(format!("pixel {v} above maxval {maxval}")));
        }
        Ok(Self {
            width,
            height,
            maxval,
            data,
        })
    }
}

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Header tokens are separated by whitespace; `#` comments run to end of line.
/// Exactly one whitespace byte separates maxval from the raster.
pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FormatError::BadMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut at = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(at) {
                Some(b'#') => {
                    while bytes.get(at).is_some_and(|&b| b != b'\n') {
                        at += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => at += 1,
                Some(_) => break,
                None => return Err(FormatError::invalid("PGM header ends early")),
            }
        }
        let start = at;
        while bytes.get(at).is_some_and(u8::is_ascii_digit) {
            at += 1;
        }
        *field = std::str::from_utf8(&bytes[start..at])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::invalid("malformed PGM header"))?;
    }
    if !bytes.get(at).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::invalid("malformed PGM header"));
    }
    at += 1;
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(FormatError::invalid(format!("unsupported PGM maxval {maxval}")));
    }
    let n = w
        .checked_mul(h)
        .ok_or_else(|| FormatError::invalid("PGM dimensions overflow"))?;
    let raster = &bytes[at..];
    if raster.len() != n {
        return Err(if raster.len() < n {
            FormatError::Truncated {
                needed: at + n,
                have: bytes.len(),
            }
        } else {
            FormatError::Size {
                got: bytes.len(),
                expected: at + n,
            }
        });
    }
    GrayImage::new(w, h, maxval as u8, raster.to_vec())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    decode(&fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

pub fn mask_to_image(mask: &OcclusionMask) -> GrayImage {
    let data = mask.to_bools().into_iter().map(|b| if b { 255 } else { 0 }).collect();
    GrayImage {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        data,
    }
}

/// 0 → clear, maxval → occluded; anything else is rejected.
pub fn image_to_mask(img: &GrayImage) -> Result<OcclusionMask> {
    let bools = img
        .data
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            v if v == img.maxval => Ok(true),
            v => Err(FormatError::invalid(format!("mask pixel {v} is neither 0 nor {}", img.maxval))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OcclusionMask::from_bools(img.height, img.width, &bools)?)
}

pub fn read_mask(path: &Path) -> Result<OcclusionMask> {
    image_to_mask(&read_pgm(path)?)
}

pub fn write_mask(mask: &OcclusionMask, path: &Path) -> Result<()> {
    write_pgm(&mask_to_image(mask), path)
}
