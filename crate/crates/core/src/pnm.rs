//! Minimal binary/ASCII PGM reader and PGM/PPM writers for masks, attention
//! maps and documentation previews.

use std::fs;
use std::path::Path;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};

/// Single-channel image with samples in `0..=maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, maxval: u16, data: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            return Err(Error::Image("maxval must be positive".into()));
        }
        if data.len() != width * height {
            return Err(Error::Image(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(Error::Image(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(GrayImage {
            width,
            height,
            maxval,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    /// Linearly maps `values` onto `0..=maxval` using their min/max.
    pub fn from_f32_scaled(width: usize, height: usize, values: &[f32], maxval: u16) -> Result<Self> {
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let data = values
            .iter()
            .map(|&v| (((v - lo) / span) * maxval as f32).round() as u16)
            .collect();
        Self::new(width, height, maxval, data)
    }
}

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next_token(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Image("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Image("non-ascii header token".into()))
    }

    fn next_usize(&mut self) -> Result<usize> {
        let t = self.next_token()?;
        t.parse()
            .map_err(|_| Error::Image(format!("expected a number, got `{t}`")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut tok = Tokens { bytes, pos: 0 };
    let magic = tok.next_token()?;
    let width = tok.next_usize()?;
    let height = tok.next_usize()?;
    let maxval = tok.next_usize()?;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::Image(format!("invalid maxval {maxval}")));
    }
    let n = width * height;
    let data = match magic {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = tok.pos + 1;
            let wide = maxval > 255;
            let need = n * if wide { 2 } else { 1 };
            if bytes.len() < start + need {
                return Err(Error::Image(format!(
                    "raster truncated: need {need} bytes, have {}",
                    bytes.len().saturating_sub(start)
                )));
            }
            let raster = &bytes[start..start + need];
            if wide {
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect()
            } else {
                raster.iter().map(|&b| b as u16).collect()
            }
        }
        "P2" => (0..n)
            .map(|_| tok.next_usize().map(|v| v as u16))
            .collect::<Result<Vec<_>>>()?,
        other => return Err(Error::Image(format!("unsupported magic `{other}`"))),
    };
    GrayImage::new(width, height, maxval as u16, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(img.data.iter().map(|&v| v as u8));
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit binary PPM from interleaved RGB bytes.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(Error::Image("rgb buffer size does not match dimensions".into()));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// 8-bit preview of one band, stretched to its own min/max.
pub fn band_preview(cube: &SpectralCube, band: usize) -> Result<GrayImage> {
    GrayImage::from_f32_scaled(cube.width(), cube.height(), &cube.band_plane(band), 255)
}

/// 8-bit false-colour preview from three bands, stretched jointly.
pub fn rgb_preview(cube: &SpectralCube, bands: [usize; 3]) -> Vec<u8> {
    let (lo, hi) = cube.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(cube.width() * cube.height() * 3);
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            for &b in &bands {
                out.push((((cube.get(x, y, b) - lo) / span) * 255.0).round() as u8);
            }
        }
    }
    out
}
