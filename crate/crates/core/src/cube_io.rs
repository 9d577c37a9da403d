//! `.hdr` text header + little-endian raw payload.
//!
//! ```text
//! ENVI
//! description = synthetic scene
//! samples = 640
//! lines = 600
//! bands = 270
//! interleave = bsq
//! data type = f32
//! byte order = 0
//! wavelengths = 400,402.23,...
//! data file = scene.raw
//! ```
//!
//! Keys may be separated from values by `=` or `:`. Unknown keys are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cube::{Interleave, SpectralCube};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    U16,
    #[default]
    F32,
}

impl DataType {
    pub fn size(self) -> usize {
        match self {
            DataType::U16 => 2,
            DataType::F32 => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "u16" | "uint16" | "12" => Ok(DataType::U16),
            "f32" | "float32" | "4" => Ok(DataType::F32),
            other => Err(Error::Header(format!("unsupported data type `{other}`"))),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            DataType::U16 => "u16",
            DataType::F32 => "f32",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub wavelengths: Vec<f64>,
    pub description: Option<String>,
    pub data_file: Option<String>,
}

impl CubeHeader {
    pub fn for_cube(cube: &SpectralCube, data_type: DataType) -> Self {
        CubeHeader {
            samples: cube.width(),
            lines: cube.height(),
            bands: cube.bands(),
            interleave: cube.interleave(),
            data_type,
            wavelengths: cube.wavelengths().to_vec(),
            description: None,
            data_file: None,
        }
    }

    pub fn payload_len(&self) -> u64 {
        (self.samples * self.lines * self.bands * self.data_type.size()) as u64
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = None;
        let mut lines = None;
        let mut bands = None;
        let mut interleave = Interleave::Bsq;
        let mut data_type = None;
        let mut wavelengths = None;
        let mut description = None;
        let mut data_file = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') || line.eq_ignore_ascii_case("envi") {
                continue;
            }
            let Some(split) = line.find(['=', ':']) else {
                return Err(Error::Header(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = line[..split].trim().to_ascii_lowercase();
            let value = line[split + 1..]
                .trim()
                .trim_start_matches('{')
                .trim_end_matches('}')
                .trim();
            let count = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Header(format!("`{key}` is not a count: `{v}`")))
            };
            match key.as_str() {
                "samples" => samples = Some(count(value)?),
                "lines" => lines = Some(count(value)?),
                "bands" => bands = Some(count(value)?),
                "interleave" => interleave = value.parse()?,
                "data type" => data_type = Some(DataType::parse(value)?),
                "byte order" => {
                    if !matches!(value, "0" | "little") {
                        return Err(Error::Header(format!(
                            "only little-endian payloads are supported, got `{value}`"
                        )));
                    }
                }
                "wavelengths" | "wavelength" => {
                    let wl = value
                        .split(',')
                        .map(|w| {
                            w.trim().parse::<f64>().map_err(|_| {
                                Error::Header(format!("bad wavelength `{}`", w.trim()))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    wavelengths = Some(wl);
                }
                "description" => description = Some(value.to_string()),
                "data file" => data_file = Some(value.to_string()),
                _ => {}
            }
        }

        let missing = |k: &str| Error::Header(format!("missing required key `{k}`"));
        let bands = bands.ok_or_else(|| missing("bands"))?;
        let wavelengths = wavelengths.ok_or_else(|| missing("wavelengths"))?;
        if wavelengths.len() != bands {
            return Err(Error::Header(format!(
                "{} wavelengths listed for {bands} bands",
                wavelengths.len()
            )));
        }
        Ok(CubeHeader {
            samples: samples.ok_or_else(|| missing("samples"))?,
            lines: lines.ok_or_else(|| missing("lines"))?,
            bands,
            interleave,
            data_type: data_type.ok_or_else(|| missing("data type"))?,
            wavelengths,
            description,
            data_file,
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::from("ENVI\n");
        if let Some(d) = &self.description {
            let _ = writeln!(s, "description = {d}");
        }
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "lines = {}", self.lines);
        let _ = writeln!(s, "bands = {}", self.bands);
        let _ = writeln!(s, "interleave = {}", self.interleave.as_str());
        let _ = writeln!(s, "data type = {}", self.data_type.as_str());
        let _ = writeln!(s, "byte order = 0");
        let wl: Vec<String> = self.wavelengths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "wavelengths = {}", wl.join(","));
        if let Some(f) = &self.data_file {
            let _ = writeln!(s, "data file = {f}");
        }
        s
    }
}

fn header_and_payload_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.extension().is_some_and(|e| e == "hdr") {
        (path.to_path_buf(), path.with_extension("raw"))
    } else {
        (path.with_extension("hdr"), path.with_extension("raw"))
    }
}

/// Order in which samples appear on disk: yields (x, y, band) triples.
fn for_each_file_index(
    w: usize,
    h: usize,
    bands: usize,
    interleave: Interleave,
    mut f: impl FnMut(usize, usize, usize),
) {
    match interleave {
        Interleave::Bsq => {
            for b in 0..bands {
                for y in 0..h {
                    for x in 0..w {
                        f(x, y, b);
                    }
                }
            }
        }
        Interleave::Bil => {
            for y in 0..h {
                for b in 0..bands {
                    for x in 0..w {
                        f(x, y, b);
                    }
                }
            }
        }
    }
}

/// Encodes the cube's samples in the cube's own interleave.
pub fn encode_payload(cube: &SpectralCube, data_type: DataType) -> Vec<u8> {
    let mut out = Vec::with_capacity(cube.as_slice().len() * data_type.size());
    for_each_file_index(
        cube.width(),
        cube.height(),
        cube.bands(),
        cube.interleave(),
        |x, y, b| {
            let v = cube.get(x, y, b);
            match data_type {
                DataType::F32 => out.extend_from_slice(&v.to_le_bytes()),
                DataType::U16 => {
                    let q = v.round().clamp(0.0, u16::MAX as f32) as u16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
            }
        },
    );
    out
}

pub fn decode_payload(header: &CubeHeader, bytes: &[u8]) -> Result<SpectralCube> {
    let expected = header.payload_len();
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let (w, h, bands) = (header.samples, header.lines, header.bands);
    let mut data = vec![0f32; w * h * bands];
    let size = header.data_type.size();
    let mut off = 0;
    for_each_file_index(w, h, bands, header.interleave, |x, y, b| {
        let chunk = &bytes[off..off + size];
        data[(y * w + x) * bands + b] = match header.data_type {
            DataType::F32 => f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]),
            DataType::U16 => u16::from_le_bytes([chunk[0], chunk[1]]) as f32,
        };
        off += size;
    });
    Ok(SpectralCube::new(w, h, header.wavelengths.clone(), data)?.with_interleave(header.interleave))
}

/// Reads a cube given either its `.hdr` or its payload path.
pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let (hdr_path, default_raw) = header_and_payload_paths(path.as_ref());
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = CubeHeader::parse(&text)?;
    let raw_path = match &header.data_file {
        Some(name) => hdr_path.parent().unwrap_or(Path::new(".")).join(name),
        None => default_raw,
    };
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    decode_payload(&header, &bytes)
}

/// Writes `<stem>.hdr` and `<stem>.raw`; returns the header path.
pub fn write_cube(
    cube: &SpectralCube,
    path: impl AsRef<Path>,
    data_type: DataType,
) -> Result<PathBuf> {
    write_cube_described(cube, path, data_type, None)
}

pub fn write_cube_described(
    cube: &SpectralCube,
    path: impl AsRef<Path>,
    data_type: DataType,
    description: Option<&str>,
) -> Result<PathBuf> {
    let (hdr_path, raw_path) = header_and_payload_paths(path.as_ref());
    let mut header = CubeHeader::for_cube(cube, data_type);
    header.description = description.map(str::to_string);
    header.data_file = raw_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned());
    fs::write(&raw_path, encode_payload(cube, data_type)).map_err(|e| Error::io(&raw_path, e))?;
    fs::write(&hdr_path, header.render()).map_err(|e| Error::io(&hdr_path, e))?;
    Ok(hdr_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::linspace_wavelengths;

    #[test]
    fn header_round_trip() {
        let h = CubeHeader {
            samples: 640,
            lines: 600,
            bands: 3,
            interleave: Interleave::Bil,
            data_type: DataType::U16,
            wavelengths: vec![400.0, 700.125, 1000.0],
            description: Some("test scene".into()),
            data_file: Some("x.raw".into()),
        };
        assert_eq!(CubeHeader::parse(&h.render()).unwrap(), h);
    }

    #[test]
    fn header_accepts_colons_braces_and_unknown_keys() {
        let text = "ENVI\nsamples: 2\nlines : 1\nbands=2\nfoo = bar\n\
                    data type = 4\nwavelength = {450.5, 550}\n";
        let h = CubeHeader::parse(text).unwrap();
        assert_eq!((h.samples, h.lines, h.bands), (2, 1, 2));
        assert_eq!(h.data_type, DataType::F32);
        assert_eq!(h.wavelengths, vec![450.5, 550.0]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            CubeHeader::parse("samples = x\n"),
            Err(Error::Header(_))
        ));
        assert!(CubeHeader::parse("samples = 1\nlines = 1\nbands = 1\ndata type = f32\n").is_err());
        assert!(CubeHeader::parse(
            "samples = 1\nlines = 1\nbands = 2\ndata type = f32\nwavelengths = 1\n"
        )
        .is_err());
        assert!(CubeHeader::parse("garbage line\n").is_err());
        assert!(CubeHeader::parse("byte order = 1\n").is_err());
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let h = CubeHeader {
            samples: 640,
            lines: 600,
            bands: 270,
            interleave: Interleave::Bsq,
            data_type: DataType::U16,
            wavelengths: linspace_wavelengths(270, 400.0, 1000.0),
            description: None,
            data_file: None,
        };
        assert!(matches!(
            decode_payload(&h, &[0u8; 100]),
            Err(Error::SizeMismatch { expected: 207_360_000, actual: 100 })
        ));
    }

    #[test]
    fn u16_rounds_and_clamps() {
        let c = SpectralCube::new(3, 1, vec![500.0], vec![1.4, -3.0, 70000.0]).unwrap();
        let bytes = encode_payload(&c, DataType::U16);
        let h = CubeHeader::for_cube(&c, DataType::U16);
        let back = decode_payload(&h, &bytes).unwrap();
        assert_eq!(back.as_slice(), &[1.0, 0.0, 65535.0]);
    }
}
