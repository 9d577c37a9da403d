//! Hyperspectral cube data model, resolution reduction and patch extraction.
//!
//! Samples are held in memory pixel-interleaved (every pixel's spectrum is
//! contiguous). The [`Interleave`] tag only controls the on-disk layout used
//! by [`crate::cube_io`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band count of the prototype sensor.
pub const PROTOTYPE_BANDS: usize = 270;
pub const PROTOTYPE_MIN_NM: f64 = 400.0;
pub const PROTOTYPE_MAX_NM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    /// Band-sequential: one full image plane per band.
    #[default]
    Bsq,
    /// Band-interleaved-by-line: for each line, one row per band.
    Bil,
}

impl Interleave {
    pub fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
        }
    }
}

impl std::str::FromStr for Interleave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            other => Err(Error::Header(format!("unknown interleave `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Low,
    High,
}

/// Square region of a cube, addressed by its top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub level: Resolution,
}

impl PatchRef {
    pub fn new(x: usize, y: usize, size: usize, level: Resolution) -> Self {
        PatchRef { x, y, size, level }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.size > 0 && self.x + self.size <= width && self.y + self.size <= height
    }
}

/// How [`SpectralCube::downsample`] reduces each `factor`×`factor` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Area average of the block.
    #[default]
    Mean,
    /// Keep the block's top-left sample only.
    Decimate,
}

/// W×H×B hyperspectral raster.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    wavelengths: Vec<f64>,
    data: Vec<f32>,
    interleave: Interleave,
}

/// `n` evenly spaced wavelengths from `lo` to `hi` inclusive.
pub fn linspace_wavelengths(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
    }
}

/// The 270-band 400–1000 nm grid of the prototype camera.
pub fn prototype_wavelengths() -> Vec<f64> {
    linspace_wavelengths(PROTOTYPE_BANDS, PROTOTYPE_MIN_NM, PROTOTYPE_MAX_NM)
}

fn validate_wavelengths(wavelengths: &[f64]) -> Result<()> {
    if wavelengths.is_empty() {
        return Err(Error::InvalidCube("cube needs at least one band".into()));
    }
    if wavelengths.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidCube("non-finite wavelength".into()));
    }
    if wavelengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidCube(
            "wavelengths must be strictly ascending".into(),
        ));
    }
    Ok(())
}

impl SpectralCube {
    /// Builds a cube from pixel-interleaved samples (`(y * width + x) * bands + b`).
    pub fn new(
        width: usize,
        height: usize,
        wavelengths: Vec<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        validate_wavelengths(&wavelengths)?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidCube(format!(
                "empty spatial extent {width}x{height}"
            )));
        }
        let expected = width * height * wavelengths.len();
        if data.len() != expected {
            return Err(Error::InvalidCube(format!(
                "expected {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidCube(format!("non-finite sample at index {i}")));
        }
        Ok(SpectralCube {
            width,
            height,
            wavelengths,
            data,
            interleave: Interleave::default(),
        })
    }

    pub fn filled(width: usize, height: usize, wavelengths: Vec<f64>, value: f32) -> Result<Self> {
        let n = width * height * wavelengths.len();
        Self::new(width, height, wavelengths, vec![value; n])
    }

    /// Builds a cube by evaluating `f(x, y, band)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        wavelengths: Vec<f64>,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        let mut data = Vec::with_capacity(width * height * bands);
        for y in 0..height {
            for x in 0..width {
                for b in 0..bands {
                    data.push(f(x, y, b));
                }
            }
        }
        Self::new(width, height, wavelengths, data)
    }

    pub fn with_interleave(mut self, interleave: Interleave) -> Self {
        self.interleave = interleave;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn interleave(&self) -> Interleave {
        self.interleave
    }

    /// Pixel-interleaved sample buffer.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, band: usize) -> f32 {
        self.data[(y * self.width + x) * self.bands() + band]
    }

    #[inline]
    pub fn spectrum(&self, x: usize, y: usize) -> &[f32] {
        let b = self.bands();
        let i = (y * self.width + x) * b;
        &self.data[i..i + b]
    }

    /// One band as a row-major `width * height` plane.
    pub fn band_plane(&self, band: usize) -> Vec<f32> {
        let b = self.bands();
        self.data.iter().skip(band).step_by(b).copied().collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Reduces spatial resolution by an integer `factor` on both axes.
    pub fn downsample(&self, factor: usize, mode: Reduction) -> Result<SpectralCube> {
        if factor == 0 {
            return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
        }
        for dim in [self.width, self.height] {
            if dim % factor != 0 {
                return Err(Error::NotDivisible { value: dim, factor });
            }
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h, bands) = (self.width / factor, self.height / factor, self.bands());
        let mut data = Vec::with_capacity(w * h * bands);
        let area = (factor * factor) as f64;
        let mut acc = vec![0f64; bands];
        for oy in 0..h {
            for ox in 0..w {
                match mode {
                    Reduction::Decimate => {
                        data.extend_from_slice(self.spectrum(ox * factor, oy * factor))
                    }
                    Reduction::Mean => {
                        acc.iter_mut().for_each(|a| *a = 0.0);
                        for y in oy * factor..(oy + 1) * factor {
                            for x in ox * factor..(ox + 1) * factor {
                                for (a, &v) in acc.iter_mut().zip(self.spectrum(x, y)) {
                                    *a += v as f64;
                                }
                            }
                        }
                        data.extend(acc.iter().map(|a| (a / area) as f32));
                    }
                }
            }
        }
        Ok(SpectralCube {
            width: w,
            height: h,
            wavelengths: self.wavelengths.clone(),
            data,
            interleave: self.interleave,
        })
    }

    /// Copies the square region `patch` out of the cube.
    pub fn extract_patch(&self, patch: &PatchRef) -> Result<SpectralCube> {
        if !patch.fits(self.width, self.height) {
            return Err(Error::OutOfBounds(format!(
                "patch {}x{} at ({}, {}) exceeds {}x{} cube",
                patch.size, patch.size, patch.x, patch.y, self.width, self.height
            )));
        }
        let b = self.bands();
        let mut data = Vec::with_capacity(patch.size * patch.size * b);
        for y in patch.y..patch.y + patch.size {
            let start = (y * self.width + patch.x) * b;
            data.extend_from_slice(&self.data[start..start + patch.size * b]);
        }
        Ok(SpectralCube {
            width: patch.size,
            height: patch.size,
            wavelengths: self.wavelengths.clone(),
            data,
            interleave: self.interleave,
        })
    }
}
