//! Seeded synthetic scenes for tests, demos and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::{linspace_wavelengths, SpectralCube};
use crate::error::{Error, Result};

/// A cube with per-pixel class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub cube: SpectralCube,
    pub labels: Vec<u16>,
    pub classes: usize,
}

/// Smooth, strictly positive spectrum with a class-dependent shape.
fn class_spectrum(rng: &mut ChaCha8Rng, bands: usize) -> Vec<f32> {
    let base = rng.random_range(0.2..0.6);
    let slope = rng.random_range(-0.3..0.3);
    let peak = rng.random_range(0.0..1.0);
    let amp = rng.random_range(0.1..0.4);
    (0..bands)
        .map(|b| {
            let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
            let bump = amp * (-((t - peak) / 0.2).powi(2)).exp();
            (base + slope * (t - 0.5) + bump).max(0.02) as f32
        })
        .collect()
}

fn default_wavelengths(bands: usize) -> Vec<f64> {
    linspace_wavelengths(bands, 400.0, 1000.0)
}

/// Two-material checkerboard. `softness` is the edge half-width in pixels
/// (0 gives hard edges).
pub fn checkerboard(width: usize, height: usize, bands: usize, square: usize, softness: f64) -> Result<SpectralCube> {
    if square == 0 || bands == 0 {
        return Err(Error::InvalidArgument("square size and band count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C4E_C4E5);
    let (a, b) = (class_spectrum(&mut rng, bands), class_spectrum(&mut rng, bands));
    let sq = square as f64;
    let edge = |p: f64| -> f64 {
        // signed distance-like coordinate in [-1, 1] per square
        let s = (std::f64::consts::PI * p / sq).sin();
        if softness <= 0.0 {
            s.signum()
        } else {
            (s * sq / (std::f64::consts::PI * softness)).tanh()
        }
    };
    SpectralCube::from_fn(width, height, default_wavelengths(bands), |x, y, k| {
        let m = 0.5 + 0.5 * edge(x as f64 + 0.5) * edge(y as f64 + 0.5);
        (b[k] as f64 + m * (a[k] - b[k]) as f64) as f32
    })
}

/// Flat scene with fine random texture confined to one quadrant
/// (0 = top-left, 1 = top-right, 2 = bottom-left, 3 = bottom-right).
pub fn quadrant_texture(size: usize, bands: usize, quadrant: usize, seed: u64) -> Result<SpectralCube> {
    if quadrant > 3 {
        return Err(Error::InvalidArgument(format!("quadrant {quadrant} not in 0..4")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size / 2;
    let (qx, qy) = ((quadrant % 2) * half, (quadrant / 2) * half);
    let noise: Vec<f32> = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    SpectralCube::from_fn(size, size, default_wavelengths(bands), |x, y, b| {
        let inside = x >= qx && x < qx + half && y >= qy && y < qy + half;
        let base = 0.5 + 0.02 * b as f32;
        if inside {
            base * (0.5 + noise[y * size + x])
        } else {
            base
        }
    })
}

/// Piecewise-constant class regions (nearest of `regions` random sites) with
/// per-class spectra, per-region brightness and Gaussian noise.
pub fn labeled_scene(
    size: usize,
    bands: usize,
    classes: usize,
    regions: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledScene> {
    if classes == 0 || regions < classes || size == 0 || bands == 0 {
        return Err(Error::InvalidArgument(
            "need size, bands > 0 and at least one region per class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectra: Vec<Vec<f32>> = (0..classes).map(|_| class_spectrum(&mut rng, bands)).collect();
    let sites: Vec<(f64, f64, u16, f32)> = (0..regions)
        .map(|i| {
            let class = if i < classes { i } else { rng.random_range(0..classes) };
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                class as u16,
                rng.random_range(0.85..1.15),
            )
        })
        .collect();
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut labels = Vec::with_capacity(size * size);
    let mut data = Vec::with_capacity(size * size * bands);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let site = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .expect("regions > 0");
            labels.push(site.2);
            for &s in &spectra[site.2 as usize] {
                let n = if noise_sigma > 0.0 { normal.sample(&mut rng) as f32 } else { 0.0 };
                data.push(s * site.3 + n);
            }
        }
    }
    Ok(LabeledScene {
        cube: SpectralCube::new(size, size, default_wavelengths(bands), data)?,
        labels,
        classes,
    })
}
