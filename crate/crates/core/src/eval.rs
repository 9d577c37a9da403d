//! Nearest-centroid spectral segmentation and segmentation metrics.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{PatchRef, SpectralCube};
use crate::error::{Error, Result};
use crate::pnm::GrayImage;

/// Label for pixels that cannot be classified (zero spectrum).
pub const UNKNOWN: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Largest cosine similarity wins.
    #[default]
    SpectralAngle,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub centroids: Vec<Vec<f64>>,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: (width * height) as u64,
                actual: labels.len() as u64,
            });
        }
        Ok(SegMask { width, height, labels })
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> SegMask {
        let (w, h) = (self.width * factor, self.height * factor);
        let labels = (0..w * h)
            .map(|i| self.get((i % w) / factor, (i / w) / factor))
            .collect();
        SegMask { width: w, height: h, labels }
    }

    /// PGM with one grey level per class; unknown pixels are white.
    pub fn to_pgm(&self, num_classes: usize) -> GrayImage {
        let maxval = num_classes.clamp(1, u16::MAX as usize - 1) as u16;
        let data = self
            .labels
            .iter()
            .map(|&l| if l == UNKNOWN || l >= maxval { maxval } else { l })
            .collect();
        GrayImage::new(self.width, self.height, maxval, data).expect("labels clamped to maxval")
    }

    pub fn from_pgm(img: &GrayImage) -> SegMask {
        SegMask {
            width: img.width,
            height: img.height,
            labels: img.data.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub mean_iou: f64,
    pub pixel_accuracy: f64,
    pub total_patches: usize,
    pub captured_fraction: f64,
}

impl SegMetrics {
    pub const CSV_HEADER: &'static str = "run_id,k,total_patches,captured_fraction,miou,pa";

    pub fn csv_row(&self, run_id: &str, k: usize) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{run_id},{k},{},{:.6},{:.4},{:.4}",
            self.total_patches, self.captured_fraction, self.mean_iou, self.pixel_accuracy
        );
        s
    }
}

/// Per-class mean spectrum; pixels labelled `UNKNOWN` or `>= num_classes`
/// are ignored.
pub fn fit_centroids(cube: &SpectralCube, labels: &[u16], num_classes: usize) -> Result<SpectralModel> {
    if labels.len() != cube.width() * cube.height() {
        return Err(Error::DimMismatch(format!(
            "{} labels for a {}x{} cube",
            labels.len(),
            cube.width(),
            cube.height()
        )));
    }
    let bands = cube.bands();
    let mut sums = vec![vec![0.0f64; bands]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (px, &l) in cube.as_slice().chunks(bands).zip(labels) {
        let l = l as usize;
        if l >= num_classes {
            continue;
        }
        counts[l] += 1;
        sums[l].iter_mut().zip(px).for_each(|(s, &v)| *s += v as f64);
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(c));
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    if let Some(c) = centroids.iter().position(|c| c.iter().all(|&v| v == 0.0)) {
        return Err(Error::InvalidArgument(format!("class {c} has a zero centroid")));
    }
    Ok(SpectralModel {
        centroids,
        metric: Metric::SpectralAngle,
    })
}

impl SpectralModel {
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn bands(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn classify_pixel(&self, px: &[f32]) -> u16 {
        let norm = px.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        match self.metric {
            Metric::SpectralAngle => {
                if norm == 0.0 {
                    return UNKNOWN;
                }
                let mut best = (f64::NEG_INFINITY, UNKNOWN);
                for (k, c) in self.centroids.iter().enumerate() {
                    let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = c.iter().zip(px).map(|(a, &b)| a * b as f64).sum();
                    let sim = dot / (norm * cn);
                    // strict comparison keeps the lowest id on ties
                    if sim > best.0 {
                        best = (sim, k as u16);
                    }
                }
                best.1
            }
            Metric::Euclidean => {
                let mut best = (f64::INFINITY, UNKNOWN);
                for (k, c) in self.centroids.iter().enumerate() {
                    let d: f64 = c.iter().zip(px).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                    if d < best.0 {
                        best = (d, k as u16);
                    }
                }
                best.1
            }
        }
    }

    fn check_bands(&self, cube: &SpectralCube) -> Result<()> {
        if cube.bands() != self.bands() {
            return Err(Error::DimMismatch(format!(
                "cube has {} bands, model expects {}",
                cube.bands(),
                self.bands()
            )));
        }
        Ok(())
    }

    pub fn classify(&self, cube: &SpectralCube) -> Result<SegMask> {
        self.check_bands(cube)?;
        let labels = cube
            .as_slice()
            .par_chunks(cube.bands())
            .map(|px| self.classify_pixel(px))
            .collect();
        SegMask::new(cube.width(), cube.height(), labels)
    }

    /// Classifies the low-res cube, upsamples the labels by `factor`, then
    /// overwrites each wandering patch footprint with its own full-resolution
    /// labels. Patches are `(rect in full-res pixels, patch cube)`.
    pub fn classify_fused(
        &self,
        lowres: &SpectralCube,
        factor: usize,
        patches: &[(PatchRef, SpectralCube)],
    ) -> Result<SegMask> {
        let mut mask = self.classify(lowres)?.upsample(factor);
        for (rect, cube) in patches {
            if cube.width() != rect.size || cube.height() != rect.size {
                return Err(Error::DimMismatch(format!(
                    "patch cube {}x{} for a {} px rect",
                    cube.width(),
                    cube.height(),
                    rect.size
                )));
            }
            if !rect.fits(mask.width, mask.height) {
                return Err(Error::OutOfBounds(format!("patch at ({}, {})", rect.x, rect.y)));
            }
            let sub = self.classify(cube)?;
            for y in 0..rect.size {
                let row = (rect.y + y) * mask.width + rect.x;
                mask.labels[row..row + rect.size].copy_from_slice(&sub.labels[y * rect.size..(y + 1) * rect.size]);
            }
        }
        Ok(mask)
    }
}

fn same_dims(a: &SegMask, b: &SegMask) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimMismatch(format!(
            "{}x{} vs {}x{} masks",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean IoU in percent over classes present in either mask.
pub fn mean_iou(pred: &SegMask, gt: &SegMask, num_classes: usize) -> Result<f64> {
    same_dims(pred, gt)?;
    let mut inter = vec![0u64; num_classes];
    let mut union = vec![0u64; num_classes];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        let (p, g) = (p as usize, g as usize);
        if p == g {
            if p < num_classes {
                inter[p] += 1;
                union[p] += 1;
            }
        } else {
            if p < num_classes {
                union[p] += 1;
            }
            if g < num_classes {
                union[g] += 1;
            }
        }
    }
    let ious: Vec<f64> = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .map(|(&i, &u)| i as f64 / u as f64)
        .collect();
    if ious.is_empty() {
        return Ok(100.0);
    }
    Ok(100.0 * ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn pixel_accuracy(pred: &SegMask, gt: &SegMask) -> Result<f64> {
    same_dims(pred, gt)?;
    let hits = pred.labels.iter().zip(&gt.labels).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / pred.labels.len() as f64)
}

/// Low-res patches plus wandering patches.
pub fn total_patches(lowres_dim: usize, patch_size: usize, k: usize) -> Result<usize> {
    if patch_size == 0 || !lowres_dim.is_multiple_of(patch_size) {
        return Err(Error::NotDivisible {
            value: lowres_dim,
            factor: patch_size,
        });
    }
    let side = lowres_dim / patch_size;
    Ok(side * side + k)
}

/// Captured pixels (the whole low-res image plus `k` full-resolution
/// patches) relative to a full-resolution capture.
pub fn captured_fraction(full_dim: usize, lowres_dim: usize, patch_size: usize, k: usize) -> f64 {
    let captured = (lowres_dim * lowres_dim + k * patch_size * patch_size) as f64;
    captured / (full_dim * full_dim) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(c: Vec<Vec<f64>>) -> SpectralModel {
        SpectralModel {
            centroids: c,
            metric: Metric::SpectralAngle,
        }
    }

    #[test]
    fn centroid_examples() {
        let cube = SpectralCube::new(2, 1, vec![1.0, 2.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = fit_centroids(&cube, &[0, 0], 1).unwrap();
        assert_eq!(m.centroids, vec![vec![0.5, 0.5]]);
        let m = fit_centroids(&cube, &[0, 1], 2).unwrap();
        assert_eq!(m.centroids, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(fit_centroids(&cube, &[0, 0], 2), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn classify_examples() {
        let m = model(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(m.classify_pixel(&[0.0, 3.0]), 1);
        assert_eq!(m.classify_pixel(&[0.0, 6.0]), 1);
        assert_eq!(m.classify_pixel(&[1.0, 1.0]), 0);
        assert_eq!(m.classify_pixel(&[0.0, 0.0]), UNKNOWN);
        let cube = SpectralCube::filled(2, 2, vec![1.0, 2.0, 3.0], 1.0).unwrap();
        assert!(m.classify(&cube).is_err());
        let e = m.clone().with_metric(Metric::Euclidean);
        assert_eq!(e.classify_pixel(&[0.9, 0.2]), 0);
    }

    #[test]
    fn miou_examples() {
        let n = 4;
        let gt = SegMask::new(n, n, (0..n * n).map(|i| ((i % n) < n / 2) as u16).collect()).unwrap();
        let pred = SegMask::new(n, n, (0..n * n).map(|i| ((i / n) < n / 2) as u16).collect()).unwrap();
        assert!((mean_iou(&pred, &gt, 2).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_iou(&gt, &gt, 2).unwrap(), 100.0);
        let inv = SegMask::new(n, n, gt.labels.iter().map(|l| 1 - l).collect()).unwrap();
        assert_eq!(mean_iou(&inv, &gt, 2).unwrap(), 0.0);
        assert_eq!(pixel_accuracy(&inv, &gt).unwrap(), 0.0);
        assert_eq!(pixel_accuracy(&pred, &gt).unwrap(), 50.0);
        assert!(mean_iou(&SegMask::new(1, 1, vec![0]).unwrap(), &gt, 2).is_err());
    }

    #[test]
    fn patch_bookkeeping() {
        assert_eq!(total_patches(256, 32, 100).unwrap(), 164);
        assert_eq!(total_patches(512, 32, 100).unwrap(), 356);
        assert_eq!(total_patches(1024, 32, 0).unwrap(), 1024);
        assert!(total_patches(100, 32, 0).is_err());
        assert!((captured_fraction(1024, 512, 32, 100) - 356.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn fused_overwrites_patch_footprint() {
        let m = model(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let low = SpectralCube::from_fn(2, 2, vec![1.0, 2.0], |_, _, b| (b == 0) as u8 as f32).unwrap();
        let patch = SpectralCube::from_fn(2, 2, vec![1.0, 2.0], |_, _, b| (b == 1) as u8 as f32).unwrap();
        let rect = PatchRef::new(2, 0, 2, crate::cube::Resolution::High);
        let mask = m.classify_fused(&low, 2, &[(rect, patch)]).unwrap();
        assert_eq!((mask.width, mask.height), (4, 4));
        assert_eq!(mask.get(0, 0), 0);
        assert_eq!(mask.get(3, 1), 1);
        assert_eq!(mask.get(3, 2), 0);
    }

    #[test]
    fn csv_row_format() {
        let m = SegMetrics {
            mean_iou: 91.5,
            pixel_accuracy: 97.25,
            total_patches: 356,
            captured_fraction: 0.34765625,
        };
        assert_eq!(m.csv_row("s1", 100), "s1,100,356,0.347656,91.5000,97.2500");
    }
}
