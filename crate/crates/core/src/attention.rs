//! Sobel attention maps, max-pooled patch scores and top-k patch selection.

use std::path::Path;

use rayon::prelude::*;

use crate::cube::{PatchRef, Resolution, SpectralCube};
use crate::cube_io::read_cube;
use crate::error::{Error, Result};
use crate::pnm::{read_pgm, GrayImage};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f32>,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, scores: Vec<f32>) -> Result<Self> {
        if scores.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: (width * height) as u64,
                actual: scores.len() as u64,
            });
        }
        if let Some(v) = scores.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::OutOfRange(format!("attention score {v} is not a finite non-negative value")));
        }
        Ok(AttentionMap { width, height, scores })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.scores[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.scores.iter().copied().fold(0.0, f32::max)
    }

    /// 16-bit PGM scaled so the map maximum maps to 65535.
    pub fn to_pgm(&self) -> GrayImage {
        let max = self.max();
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        let data = self.scores.iter().map(|&s| (s * scale).round() as u16).collect();
        GrayImage::new(self.width, self.height, u16::MAX, data).expect("scaled into range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreGrid {
    pub rows: usize,
    pub cols: usize,
    pub scores: Vec<f32>,
    pub patch_size: usize,
    pub stride: usize,
}

impl PatchScoreGrid {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.scores[row * self.cols + col]
    }

    pub fn patch(&self, index: usize) -> PatchRef {
        PatchRef::new(
            (index % self.cols) * self.stride,
            (index / self.cols) * self.stride,
            self.patch_size,
            Resolution::Low,
        )
    }
}

fn sobel_magnitude(plane: &[f32], w: usize, h: usize) -> Vec<f32> {
    let at = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        plane[y * w + x]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Mean over bands of the 3×3 Sobel gradient magnitude, with replicated
/// borders.
pub fn sobel_attention(cube: &SpectralCube) -> AttentionMap {
    let (w, h, bands) = (cube.width(), cube.height(), cube.bands());
    let per_band: Vec<Vec<f32>> = (0..bands)
        .into_par_iter()
        .map(|b| sobel_magnitude(&cube.band_plane(b), w, h))
        .collect();
    // summed in band order so the result does not depend on scheduling
    let mut scores = vec![0.0f32; w * h];
    for m in &per_band {
        scores.iter_mut().zip(m).for_each(|(s, v)| *s += v);
    }
    scores.iter_mut().for_each(|s| *s /= bands as f32);
    AttentionMap {
        width: w,
        height: h,
        scores,
    }
}

/// Max over each `patch_size` window placed every `stride` pixels.
pub fn score_patches(map: &AttentionMap, patch_size: usize, stride: usize) -> Result<PatchScoreGrid> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("patch size and stride must be positive".into()));
    }
    if map.width < patch_size || map.height < patch_size {
        return Err(Error::InvalidArgument(format!(
            "{}x{} map is smaller than one {patch_size}px window",
            map.width, map.height
        )));
    }
    let rows = (map.height - patch_size) / stride + 1;
    let cols = (map.width - patch_size) / stride + 1;
    let scores = (0..rows * cols)
        .map(|i| {
            let (x0, y0) = ((i % cols) * stride, (i / cols) * stride);
            (y0..y0 + patch_size)
                .flat_map(|y| map.scores[y * map.width + x0..y * map.width + x0 + patch_size].iter())
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    Ok(PatchScoreGrid {
        rows,
        cols,
        scores,
        patch_size,
        stride,
    })
}

/// Indices of the `k` best cells, highest score first, ties by row-major
/// index.
pub fn top_k_indices(grid: &PatchScoreGrid, k: usize) -> Result<Vec<usize>> {
    let n = grid.rows * grid.cols;
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the {n} available positions")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let order = |a: &usize, b: &usize| grid.scores[*b].total_cmp(&grid.scores[*a]).then(a.cmp(b));
    if k < n && k > 0 {
        idx.select_nth_unstable_by(k - 1, order);
    }
    idx.truncate(k);
    idx.sort_unstable_by(order);
    Ok(idx)
}

pub fn select_top_k(grid: &PatchScoreGrid, k: usize) -> Result<Vec<PatchRef>> {
    Ok(top_k_indices(grid, k)?.into_iter().map(|i| grid.patch(i)).collect())
}

/// Reads an externally computed map (PGM or single-band cube), normalised
/// to `[0, 1]`.
pub fn load_attention(path: impl AsRef<Path>) -> Result<AttentionMap> {
    let path = path.as_ref();
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let img = read_pgm(path)?;
        let max = img.maxval as f32;
        return AttentionMap::new(img.width, img.height, img.data.iter().map(|&v| v as f32 / max).collect());
    }
    let cube = read_cube(path)?;
    if cube.bands() != 1 {
        return Err(Error::InvalidCube(format!(
            "attention cube must have one band, found {}",
            cube.bands()
        )));
    }
    let plane = cube.band_plane(0);
    if let Some(v) = plane.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::OutOfRange(format!("negative or non-finite attention value {v}")));
    }
    let max = plane.iter().copied().fold(0.0f32, f32::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    AttentionMap::new(cube.width(), cube.height(), plane.iter().map(|v| v * scale).collect())
}
