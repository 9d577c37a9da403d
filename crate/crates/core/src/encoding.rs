//! Position codes for low-resolution patches and wandering-patch seats, and
//! sine/cosine embeddings for token export.
//!
//! Base patch `n_i` gets code `n_i·(m+1) + 1`; its `m` seats take the `m`
//! codes that follow, so the codes of one patch and its seats are contiguous
//! and never collide with the next patch.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{PatchRef, Resolution, SpectralCube};
use crate::error::{Error, Result};

pub const DEFAULT_D_MODEL: usize = 64;

/// Layout of the low-resolution patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Seats per low-resolution patch; a perfect square for quad-tree seats.
    pub m: usize,
    pub patch_size: usize,
}

impl PatchGridSpec {
    pub fn new(cols: usize, rows: usize, m: usize, patch_size: usize) -> Result<Self> {
        if cols == 0 || rows == 0 || m == 0 || patch_size == 0 {
            return Err(Error::InvalidArgument("grid dimensions, m and patch size must be positive".into()));
        }
        Ok(PatchGridSpec { cols, rows, m, patch_size })
    }

    /// Grid of `patch_size` patches covering a low-res cube, with one seat
    /// per full-resolution patch (`m = factor²`).
    pub fn for_lowres(width: usize, height: usize, patch_size: usize, factor: usize) -> Result<Self> {
        for v in [width, height] {
            if patch_size == 0 || v % patch_size != 0 {
                return Err(Error::NotDivisible { value: v, factor: patch_size });
            }
        }
        Self::new(width / patch_size, height / patch_size, factor * factor, patch_size)
    }

    pub fn n(&self) -> usize {
        self.cols * self.rows
    }

    /// Seats per side of a low-res patch.
    pub fn seats_per_side(&self) -> Result<usize> {
        let s = (self.m as f64).sqrt().round() as usize;
        if s * s != self.m {
            return Err(Error::InvalidArgument(format!("m = {} is not a perfect square", self.m)));
        }
        Ok(s)
    }

    /// Full-resolution footprint side of one low-res patch.
    pub fn footprint(&self) -> Result<usize> {
        Ok(self.patch_size * self.seats_per_side()?)
    }
}

pub fn base_position(n_i: usize, m: usize) -> u64 {
    n_i as u64 * (m as u64 + 1) + 1
}

pub fn seat_position(n_i: usize, m_i: usize, m: usize) -> Result<u64> {
    if m_i == 0 || m_i > m {
        return Err(Error::OutOfRange(format!("seat {m_i} not in 1..={m}")));
    }
    Ok(base_position(n_i, m) + m_i as u64)
}

/// Low-res patch index and seat (row-major, from 1) of a full-resolution
/// patch. The patch must coincide with one seat cell.
pub fn seat_of(highres: &PatchRef, grid: &PatchGridSpec, width: usize, height: usize) -> Result<(usize, usize)> {
    let side = grid.seats_per_side()?;
    let foot = grid.footprint()?;
    if width != grid.cols * foot || height != grid.rows * foot {
        return Err(Error::DimMismatch(format!(
            "{width}x{height} image does not match a {}x{} grid of {foot}px footprints",
            grid.cols, grid.rows
        )));
    }
    if !highres.fits(width, height) {
        return Err(Error::OutOfBounds(format!(
            "patch at ({}, {}) size {} outside {width}x{height}",
            highres.x, highres.y, highres.size
        )));
    }
    let (col, row) = (highres.x / foot, highres.y / foot);
    if (highres.x + highres.size - 1) / foot != col || (highres.y + highres.size - 1) / foot != row {
        return Err(Error::Straddle(format!(
            "patch at ({}, {}) crosses a low-resolution patch boundary",
            highres.x, highres.y
        )));
    }
    let seat = grid.patch_size;
    let (dx, dy) = (highres.x % foot, highres.y % foot);
    if highres.size != seat || dx % seat != 0 || dy % seat != 0 {
        return Err(Error::Straddle(format!(
            "patch at ({}, {}) size {} is not aligned to the {seat}px seats",
            highres.x, highres.y, highres.size
        )));
    }
    Ok((row * grid.cols + col, (dy / seat) * side + dx / seat + 1))
}

/// `[sin(P/10000^(2i/d)), cos(P/10000^(2i/d))]` for `i < d/2`.
pub fn sincos_embedding(p: u64, d_model: usize) -> Result<Vec<f64>> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("d_model must be even and positive, got {d_model}")));
    }
    let mut out = Vec::with_capacity(d_model);
    for i in 0..d_model / 2 {
        let arg = p as f64 / 10_000f64.powf(2.0 * i as f64 / d_model as f64);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Base,
    Wandering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchToken {
    pub code: u64,
    pub kind: TokenKind,
    /// Rectangle in the coordinates of its own resolution level.
    pub source: PatchRef,
    /// `(n_i, m_i)` for wandering tokens.
    pub seat: Option<(usize, usize)>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub tokens: Vec<PatchToken>,
    pub grid: PatchGridSpec,
}

impl PatchSet {
    pub fn base_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Base).count()
    }

    pub fn wandering_count(&self) -> usize {
        self.tokens.len() - self.base_count()
    }

    /// Checks the set invariants: base count, distinct codes, seat codes
    /// strictly between their base code and the next.
    pub fn validate(&self) -> Result<()> {
        if self.base_count() != self.grid.n() {
            return Err(Error::InvalidArgument(format!(
                "{} base tokens for a grid of {}",
                self.base_count(),
                self.grid.n()
            )));
        }
        let mut seen = HashSet::new();
        for t in &self.tokens {
            if !seen.insert(t.code) {
                return Err(Error::InvalidArgument(format!("duplicate position code {}", t.code)));
            }
            if let Some((n_i, _)) = t.seat {
                let lo = base_position(n_i, self.grid.m);
                if !(t.code > lo && t.code < base_position(n_i + 1, self.grid.m)) {
                    return Err(Error::InvalidArgument(format!("seat code {} outside patch {n_i}", t.code)));
                }
            }
        }
        Ok(())
    }

    /// One JSON object per token.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for t in &self.tokens {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Builds the token set for a low-res cube plus full-resolution wandering
/// patches given in full-resolution pixel coordinates.
pub fn assemble(lowres: &SpectralCube, wandering: &[PatchRef], grid: &PatchGridSpec, d_model: usize) -> Result<PatchSet> {
    let ps = grid.patch_size;
    if lowres.width() != grid.cols * ps || lowres.height() != grid.rows * ps {
        return Err(Error::DimMismatch(format!(
            "{}x{} low-res cube does not match a {}x{} grid of {ps}px patches",
            lowres.width(),
            lowres.height(),
            grid.cols,
            grid.rows
        )));
    }
    let foot = grid.footprint()?;
    let (fw, fh) = (grid.cols * foot, grid.rows * foot);
    let mut tokens = Vec::with_capacity(grid.n() + wandering.len());
    for n_i in 0..grid.n() {
        let code = base_position(n_i, grid.m);
        tokens.push(PatchToken {
            code,
            kind: TokenKind::Base,
            source: PatchRef::new((n_i % grid.cols) * ps, (n_i / grid.cols) * ps, ps, Resolution::Low),
            seat: None,
            embedding: sincos_embedding(code, d_model)?,
        });
    }
    let mut taken = HashSet::new();
    for p in wandering {
        let (n_i, m_i) = seat_of(p, grid, fw, fh)?;
        if !taken.insert((n_i, m_i)) {
            return Err(Error::SeatCollision { patch: n_i, seat: m_i });
        }
        let code = seat_position(n_i, m_i, grid.m)?;
        tokens.push(PatchToken {
            code,
            kind: TokenKind::Wandering,
            source: PatchRef { level: Resolution::High, ..*p },
            seat: Some((n_i, m_i)),
            embedding: sincos_embedding(code, d_model)?,
        });
    }
    Ok(PatchSet { tokens, grid: *grid })
}
