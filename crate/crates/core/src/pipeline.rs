//! Adaptive capture: low-resolution sweep → attention → top-k wandering
//! patches → full-resolution patch captures.
//!
//! Two variants share the selection logic. [`capture_from_cube`] works in the
//! image domain on a full-resolution reference cube (fast, used for budget
//! and accuracy studies); [`simulate_capture`] drives the planner and the
//! line-camera simulator through the steered mirror.

use serde::{Deserialize, Serialize};

use crate::attention::{score_patches, select_top_k, sobel_attention, AttentionMap};
use crate::camera::{
    correct_rotation, execute_plan_with, mosaic, Mosaic, MosaicGrid, Overlap, SceneModel, SimOptions,
};
use crate::cube::{PatchRef, Reduction, Resolution, SpectralCube};
use crate::encoding::{assemble, PatchGridSpec, PatchSet, DEFAULT_D_MODEL};
use crate::error::{Error, Result};
use crate::eval::{captured_fraction, mean_iou, pixel_accuracy, total_patches, SegMask, SegMetrics, SpectralModel};
use crate::geometry::{direction_from_tangent, MirrorSpec, UnitVector3};
use crate::planner::{plan_full_scan_with, plan_patch_scan_with, CameraSpec, PlanOptions, ScanPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Low-resolution decimation factor per axis.
    pub factor: usize,
    pub patch_size: usize,
    /// Number of wandering patches.
    pub k: usize,
    pub d_model: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            factor: 2,
            patch_size: 32,
            k: 100,
            d_model: DEFAULT_D_MODEL,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 || self.patch_size == 0 {
            return Err(Error::InvalidArgument("factor and patch size must be positive".into()));
        }
        if !self.patch_size.is_multiple_of(self.factor) {
            return Err(Error::NotDivisible {
                value: self.patch_size,
                factor: self.factor,
            });
        }
        Ok(())
    }

    /// Scoring window on the low-res map: one full-res patch footprint.
    pub fn window(&self) -> usize {
        self.patch_size / self.factor
    }
}

/// Ranks full-resolution patch positions from a low-res attention map.
/// Returned rects are in full-resolution pixels, best first.
pub fn select_patches(map: &AttentionMap, cfg: &AdaptiveConfig) -> Result<Vec<PatchRef>> {
    cfg.validate()?;
    let w = cfg.window();
    let grid = score_patches(map, w, w)?;
    Ok(select_top_k(&grid, cfg.k)?
        .into_iter()
        .map(|p| PatchRef::new(p.x * cfg.factor, p.y * cfg.factor, cfg.patch_size, Resolution::High))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveCapture {
    pub lowres: SpectralCube,
    pub attention: AttentionMap,
    /// Wandering patches in full-res pixels, best first, with their cubes.
    pub patches: Vec<(PatchRef, SpectralCube)>,
    pub full_width: usize,
    pub full_height: usize,
}

impl AdaptiveCapture {
    pub fn patch_set(&self, cfg: &AdaptiveConfig) -> Result<PatchSet> {
        let grid = PatchGridSpec::for_lowres(self.lowres.width(), self.lowres.height(), cfg.patch_size, cfg.factor)?;
        let rects: Vec<PatchRef> = self.patches.iter().map(|(r, _)| *r).collect();
        assemble(&self.lowres, &rects, &grid, cfg.d_model)
    }

    /// Keeps only the `k` best patches.
    pub fn truncated(&self, k: usize) -> AdaptiveCapture {
        AdaptiveCapture {
            patches: self.patches.iter().take(k).cloned().collect(),
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.lowres.width() * self.lowres.height()
            + self.patches.iter().map(|(r, _)| r.size * r.size).sum::<usize>()
    }

    /// Fused segmentation scored against `gt`.
    pub fn evaluate(&self, model: &SpectralModel, gt: &SegMask, num_classes: usize) -> Result<(SegMask, SegMetrics)> {
        let factor = self.full_width / self.lowres.width();
        let pred = model.classify_fused(&self.lowres, factor, &self.patches)?;
        let ps = self.patches.first().map_or(32, |(r, _)| r.size);
        let side = self.lowres.width().max(self.lowres.height());
        let metrics = SegMetrics {
            mean_iou: mean_iou(&pred, gt, num_classes)?,
            pixel_accuracy: pixel_accuracy(&pred, gt)?,
            total_patches: total_patches(side, ps, self.patches.len()).unwrap_or(self.patches.len()),
            captured_fraction: self.pixel_count() as f64 / (self.full_width * self.full_height) as f64,
        };
        Ok((pred, metrics))
    }
}

/// Attention override for externally computed maps.
#[derive(Debug, Clone, Copy)]
pub enum AttentionSource<'a> {
    Sobel,
    External(&'a AttentionMap),
}

fn resolve_attention(lowres: &SpectralCube, src: AttentionSource<'_>) -> Result<AttentionMap> {
    match src {
        AttentionSource::Sobel => Ok(sobel_attention(lowres)),
        AttentionSource::External(m) => {
            if (m.width, m.height) != (lowres.width(), lowres.height()) {
                return Err(Error::DimMismatch(format!(
                    "attention map {}x{} for a {}x{} low-res capture",
                    m.width,
                    m.height,
                    lowres.width(),
                    lowres.height()
                )));
            }
            Ok(m.clone())
        }
    }
}

/// Image-domain capture: the low-res image is the block mean of `full`, and
/// each wandering patch is cut from `full`.
pub fn capture_from_cube(full: &SpectralCube, cfg: &AdaptiveConfig, src: AttentionSource<'_>) -> Result<AdaptiveCapture> {
    cfg.validate()?;
    let lowres = full.downsample(cfg.factor, Reduction::Mean)?;
    let attention = resolve_attention(&lowres, src)?;
    let rects = select_patches(&attention, cfg)?;
    let patches = rects
        .into_iter()
        .map(|r| Ok((r, full.extract_patch(&r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptiveCapture {
        lowres,
        attention,
        patches,
        full_width: full.width(),
        full_height: full.height(),
    })
}

/// Metrics for a full-resolution capture (every pixel at full resolution).
pub fn evaluate_full(full: &SpectralCube, model: &SpectralModel, gt: &SegMask, num_classes: usize, patch_size: usize) -> Result<SegMetrics> {
    let pred = model.classify(full)?;
    Ok(SegMetrics {
        mean_iou: mean_iou(&pred, gt, num_classes)?,
        pixel_accuracy: pixel_accuracy(&pred, gt)?,
        total_patches: total_patches(full.width().max(full.height()), patch_size, 0)?,
        captured_fraction: 1.0,
    })
}

/// Result of a simulated capture through the mirror.
#[derive(Debug, Clone)]
pub struct SimulatedCapture {
    pub lowres_plan: ScanPlan,
    pub lowres: Mosaic,
    pub patch_plan: Option<ScanPlan>,
    pub capture: AdaptiveCapture,
    /// Per-patch observation masks, parallel to `capture.patches`.
    pub patch_valid: Vec<Vec<bool>>,
}

/// Grid of the full-resolution scene in tangent coordinates.
pub fn scene_grid(scene: &SceneModel) -> MosaicGrid {
    MosaicGrid::for_scene(scene)
}

/// Plans and simulates the low-res sweep, selects patches on its mosaic,
/// then plans, simulates, corrects and mosaics every patch sweep.
pub fn simulate_capture(
    scene: &SceneModel,
    cfg: &AdaptiveConfig,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
    plan_opts: &PlanOptions,
    sim: &SimOptions,
    src: AttentionSource<'_>,
) -> Result<SimulatedCapture> {
    cfg.validate()?;
    let full = scene_grid(scene);
    for v in [full.width, full.height] {
        if v % cfg.factor != 0 {
            return Err(Error::NotDivisible { value: v, factor: cfg.factor });
        }
    }
    let (lw, lh) = (full.width / cfg.factor, full.height / cfg.factor);
    let low_grid = MosaicGrid {
        pitch: full.pitch * cfg.factor as f64,
        width: lw,
        height: lh,
        ..full
    };
    let halfwidth = (full.height as f64 * full.pitch / 2.0).atan().to_degrees();
    let low_opts = PlanOptions {
        expected_step_ifov: low_grid.pitch / camera.ifov(),
        ..*plan_opts
    };
    let lowres_plan = plan_full_scan_with(&UnitVector3::BORESIGHT, halfwidth, lh, camera, mirror, &low_opts)?;
    let wl = scene.cube().wavelengths();
    let frames = correct_rotation(&execute_plan_with(scene, &lowres_plan, camera, mirror, sim));
    let lowres = mosaic(&frames, wl, &low_grid, camera, mirror, Overlap::Mean)?;

    let attention = resolve_attention(&lowres.cube, src)?;
    let rects = select_patches(&attention, cfg)?;
    let ps = cfg.patch_size;
    let (patch_plan, patches, patch_valid) = if rects.is_empty() {
        (None, Vec::new(), Vec::new())
    } else {
        let centers: Vec<UnitVector3> = rects
            .iter()
            .map(|r| {
                let half = ps as f64 / 2.0;
                direction_from_tangent(
                    full.u0 + (r.x as f64 + half) * full.pitch,
                    full.v0 + (r.y as f64 + half) * full.pitch,
                )
            })
            .collect();
        let plan = plan_patch_scan_with(&centers, ps, camera, mirror, plan_opts)?;
        let frames = correct_rotation(&execute_plan_with(scene, &plan, camera, mirror, sim));
        let mut patches = Vec::with_capacity(rects.len());
        let mut valid = Vec::with_capacity(rects.len());
        for (i, r) in rects.iter().enumerate() {
            let sweep: Vec<_> = frames
                .iter()
                .zip(plan.frames())
                .filter(|(_, p)| p.sweep == i)
                .map(|(f, _)| f.clone())
                .collect();
            let grid = MosaicGrid {
                u0: full.u0 + r.x as f64 * full.pitch,
                v0: full.v0 + r.y as f64 * full.pitch,
                width: ps,
                height: ps,
                ..full
            };
            let m = mosaic(&sweep, wl, &grid, camera, mirror, Overlap::Mean)?;
            patches.push((*r, m.cube));
            valid.push(m.valid);
        }
        (Some(plan), patches, valid)
    };
    Ok(SimulatedCapture {
        lowres_plan,
        capture: AdaptiveCapture {
            lowres: lowres.cube.clone(),
            attention,
            patches,
            full_width: full.width,
            full_height: full.height,
        },
        lowres,
        patch_plan,
        patch_valid,
    })
}

/// Full-resolution captured fraction for the standard square layout.
pub fn nominal_captured_fraction(full_dim: usize, cfg: &AdaptiveConfig) -> f64 {
    captured_fraction(full_dim, full_dim / cfg.factor.max(1), cfg.patch_size, cfg.k)
}
