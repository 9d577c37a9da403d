//! Experiment configuration: a TOML file plus command-line overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mirrorscan::attention::{load_attention, AttentionMap};
use mirrorscan::cube_io::read_cube;
use mirrorscan::eval::SegMask;
use mirrorscan::pipeline::AdaptiveConfig;
use mirrorscan::planner::{CameraSpec, PlanOptions, MIRROR_MEMORY};
use mirrorscan::pnm::read_pgm;
use mirrorscan::synth::labeled_scene;
use mirrorscan::{MirrorSpec, SpectralCube};
use serde::{Deserialize, Serialize};

/// Bad flags, bad config values or missing input files named by the config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureMode {
    /// Ray-traced capture through the steered mirror.
    #[default]
    Simulate,
    /// Image-domain capture: block means and crops of the scene cube.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScene {
    pub size: usize,
    pub bands: usize,
    pub classes: usize,
    pub regions: usize,
    pub noise_sigma: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        SyntheticScene {
            size: 512,
            bands: 8,
            classes: 4,
            regions: 24,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// Cube header; a synthetic labelled scene is generated when absent.
    pub path: Option<PathBuf>,
    /// Ground-truth label PGM (required with `path` for `evaluate`).
    pub labels: Option<PathBuf>,
    pub classes: Option<usize>,
    pub distance_m: f64,
    pub synthetic: SyntheticScene,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            path: None,
            labels: None,
            classes: None,
            distance_m: 30.0,
            synthetic: SyntheticScene::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub line_resolution: usize,
    /// Per-pixel sensor extent in metres; has no safe default.
    pub sensor_extent_m: Option<f64>,
    pub focal_length_m: f64,
    pub exposure_ms: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let p = CameraSpec::prototype(1.0);
        CameraSection {
            line_resolution: p.line_resolution,
            sensor_extent_m: None,
            focal_length_m: p.focal_length_m,
            exposure_ms: p.exposure_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorSection {
    pub theta_max_optical_deg: f64,
    pub mechanical_half_angle_deg: f64,
    pub rest_tilt_deg: f64,
    pub swap_axes: bool,
}

impl Default for MirrorSection {
    fn default() -> Self {
        let m = MirrorSpec::default();
        MirrorSection {
            theta_max_optical_deg: m.theta_max_optical_deg,
            mechanical_half_angle_deg: m.mechanical_half_angle_deg,
            rest_tilt_deg: m.rest_tilt_deg,
            swap_axes: m.swap_axes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: CaptureMode,
    pub factor: usize,
    pub patch_size: usize,
    pub k: usize,
    pub d_model: usize,
    /// `"sobel"` or a path to a PGM / single-band cube.
    pub attention: String,
    /// Patch counts reported by `evaluate`; each must be ≤ `k`.
    pub k_list: Vec<usize>,
    pub noise_sigma: f64,
    pub serpentine: bool,
    pub memory_limit: usize,
    pub scene: SceneSection,
    pub camera: CameraSection,
    pub mirror: MirrorSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let a = AdaptiveConfig::default();
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            mode: CaptureMode::default(),
            factor: a.factor,
            patch_size: a.patch_size,
            k: a.k,
            d_model: a.d_model,
            attention: "sobel".into(),
            k_list: vec![a.k],
            noise_sigma: 0.0,
            serpentine: true,
            memory_limit: MIRROR_MEMORY,
            scene: SceneSection::default(),
            camera: CameraSection::default(),
            mirror: MirrorSection::default(),
        }
    }
}

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML experiment configuration
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Scene cube header (a synthetic scene is used otherwise)
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Ground-truth label PGM for the scene
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub factor: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Number of wandering patches
    #[arg(short, long)]
    pub k: Option<usize>,
    /// Comma-separated patch counts to evaluate
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    /// "sobel" or a path to an attention PGM / cube
    #[arg(long)]
    pub attention: Option<String>,
    /// Per-pixel sensor extent in metres
    #[arg(long)]
    pub sensor_extent: Option<f64>,
    #[arg(long)]
    pub exposure_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Simulate,
    Desk,
}

impl ExperimentConfig {
    pub fn load(ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg: ExperimentConfig =
                    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                // relative paths in the file are relative to the file
                let base = p.parent().unwrap_or(Path::new("."));
                for path in [&mut cfg.scene.path, &mut cfg.scene.labels].into_iter().flatten() {
                    if path.is_relative() {
                        *path = base.join(&*path);
                    }
                }
                cfg
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = &ov.out {
            self.out_dir = v.clone();
        }
        if let Some(v) = &ov.scene {
            self.scene.path = Some(v.clone());
        }
        if let Some(v) = &ov.labels {
            self.scene.labels = Some(v.clone());
        }
        if let Some(v) = ov.mode {
            self.mode = match v {
                ModeArg::Simulate => CaptureMode::Simulate,
                ModeArg::Desk => CaptureMode::Desk,
            };
        }
        if let Some(v) = ov.factor {
            self.factor = v;
        }
        if let Some(v) = ov.patch_size {
            self.patch_size = v;
        }
        if let Some(v) = ov.k {
            self.k = v;
            if ov.k_list.is_none() {
                self.k_list.retain(|&x| x <= v);
                if !self.k_list.contains(&v) {
                    self.k_list.push(v);
                }
            }
        }
        if let Some(v) = &ov.k_list {
            self.k_list = v.clone();
        }
        if let Some(v) = &ov.attention {
            self.attention = v.clone();
        }
        if let Some(v) = ov.sensor_extent {
            self.camera.sensor_extent_m = Some(v);
        }
        if let Some(v) = ov.exposure_ms {
            self.camera.exposure_ms = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adaptive()
            .validate()
            .map_err(|e| usage(format!("invalid patch settings: {e}")))?;
        if let Some(&bad) = self.k_list.iter().find(|&&x| x > self.k) {
            return Err(usage(format!("k_list entry {bad} exceeds k = {}", self.k)));
        }
        for p in [&self.scene.path, &self.scene.labels].into_iter().flatten() {
            if !p.exists() {
                return Err(usage(format!("no such file: {}", p.display())));
            }
        }
        if self.attention != "sobel" && !Path::new(&self.attention).exists() {
            return Err(usage(format!("attention must be \"sobel\" or an existing file, got {:?}", self.attention)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(usage("noise_sigma must be non-negative"));
        }
        self.mirror()
            .validate()
            .map_err(|e| usage(format!("invalid mirror: {e}")))?;
        Ok(())
    }

    pub fn adaptive(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            factor: self.factor,
            patch_size: self.patch_size,
            k: self.k,
            d_model: self.d_model,
        }
    }

    pub fn mirror(&self) -> MirrorSpec {
        let m = &self.mirror;
        MirrorSpec {
            theta_max_optical_deg: m.theta_max_optical_deg,
            mechanical_half_angle_deg: m.mechanical_half_angle_deg,
            rest_tilt_deg: m.rest_tilt_deg,
            swap_axes: m.swap_axes,
        }
    }

    pub fn camera(&self, bands: usize) -> Result<CameraSpec> {
        let h = self.camera.sensor_extent_m.ok_or_else(|| {
            usage("camera.sensor_extent_m (or --sensor-extent) is required for mirror planning")
        })?;
        let cam = CameraSpec {
            line_resolution: self.camera.line_resolution,
            sensor_extent_m: h,
            focal_length_m: self.camera.focal_length_m,
            exposure_ms: self.camera.exposure_ms,
            bands,
        };
        cam.validate().map_err(|e| usage(format!("invalid camera: {e}")))?;
        Ok(cam)
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            serpentine: self.serpentine,
            memory_limit: self.memory_limit,
            ..PlanOptions::default()
        }
    }

    pub fn external_attention(&self) -> Result<Option<AttentionMap>> {
        if self.attention == "sobel" {
            return Ok(None);
        }
        Ok(Some(load_attention(&self.attention).with_context(|| format!("loading attention {}", self.attention))?))
    }

    /// Scene cube plus ground truth (if known) and class count.
    pub fn load_scene(&self) -> Result<Scene> {
        match &self.scene.path {
            Some(p) => {
                let cube = read_cube(p).with_context(|| format!("reading scene {}", p.display()))?;
                let labels = match &self.scene.labels {
                    Some(l) => {
                        let img = read_pgm(l).with_context(|| format!("reading labels {}", l.display()))?;
                        if (img.width, img.height) != (cube.width(), cube.height()) {
                            return Err(usage(format!(
                                "labels are {}x{} but the scene is {}x{}",
                                img.width,
                                img.height,
                                cube.width(),
                                cube.height()
                            )));
                        }
                        Some(SegMask::from_pgm(&img))
                    }
                    None => None,
                };
                let classes = self
                    .scene
                    .classes
                    .or_else(|| labels.as_ref().map(|m| m.labels.iter().copied().max().map_or(0, |v| v as usize + 1)))
                    .unwrap_or(0);
                Ok(Scene { cube, labels, classes })
            }
            None => {
                let s = &self.scene.synthetic;
                let ls = labeled_scene(s.size, s.bands, s.classes, s.regions, s.noise_sigma, self.seed)
                    .map_err(|e| usage(format!("synthetic scene: {e}")))?;
                let labels = SegMask::new(s.size, s.size, ls.labels)?;
                Ok(Scene {
                    cube: ls.cube,
                    labels: Some(labels),
                    classes: ls.classes,
                })
            }
        }
    }
}

pub struct Scene {
    pub cube: SpectralCube,
    pub labels: Option<SegMask>,
    pub classes: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_fill_defaults() {
        let cfg: ExperimentConfig = toml::from_str("k = 7\n[camera]\nsensor_extent_m = 7.4e-6\n").unwrap();
        assert_eq!(cfg.k, 7);
        assert_eq!(cfg.camera.line_resolution, 640);
        assert_eq!(cfg.scene.synthetic.size, 512);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&Overrides {
            k: Some(10),
            factor: Some(4),
            ..Default::default()
        });
        assert_eq!((cfg.k, cfg.factor), (10, 4));
        assert_eq!(cfg.k_list, vec![10]);
        assert!(cfg.validate().is_ok());
        cfg.k_list = vec![20];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sensor_extent_is_required() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.camera(8).unwrap_err().downcast_ref::<UsageError>().is_some());
    }
}
