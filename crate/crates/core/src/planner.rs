//! Compiles captures into mirror position vectors and computes their time and
//! data budgets.
//!
//! Sweeps are laid out in scene tangent coordinates (see [`crate::geometry`])
//! and converted to XY commands through the full mirror chain. A sweep with
//! direction 0° moves along `v`, i.e. along the across-line X axis, which is
//! the ordinary pushbroom motion.

use std::fmt::Write as _;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    counter_rotation_angles, direction_from_tangent, tangent_coords, xy_from_objective,
    MirrorSpec, UnitVector3, XYPosition,
};

/// Values per axis the controller can hold.
pub const MIRROR_MEMORY: usize = 1500;
/// Tolerated relative mismatch between the frame step and the pixel IFOV.
pub const SQUARE_PIXEL_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub line_resolution: usize,
    /// Per-pixel footprint on the sensor in meters. No default: the prototype
    /// value is not published.
    pub sensor_extent_m: f64,
    pub focal_length_m: f64,
    pub exposure_ms: f64,
    pub bands: usize,
}

impl CameraSpec {
    /// Prototype optics (640 px line, 70 mm lens, 270 bands) with the given
    /// pixel extent and a 100 ms exposure.
    pub fn prototype(sensor_extent_m: f64) -> Self {
        CameraSpec {
            line_resolution: 640,
            sensor_extent_m,
            focal_length_m: 0.070,
            exposure_ms: 100.0,
            bands: crate::cube::PROTOTYPE_BANDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_resolution == 0 || self.bands == 0 {
            return Err(Error::InvalidArgument(
                "line resolution and band count must be positive".into(),
            ));
        }
        for (name, v) in [
            ("sensor_extent_m", self.sensor_extent_m),
            ("focal_length_m", self.focal_length_m),
            ("exposure_ms", self.exposure_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Angular size of one pixel, in tangent-plane units (≈ radians).
    pub fn ifov(&self) -> f64 {
        self.sensor_extent_m / self.focal_length_m
    }

    /// Full angular width of the sensor line in radians.
    pub fn line_fov_rad(&self) -> f64 {
        2.0 * (self.line_resolution as f64 * self.ifov() / 2.0).atan()
    }

    /// Tangent-plane offset of pixel `j` from the line centre.
    pub fn pixel_offset(&self, j: f64) -> f64 {
        (j - (self.line_resolution as f64 - 1.0) / 2.0) * self.ifov()
    }
}

/// Total imaging time for `y_res` frames of `t_exp_ms` each.
pub fn imaging_time(t_exp_ms: f64, y_res: usize) -> f64 {
    t_exp_ms * y_res as f64
}

/// Controller playback rate that spreads `m_mem` values over `t_img_ms`.
pub fn sample_speed(m_mem: usize, t_img_ms: f64) -> Result<f64> {
    if !(t_img_ms > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "imaging time must be positive, got {t_img_ms}"
        )));
    }
    Ok(m_mem as f64 / t_img_ms)
}

/// Ground speed that yields square pixels for a conventional pushbroom.
pub fn scene_speed(sensor_extent_m: f64, distance_m: f64, focal_m: f64, t_exp_s: f64) -> f64 {
    sensor_extent_m * distance_m / (focal_m * t_exp_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedFrame {
    pub xy: XYPosition,
    /// Counter-rotation to apply to this frame's line, degrees.
    pub angle_deg: f64,
    /// Index of the sweep the frame belongs to.
    pub sweep: usize,
}

/// Contiguous range of sensor pixels read out for every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineWindow {
    pub start: usize,
    pub len: usize,
}

impl LineWindow {
    pub fn full(camera: &CameraSpec) -> Self {
        LineWindow {
            start: 0,
            len: camera.line_resolution,
        }
    }

    /// `len` pixels centred on the line.
    pub fn centered(camera: &CameraSpec, len: usize) -> Result<Self> {
        if len == 0 || len > camera.line_resolution {
            return Err(Error::InvalidArgument(format!(
                "window of {len} px does not fit a {} px line",
                camera.line_resolution
            )));
        }
        Ok(LineWindow {
            start: (camera.line_resolution - len) / 2,
            len,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub chunks: Vec<Vec<PlannedFrame>>,
    pub exposure_ms: f64,
    /// Controller playback rate in values per millisecond.
    pub sample_speed: f64,
    pub line_window: LineWindow,
    pub memory_limit: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataBudget {
    pub frames: u64,
    pub pixels: u64,
    pub scalars: u64,
    pub capture_time_ms: u64,
}

impl Add for DataBudget {
    type Output = DataBudget;

    fn add(self, o: DataBudget) -> DataBudget {
        DataBudget {
            frames: self.frames + o.frames,
            pixels: self.pixels + o.pixels,
            scalars: self.scalars + o.scalars,
            capture_time_ms: self.capture_time_ms + o.capture_time_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Alternate the direction of consecutive sweeps.
    pub serpentine: bool,
    pub memory_limit: usize,
    /// Intended frame step in units of the pixel IFOV (above 1 for
    /// decimated sweeps); steps off by more than 5% trigger a warning.
    pub expected_step_ifov: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            serpentine: true,
            memory_limit: MIRROR_MEMORY,
            expected_step_ifov: 1.0,
        }
    }
}

/// One straight pushbroom sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRequest {
    /// Scene direction at the middle of the sweep.
    pub center: UnitVector3,
    /// Half the swept extent, degrees.
    pub halfwidth_deg: f64,
    pub frames: usize,
    /// Sweep heading in the scene, measured from the +v axis towards +u.
    pub direction_deg: f64,
}

impl SweepRequest {
    fn step(&self) -> f64 {
        2.0 * self.halfwidth_deg.to_radians().tan() / self.frames as f64
    }

    /// Frame centres in tangent coordinates.
    pub fn centers(&self) -> Result<Vec<(f64, f64)>> {
        let (uc, vc) = tangent_coords(&self.center).ok_or_else(|| {
            Error::Unreachable("sweep centre faces away from the scene".into())
        })?;
        let (su, sv) = self.direction_deg.to_radians().sin_cos();
        let step = self.step();
        let mid = (self.frames as f64 - 1.0) / 2.0;
        Ok((0..self.frames)
            .map(|k| {
                let s = (k as f64 - mid) * step;
                (uc + s * su, vc + s * sv)
            })
            .collect())
    }
}

fn compile_sweep(
    req: &SweepRequest,
    sweep: usize,
    mirror: &MirrorSpec,
) -> Result<Vec<PlannedFrame>> {
    let xys = req
        .centers()?
        .into_iter()
        .map(|(u, v)| xy_from_objective(&direction_from_tangent(u, v), mirror))
        .collect::<Result<Vec<_>>>()?;
    let angles = if xys.len() >= 2 {
        counter_rotation_angles(&xys)?
    } else {
        vec![0.0; xys.len()]
    };
    Ok(xys
        .into_iter()
        .zip(angles)
        .map(|(xy, angle_deg)| PlannedFrame {
            xy,
            angle_deg,
            sweep,
        })
        .collect())
}

fn chunked(frames: Vec<PlannedFrame>, limit: usize) -> Vec<Vec<PlannedFrame>> {
    frames.chunks(limit.max(1)).map(<[_]>::to_vec).collect()
}

/// Playback rate: spread the full memory over the capture when the frames
/// fit, otherwise advance one value per exposure.
fn playback_speed(frames: usize, exposure_ms: f64, memory_limit: usize) -> f64 {
    if frames == 0 {
        return 0.0;
    }
    if frames < memory_limit {
        memory_limit as f64 / imaging_time(exposure_ms, frames)
    } else {
        1.0 / exposure_ms
    }
}

impl ScanPlan {
    fn from_frames(
        frames: Vec<PlannedFrame>,
        camera: &CameraSpec,
        line_window: LineWindow,
        memory_limit: usize,
        warnings: Vec<String>,
    ) -> Self {
        let n = frames.len();
        ScanPlan {
            chunks: chunked(frames, memory_limit),
            exposure_ms: camera.exposure_ms,
            sample_speed: playback_speed(n, camera.exposure_ms, memory_limit),
            line_window,
            memory_limit,
            warnings,
        }
    }

    pub fn empty(camera: &CameraSpec) -> Self {
        Self::from_frames(Vec::new(), camera, LineWindow::full(camera), MIRROR_MEMORY, Vec::new())
    }

    /// Plans arbitrary sweeps back to back.
    pub fn from_sweeps(
        sweeps: &[SweepRequest],
        camera: &CameraSpec,
        mirror: &MirrorSpec,
        line_window: LineWindow,
        opts: &PlanOptions,
    ) -> Result<Self> {
        camera.validate()?;
        mirror.validate()?;
        let mut frames = Vec::new();
        let mut warnings = Vec::new();
        for (i, req) in sweeps.iter().enumerate() {
            if req.frames == 0 {
                return Err(Error::InvalidArgument("a sweep needs at least one frame".into()));
            }
            let mismatch = req.step() / (opts.expected_step_ifov * camera.ifov()) - 1.0;
            if mismatch.abs() > SQUARE_PIXEL_TOLERANCE {
                warnings.push(format!(
                    "sweep {i}: frame step is {:+.1}% off the pixel IFOV; pixels will not be square",
                    mismatch * 100.0
                ));
            }
            let mut req = *req;
            if opts.serpentine && i % 2 == 1 {
                req.direction_deg += 180.0;
            }
            frames.extend(compile_sweep(&req, i, mirror)?);
        }
        Ok(Self::from_frames(frames, camera, line_window, opts.memory_limit, warnings))
    }

    /// Total frame count (the y resolution of the capture).
    pub fn y_res(&self) -> usize {
        self.chunks.iter().map(Vec::len).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &PlannedFrame> {
        self.chunks.iter().flatten()
    }

    pub fn positions(&self) -> Vec<XYPosition> {
        self.frames().map(|f| f.xy).collect()
    }

    pub fn sweep_count(&self) -> usize {
        self.frames().map(|f| f.sweep + 1).max().unwrap_or(0)
    }

    /// Appends `other`; both plans must share exposure, window and memory size.
    pub fn concat(&self, other: &ScanPlan) -> Result<ScanPlan> {
        if self.exposure_ms != other.exposure_ms
            || self.line_window != other.line_window
            || self.memory_limit != other.memory_limit
        {
            return Err(Error::InvalidArgument(
                "plans differ in exposure, line window or memory size".into(),
            ));
        }
        let offset = self.sweep_count();
        let frames: Vec<PlannedFrame> = self
            .frames()
            .copied()
            .chain(other.frames().map(|f| PlannedFrame {
                sweep: f.sweep + offset,
                ..*f
            }))
            .collect();
        let n = frames.len();
        Ok(ScanPlan {
            chunks: chunked(frames, self.memory_limit),
            exposure_ms: self.exposure_ms,
            sample_speed: playback_speed(n, self.exposure_ms, self.memory_limit),
            line_window: self.line_window,
            memory_limit: self.memory_limit,
            warnings: self.warnings.iter().chain(&other.warnings).cloned().collect(),
        })
    }

    /// X and Y vectors exactly as uploaded to the controller, one pair per
    /// memory load. A capture shorter than the memory is resampled to fill it
    /// so that playback at [`ScanPlan::sample_speed`] spans the capture time.
    pub fn memory_loads(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.y_res();
        if n == 0 {
            return Vec::new();
        }
        if n < self.memory_limit {
            let pos = self.positions();
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for i in 0..self.memory_limit {
                let t = if self.memory_limit == 1 {
                    0.0
                } else {
                    i as f64 * (n - 1) as f64 / (self.memory_limit - 1) as f64
                };
                let k = (t.floor() as usize).min(n - 1);
                let f = t - k as f64;
                let (a, b) = (pos[k], pos[(k + 1).min(n - 1)]);
                xs.push(a.x() + f * (b.x() - a.x()));
                ys.push(a.y() + f * (b.y() - a.y()));
            }
            return vec![(xs, ys)];
        }
        self.chunks
            .iter()
            .map(|c| c.iter().map(|f| (f.xy.x(), f.xy.y())).unzip())
            .collect()
    }

    /// Text form: header lines, then `X Y angle` triples separated by
    /// `CHUNK`/`SWEEP` markers.
    pub fn to_text(&self) -> String {
        let mut s = String::from("PLAN v1\n");
        let _ = writeln!(s, "exposure_ms {}", self.exposure_ms);
        let _ = writeln!(s, "sample_speed {}", self.sample_speed);
        let _ = writeln!(s, "line_window {} {}", self.line_window.start, self.line_window.len);
        let _ = writeln!(s, "memory_limit {}", self.memory_limit);
        let _ = writeln!(s, "frames {}", self.y_res());
        let mut sweep = None;
        for (ci, chunk) in self.chunks.iter().enumerate() {
            let _ = writeln!(s, "CHUNK {ci}");
            for f in chunk {
                if sweep != Some(f.sweep) {
                    let _ = writeln!(s, "SWEEP {}", f.sweep);
                    sweep = Some(f.sweep);
                }
                let _ = writeln!(s, "{} {} {}", f.xy.x(), f.xy.y(), f.angle_deg);
            }
        }
        s.push_str("END\n");
        s
    }

    pub fn from_text(text: &str) -> Result<ScanPlan> {
        let bad = |n: usize, msg: &str| Error::Header(format!("plan line {}: {msg}", n + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "PLAN v1")) => {}
            _ => return Err(bad(0, "expected `PLAN v1`")),
        }
        let mut exposure = None;
        let mut speed = None;
        let mut window = None;
        let mut memory = None;
        let mut declared = None;
        let mut chunks: Vec<Vec<PlannedFrame>> = Vec::new();
        let mut sweep = 0usize;
        let mut ended = false;
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if ended {
                return Err(bad(n, "content after END"));
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                parts
                    .get(i)
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| bad(n, "expected a number"))
            };
            let int = |i: usize| -> Result<usize> {
                parts
                    .get(i)
                    .and_then(|p| p.parse::<usize>().ok())
                    .ok_or_else(|| bad(n, "expected an integer"))
            };
            match parts[0] {
                "exposure_ms" => exposure = Some(num(1)?),
                "sample_speed" => speed = Some(num(1)?),
                "line_window" => {
                    window = Some(LineWindow {
                        start: int(1)?,
                        len: int(2)?,
                    })
                }
                "memory_limit" => memory = Some(int(1)?),
                "frames" => declared = Some(int(1)?),
                "CHUNK" => chunks.push(Vec::new()),
                "SWEEP" => sweep = int(1)?,
                "END" => ended = true,
                _ => {
                    if parts.len() != 3 {
                        return Err(bad(n, "expected `X Y angle`"));
                    }
                    let chunk = chunks.last_mut().ok_or_else(|| bad(n, "frame before CHUNK"))?;
                    let xy = XYPosition::new(num(0)?, num(1)?).map_err(|e| bad(n, &e.to_string()))?;
                    chunk.push(PlannedFrame {
                        xy,
                        angle_deg: num(2)?,
                        sweep,
                    });
                }
            }
        }
        if !ended {
            return Err(Error::Header("plan is missing END".into()));
        }
        let missing = |k: &str| Error::Header(format!("plan is missing `{k}`"));
        let plan = ScanPlan {
            chunks,
            exposure_ms: exposure.ok_or_else(|| missing("exposure_ms"))?,
            sample_speed: speed.ok_or_else(|| missing("sample_speed"))?,
            line_window: window.ok_or_else(|| missing("line_window"))?,
            memory_limit: memory.ok_or_else(|| missing("memory_limit"))?,
            warnings: Vec::new(),
        };
        if let Some(d) = declared {
            if d != plan.y_res() {
                return Err(Error::Header(format!(
                    "plan declares {d} frames but lists {}",
                    plan.y_res()
                )));
            }
        }
        if let Some(c) = plan.chunks.iter().find(|c| c.len() > plan.memory_limit) {
            return Err(Error::Header(format!(
                "chunk of {} values exceeds memory limit {}",
                c.len(),
                plan.memory_limit
            )));
        }
        Ok(plan)
    }
}

/// Single sweep of `y_res` frames across a field of ±`fov_halfwidth_deg`.
pub fn plan_full_scan(
    fov_center: &UnitVector3,
    fov_halfwidth_deg: f64,
    y_res: usize,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
) -> Result<ScanPlan> {
    plan_full_scan_with(fov_center, fov_halfwidth_deg, y_res, camera, mirror, &PlanOptions::default())
}

pub fn plan_full_scan_with(
    fov_center: &UnitVector3,
    fov_halfwidth_deg: f64,
    y_res: usize,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
    opts: &PlanOptions,
) -> Result<ScanPlan> {
    if y_res == 0 {
        return Err(Error::InvalidArgument("y_res must be at least 1".into()));
    }
    if !(fov_halfwidth_deg > 0.0 && fov_halfwidth_deg < 90.0) {
        return Err(Error::InvalidArgument(format!(
            "field half-width {fov_halfwidth_deg}° out of range"
        )));
    }
    let req = SweepRequest {
        center: *fov_center,
        halfwidth_deg: fov_halfwidth_deg,
        frames: y_res,
        direction_deg: 0.0,
    };
    let mut plan = ScanPlan::from_sweeps(&[req], camera, mirror, LineWindow::full(camera), opts)?;
    let field = 2.0 * fov_halfwidth_deg.to_radians().tan();
    let line = camera.line_resolution as f64 * camera.ifov();
    if line < field * (1.0 - SQUARE_PIXEL_TOLERANCE) {
        plan.warnings.push(format!(
            "sensor line covers {:.1}% of the requested field width",
            100.0 * line / field
        ));
    }
    Ok(plan)
}

/// Half-width that makes a `y_res`-frame sweep step by exactly one IFOV.
pub fn square_pixel_halfwidth_deg(y_res: usize, camera: &CameraSpec) -> f64 {
    (y_res as f64 * camera.ifov() / 2.0).atan().to_degrees()
}

/// One `patch_size`-frame sweep per patch centre at full angular resolution,
/// reading out only the central `patch_size` pixels of each line.
pub fn plan_patch_scan(
    patch_centers: &[UnitVector3],
    patch_size: usize,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
) -> Result<ScanPlan> {
    plan_patch_scan_with(patch_centers, patch_size, camera, mirror, &PlanOptions::default())
}

pub fn plan_patch_scan_with(
    patch_centers: &[UnitVector3],
    patch_size: usize,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
    opts: &PlanOptions,
) -> Result<ScanPlan> {
    if patch_centers.is_empty() {
        return Err(Error::InvalidArgument("no patches to capture".into()));
    }
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let halfwidth_deg = square_pixel_halfwidth_deg(patch_size, camera);
    let sweeps: Vec<SweepRequest> = patch_centers
        .iter()
        .map(|c| SweepRequest {
            center: *c,
            halfwidth_deg,
            frames: patch_size,
            direction_deg: 0.0,
        })
        .collect();
    let window = LineWindow::centered(camera, patch_size)?;
    ScanPlan::from_sweeps(&sweeps, camera, mirror, window, opts)
}

pub fn budget(plan: &ScanPlan, camera: &CameraSpec) -> DataBudget {
    let frames = plan.y_res() as u64;
    let pixels = frames * plan.line_window.len as u64;
    DataBudget {
        frames,
        pixels,
        scalars: pixels * camera.bands as u64,
        capture_time_ms: imaging_time(plan.exposure_ms, frames as usize).round() as u64,
    }
}
