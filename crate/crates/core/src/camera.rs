//! Line-camera simulator: renders pushbroom frames of a flat synthetic scene
//! through the steered mirror, and mosaics frames back into cubes.
//!
//! The scene is a fronto-parallel plane at distance `d` whose pixels sit on a
//! regular grid in tangent coordinates (`u` → columns, `v` → rows). Each
//! sensor pixel's ray is traced exactly: camera fan → mirror reflection →
//! plane intersection → bilinear sample.
//!
//! While the mirror follows a path that is not aligned with its axes, the
//! imaged line turns with the path tangent. Rendering models that by rotating
//! the fan by `-θ`, where `θ` is the planned counter-rotation. A frame carries
//! the orientation the mosaicker *believes* it had: zero for raw frames, and
//! the true orientation once [`correct_rotation`] has been applied.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cube::SpectralCube;
use crate::error::{Error, Result};
use crate::geometry::{normal_from_xy, reflection_matrix, MirrorSpec, XYPosition};
use crate::planner::{CameraSpec, LineWindow, ScanPlan};

/// Label value for rays that miss the scene.
pub const NO_LABEL: u16 = u16::MAX;
/// Minimum accumulated splat weight for a mosaic cell to count as observed.
const MIN_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    distance_m: f64,
    cube: SpectralCube,
    labels: Option<Vec<u16>>,
    /// Tangent-plane size of one scene pixel.
    pitch: f64,
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Continuous pixel coordinate for `s` on an axis of `n` pixels, or `None`
/// if it lies outside the outer pixel edges.
#[inline]
fn axis_coord(s: f64, n: usize) -> Option<(usize, usize, f64)> {
    if !(s >= -0.5 && s <= n as f64 - 0.5) {
        return None;
    }
    if n == 1 {
        return Some((0, 0, 0.0));
    }
    let c = s.clamp(0.0, (n - 1) as f64);
    let i = (c.floor() as usize).min(n - 2);
    Some((i, i + 1, c - i as f64))
}

impl SceneModel {
    pub fn new(cube: SpectralCube, distance_m: f64, pitch: f64) -> Result<Self> {
        if !(distance_m.is_finite() && distance_m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scene distance must be positive, got {distance_m}"
            )));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scene pitch must be positive, got {pitch}"
            )));
        }
        Ok(SceneModel {
            distance_m,
            cube,
            labels: None,
            pitch,
        })
    }

    /// Scene whose pixels match the camera's angular pixel size.
    pub fn matched(cube: SpectralCube, distance_m: f64, camera: &CameraSpec) -> Result<Self> {
        Self::new(cube, distance_m, camera.ifov())
    }

    pub fn with_labels(mut self, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != self.cube.width() * self.cube.height() {
            return Err(Error::DimMismatch(format!(
                "label map has {} entries for a {}x{} scene",
                labels.len(),
                self.cube.width(),
                self.cube.height()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn cube(&self) -> &SpectralCube {
        &self.cube
    }

    pub fn labels(&self) -> Option<&[u16]> {
        self.labels.as_deref()
    }

    pub fn distance_m(&self) -> f64 {
        self.distance_m
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Full angular width and height of the scene, degrees.
    pub fn angular_extent_deg(&self) -> (f64, f64) {
        let ext = |n: usize| 2.0 * (n as f64 * self.pitch / 2.0).atan().to_degrees();
        (ext(self.cube.width()), ext(self.cube.height()))
    }

    /// Tangent coordinates of the centre of scene pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5 - self.cube.width() as f64 / 2.0) * self.pitch,
            (row as f64 + 0.5 - self.cube.height() as f64 / 2.0) * self.pitch,
        )
    }

    /// Point on the plane in metres for tangent coordinates `(u, v)`.
    pub fn plane_point_m(&self, u: f64, v: f64) -> (f64, f64) {
        (u * self.distance_m, v * self.distance_m)
    }

    fn continuous(&self, u: f64, v: f64) -> (f64, f64) {
        (
            u / self.pitch + self.cube.width() as f64 / 2.0 - 0.5,
            v / self.pitch + self.cube.height() as f64 / 2.0 - 0.5,
        )
    }

    /// Bilinear sample of every band at `(u, v)` into `out`; returns false
    /// (leaving `out` zeroed) when the point is off the scene.
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f32]) -> bool {
        let (fx, fy) = self.continuous(u, v);
        let (Some((x0, x1, tx)), Some((y0, y1, ty))) = (
            axis_coord(fx, self.cube.width()),
            axis_coord(fy, self.cube.height()),
        ) else {
            out.iter_mut().for_each(|o| *o = 0.0);
            return false;
        };
        let (a, b) = (self.cube.spectrum(x0, y0), self.cube.spectrum(x1, y0));
        let (c, d) = (self.cube.spectrum(x0, y1), self.cube.spectrum(x1, y1));
        for (k, o) in out.iter_mut().enumerate() {
            let top = lerp(a[k] as f64, b[k] as f64, tx);
            let bottom = lerp(c[k] as f64, d[k] as f64, tx);
            *o = lerp(top, bottom, ty) as f32;
        }
        true
    }

    pub fn sample(&self, u: f64, v: f64) -> Option<Vec<f32>> {
        let mut out = vec![0.0; self.cube.bands()];
        self.sample_into(u, v, &mut out).then_some(out)
    }

    /// Nearest-neighbour label at `(u, v)`.
    pub fn label_at(&self, u: f64, v: f64) -> u16 {
        let Some(labels) = &self.labels else {
            return NO_LABEL;
        };
        let (fx, fy) = self.continuous(u, v);
        match (axis_coord(fx, self.cube.width()), axis_coord(fy, self.cube.height())) {
            (Some(_), Some(_)) => {
                let x = fx.round().clamp(0.0, (self.cube.width() - 1) as f64) as usize;
                let y = fy.round().clamp(0.0, (self.cube.height() - 1) as f64) as usize;
                labels[y * self.cube.width() + x]
            }
            _ => NO_LABEL,
        }
    }
}

/// Where a sensor pixel looks, as tangent coordinates.
///
/// `offset` is the pixel's tangent offset from the line centre and
/// `orientation_deg` rotates the camera fan about the optical axis.
#[derive(Debug, Clone, Copy)]
pub struct RayCaster {
    m: [[f64; 3]; 3],
    sin: f64,
    cos: f64,
}

impl RayCaster {
    pub fn new(xy: &XYPosition, orientation_deg: f64, mirror: &MirrorSpec) -> Self {
        let (sin, cos) = orientation_deg.to_radians().sin_cos();
        RayCaster {
            m: reflection_matrix(&normal_from_xy(xy, mirror)).0,
            sin,
            cos,
        }
    }

    pub fn cast(&self, offset: f64) -> Option<(f64, f64)> {
        // reflection is linear, so the unnormalised fan ray can be used directly
        let i = [-offset * self.sin, offset * self.cos, -1.0];
        let m = &self.m;
        let r = [
            m[0][0] * i[0] + m[0][1] * i[1] + m[0][2] * i[2],
            m[1][0] * i[0] + m[1][1] * i[1] + m[1][2] * i[2],
            m[2][0] * i[0] + m[2][1] * i[1] + m[2][2] * i[2],
        ];
        (r[0] > 0.0).then(|| (r[1] / r[0], -r[2] / r[0]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLine {
    /// Pixel-major samples: `pixel * bands + band`.
    pub samples: Vec<f32>,
    /// Whether each pixel's ray hit the scene.
    pub hit: Vec<bool>,
    pub bands: usize,
    /// Sensor index of the first read-out pixel.
    pub first_pixel: usize,
    pub xy: XYPosition,
    /// Planned counter-rotation, degrees.
    pub rotation_deg: f64,
    /// Fan orientation assumed when placing the line, degrees.
    pub orientation_deg: f64,
    /// Nearest-neighbour labels, when the scene has them.
    pub labels: Option<Vec<u16>>,
}

impl FrameLine {
    pub fn pixels(&self) -> usize {
        self.hit.len()
    }

    pub fn pixel(&self, j: usize) -> &[f32] {
        &self.samples[j * self.bands..(j + 1) * self.bands]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Rotate each frame's fan by `-θ` to mimic image rotation along
    /// non-axis-aligned paths.
    pub induce_rotation: bool,
    /// Standard deviation of additive Gaussian noise (0 disables it).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SimOptions {
    pub fn physical() -> Self {
        SimOptions {
            induce_rotation: true,
            ..Default::default()
        }
    }
}

/// Renders one line with the fan rotated by `fan_deg`.
pub fn render_line(
    scene: &SceneModel,
    xy: &XYPosition,
    fan_deg: f64,
    window: LineWindow,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
) -> FrameLine {
    let bands = scene.cube().bands();
    let caster = RayCaster::new(xy, fan_deg, mirror);
    let mut samples = vec![0.0f32; window.len * bands];
    let mut hit = vec![false; window.len];
    let mut labels = scene.labels().map(|_| vec![NO_LABEL; window.len]);
    for (j, (px, h)) in samples.chunks_mut(bands).zip(hit.iter_mut()).enumerate() {
        let Some((u, v)) = caster.cast(camera.pixel_offset((window.start + j) as f64)) else {
            continue;
        };
        *h = scene.sample_into(u, v, px);
        if let Some(l) = labels.as_mut() {
            l[j] = scene.label_at(u, v);
        }
    }
    FrameLine {
        samples,
        hit,
        bands,
        first_pixel: window.start,
        xy: *xy,
        rotation_deg: 0.0,
        orientation_deg: 0.0,
        labels,
    }
}

/// Full sensor line at `xy` with the fan in its rest orientation.
pub fn sample_line(
    scene: &SceneModel,
    xy: &XYPosition,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
) -> FrameLine {
    render_line(scene, xy, 0.0, LineWindow::full(camera), camera, mirror)
}

/// One frame per plan position, in plan order, without induced rotation.
pub fn execute_plan(
    scene: &SceneModel,
    plan: &ScanPlan,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
) -> Vec<FrameLine> {
    execute_plan_with(scene, plan, camera, mirror, &SimOptions::default())
}

pub fn execute_plan_with(
    scene: &SceneModel,
    plan: &ScanPlan,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
    opts: &SimOptions,
) -> Vec<FrameLine> {
    let frames: Vec<_> = plan.frames().copied().collect();
    frames
        .par_iter()
        .enumerate()
        .map(|(k, f)| {
            let fan = if opts.induce_rotation { -f.angle_deg } else { 0.0 };
            let mut line = render_line(scene, &f.xy, fan, plan.line_window, camera, mirror);
            line.rotation_deg = f.angle_deg;
            if opts.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let normal = Normal::new(0.0, opts.noise_sigma).expect("sigma is positive");
                for (px, &h) in line.samples.chunks_mut(line.bands).zip(&line.hit) {
                    if h {
                        px.iter_mut().for_each(|s| *s += normal.sample(&mut rng) as f32);
                    }
                }
            }
            line
        })
        .collect()
}

/// Applies each frame's counter-rotation. Samples are untouched; the
/// rotation is carried into the frame's orientation and realised when the
/// mosaicker resamples the lines onto its grid.
pub fn correct_rotation(frames: &[FrameLine]) -> Vec<FrameLine> {
    frames
        .iter()
        .map(|f| FrameLine {
            orientation_deg: f.orientation_deg - f.rotation_deg,
            ..f.clone()
        })
        .collect()
}

/// Bilinear rotation of a `width × height` plane by `angle_deg` about its
/// centre; samples that come from outside the plane take `fill`.
pub fn rotate_plane(plane: &[f32], width: usize, height: usize, angle_deg: f64, fill: f32) -> Vec<f32> {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let mut out = vec![fill; width * height];
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: where the output pixel came from
            let sx = snap(c * dx + s * dy + cx);
            let sy = snap(-s * dx + c * dy + cy);
            if sx < 0.0 || sy < 0.0 || sx > (width - 1) as f64 || sy > (height - 1) as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
            let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
            let at = |x: usize, y: usize| plane[y * width + x] as f64;
            let top = lerp(at(x0, y0), at(x1, y0), tx);
            let bottom = lerp(at(x0, y1), at(x1, y1), tx);
            out[y * width + x] = lerp(top, bottom, ty) as f32;
        }
    }
    out
}

/// Output raster of a mosaic, in tangent coordinates. Cell `(c, r)` is
/// centred on `(u0 + (c + ½)·pitch, v0 + (r + ½)·pitch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicGrid {
    pub u0: f64,
    pub v0: f64,
    pub pitch: f64,
    pub width: usize,
    pub height: usize,
}

impl MosaicGrid {
    pub fn cell_center(&self, c: usize, r: usize) -> (f64, f64) {
        (
            self.u0 + (c as f64 + 0.5) * self.pitch,
            self.v0 + (r as f64 + 0.5) * self.pitch,
        )
    }

    /// Grid with the scene's own pixel layout.
    pub fn for_scene(scene: &SceneModel) -> Self {
        let (w, h) = (scene.cube().width(), scene.cube().height());
        MosaicGrid {
            u0: -(w as f64) / 2.0 * scene.pitch(),
            v0: -(h as f64) / 2.0 * scene.pitch(),
            pitch: scene.pitch(),
            width: w,
            height: h,
        }
    }

    /// Smallest grid of the given pitch covering every hit pixel, aligned so
    /// that the first frame's first pixel falls on a cell centre.
    pub fn covering(frames: &[FrameLine], camera: &CameraSpec, mirror: &MirrorSpec, pitch: f64) -> Result<Self> {
        let mut anchor = None;
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for f in frames {
            let caster = RayCaster::new(&f.xy, f.orientation_deg, mirror);
            for j in (0..f.pixels()).filter(|&j| f.hit[j]) {
                if let Some((u, v)) = caster.cast(camera.pixel_offset((f.first_pixel + j) as f64)) {
                    anchor.get_or_insert((u, v));
                    lo = (lo.0.min(u), lo.1.min(v));
                    hi = (hi.0.max(u), hi.1.max(v));
                }
            }
        }
        let (au, av) = anchor.ok_or_else(|| Error::InvalidArgument("no frame pixel hit the scene".into()))?;
        let idx = |x: f64, a: f64| (x - a) / pitch;
        let (c0, c1) = ((idx(lo.0, au) + 1e-6).floor(), (idx(hi.0, au) - 1e-6).ceil());
        let (r0, r1) = ((idx(lo.1, av) + 1e-6).floor(), (idx(hi.1, av) - 1e-6).ceil());
        Ok(MosaicGrid {
            u0: au + (c0 - 0.5) * pitch,
            v0: av + (r0 - 0.5) * pitch,
            pitch,
            width: (c1 - c0) as usize + 1,
            height: (r1 - r0) as usize + 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    /// Weighted mean of every contribution (bilinear splat).
    #[default]
    Mean,
    /// Nearest cell, later frames overwrite earlier ones.
    LastWrite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mosaic {
    pub cube: SpectralCube,
    /// Observed cells; unobserved cells hold 0.
    pub valid: Vec<bool>,
    pub grid: MosaicGrid,
}

impl Mosaic {
    pub fn coverage(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }
}

/// Places every hit pixel of `frames` on `grid` using each frame's believed
/// orientation.
pub fn mosaic(
    frames: &[FrameLine],
    wavelengths: &[f64],
    grid: &MosaicGrid,
    camera: &CameraSpec,
    mirror: &MirrorSpec,
    policy: Overlap,
) -> Result<Mosaic> {
    let bands = wavelengths.len();
    if grid.width == 0 || grid.height == 0 {
        return Err(Error::InvalidArgument("empty mosaic grid".into()));
    }
    if let Some(f) = frames
        .iter()
        .find(|f| f.bands != bands || f.samples.len() != f.hit.len() * bands)
    {
        return Err(Error::DimMismatch(format!(
            "frame with {} bands / {} samples for {} px does not match {bands} bands",
            f.bands,
            f.samples.len(),
            f.hit.len()
        )));
    }
    let cells = grid.width * grid.height;
    let mut acc = vec![0.0f64; cells * bands];
    let mut weight = vec![0.0f64; cells];
    for f in frames {
        let caster = RayCaster::new(&f.xy, f.orientation_deg, mirror);
        for j in (0..f.pixels()).filter(|&j| f.hit[j]) {
            let Some((u, v)) = caster.cast(camera.pixel_offset((f.first_pixel + j) as f64)) else {
                continue;
            };
            let fx = (u - grid.u0) / grid.pitch - 0.5;
            let fy = (v - grid.v0) / grid.pitch - 0.5;
            let px = f.pixel(j);
            match policy {
                Overlap::Mean => {
                    let (x0, y0) = (fx.floor(), fy.floor());
                    let (tx, ty) = (fx - x0, fy - y0);
                    for (dx, dy, w) in [
                        (0, 0, (1.0 - tx) * (1.0 - ty)),
                        (1, 0, tx * (1.0 - ty)),
                        (0, 1, (1.0 - tx) * ty),
                        (1, 1, tx * ty),
                    ] {
                        let (cx, cy) = (x0 as i64 + dx, y0 as i64 + dy);
                        if w <= 0.0 || cx < 0 || cy < 0 || cx >= grid.width as i64 || cy >= grid.height as i64 {
                            continue;
                        }
                        let cell = cy as usize * grid.width + cx as usize;
                        weight[cell] += w;
                        // running mean keeps constant inputs exact
                        let k = w / weight[cell];
                        for (m, &s) in acc[cell * bands..(cell + 1) * bands].iter_mut().zip(px) {
                            *m += k * (s as f64 - *m);
                        }
                    }
                }
                Overlap::LastWrite => {
                    let (cx, cy) = (fx.round(), fy.round());
                    if cx < 0.0 || cy < 0.0 || cx >= grid.width as f64 || cy >= grid.height as f64 {
                        continue;
                    }
                    let cell = cy as usize * grid.width + cx as usize;
                    weight[cell] = 1.0;
                    for (m, &s) in acc[cell * bands..(cell + 1) * bands].iter_mut().zip(px) {
                        *m = s as f64;
                    }
                }
            }
        }
    }
    let valid: Vec<bool> = weight.iter().map(|&w| w > MIN_WEIGHT).collect();
    let data = acc
        .chunks(bands)
        .zip(&valid)
        .flat_map(|(px, &ok)| px.iter().map(move |&v| if ok { v as f32 } else { 0.0 }))
        .collect();
    Ok(Mosaic {
        cube: SpectralCube::new(grid.width, grid.height, wavelengths.to_vec(), data)?,
        valid,
        grid: *grid,
    })
}

/// Stacks frames as rows of a cube, ignoring geometry (the raw pushbroom
/// image).
pub fn stack_frames(frames: &[FrameLine], wavelengths: &[f64]) -> Result<SpectralCube> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to stack".into()))?;
    let width = first.pixels();
    if frames.iter().any(|f| f.pixels() != width || f.bands != wavelengths.len()) {
        return Err(Error::DimMismatch("frames differ in size".into()));
    }
    let data = frames.iter().flat_map(|f| f.samples.iter().copied()).collect();
    SpectralCube::new(width, frames.len(), wavelengths.to_vec(), data)
}

/// Direct bilinear projection of the scene onto `grid`, for comparisons.
pub fn project_scene(scene: &SceneModel, grid: &MosaicGrid) -> (SpectralCube, Vec<bool>) {
    let bands = scene.cube().bands();
    let mut data = vec![0.0f32; grid.width * grid.height * bands];
    let mut valid = vec![false; grid.width * grid.height];
    for r in 0..grid.height {
        for c in 0..grid.width {
            let (u, v) = grid.cell_center(c, r);
            let cell = r * grid.width + c;
            valid[cell] = scene.sample_into(u, v, &mut data[cell * bands..(cell + 1) * bands]);
        }
    }
    let cube = SpectralCube::new(grid.width, grid.height, scene.cube().wavelengths().to_vec(), data)
        .expect("grid dimensions are positive");
    (cube, valid)
}

/// Per-band RMSE between two cubes over cells valid in `mask`, as a
/// fraction of each band's dynamic range in `reference`.
pub fn relative_rmse(test: &SpectralCube, reference: &SpectralCube, mask: &[bool]) -> Result<Vec<f64>> {
    if test.width() != reference.width() || test.height() != reference.height() || test.bands() != reference.bands() {
        return Err(Error::DimMismatch("cubes differ in shape".into()));
    }
    let bands = test.bands();
    let mut out = Vec::with_capacity(bands);
    for b in 0..bands {
        let (mut se, mut n) = (0.0f64, 0usize);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &ok) in mask.iter().enumerate() {
            if !ok {
                continue;
            }
            let (t, r) = (test.as_slice()[i * bands + b] as f64, reference.as_slice()[i * bands + b] as f64);
            se += (t - r).powi(2);
            n += 1;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if n == 0 {
            return Err(Error::InvalidArgument("no cells to compare".into()));
        }
        let range = if hi > lo { hi - lo } else { 1.0 };
        out.push((se / n as f64).sqrt() / range);
    }
    Ok(out)
}
