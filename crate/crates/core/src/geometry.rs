//! Mirror and ray mathematics for the 45°-mounted two-axis galvo mirror.
//!
//! Frame conventions used throughout the crate:
//!
//! * the camera looks along `-z` into the mirror, so every camera ray has a
//!   negative `z` component and the central ray is `(0, 0, -1)`;
//! * at rest the mirror normal is `(1/√2, 0, 1/√2)`, which folds the central
//!   ray onto the boresight `(1, 0, 0)`;
//! * scene directions are reported in tangent-plane coordinates
//!   `u = o_y / o_x` (along the sensor line) and `v = -o_z / o_x` (across it,
//!   growing with positive `X`).
//!
//! Angles are degrees at every public interface and radians internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-12;
/// Slack allowed when a derived XY value lands a rounding error outside ±1.
const XY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorSpec {
    /// Full optical deflection used by the position-value tangent law.
    pub theta_max_optical_deg: f64,
    /// Mechanical half-throw; `sin` of it normalises the rest-frame normal.
    pub mechanical_half_angle_deg: f64,
    /// Mount tilt of the mirror relative to the camera axis.
    pub rest_tilt_deg: f64,
    /// Exchange the X and Y channels (X drives the across-line axis by default).
    #[serde(default)]
    pub swap_axes: bool,
}

impl Default for MirrorSpec {
    fn default() -> Self {
        MirrorSpec {
            theta_max_optical_deg: 50.0,
            mechanical_half_angle_deg: 25.0,
            rest_tilt_deg: 45.0,
            swap_axes: false,
        }
    }
}

impl MirrorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_max_optical_deg", self.theta_max_optical_deg),
            ("mechanical_half_angle_deg", self.mechanical_half_angle_deg),
            ("rest_tilt_deg", self.rest_tilt_deg),
        ] {
            if !(v > 0.0 && v < 90.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in (0, 90) degrees, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn half_throw_sin(&self) -> f64 {
        self.mechanical_half_angle_deg.to_radians().sin()
    }
}

/// Normalised two-axis mirror command, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct XYPosition {
    x: f64,
    y: f64,
}

impl XYPosition {
    pub const REST: XYPosition = XYPosition { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Result<Self> {
        for v in [x, y] {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::OutOfRange(format!(
                    "mirror position ({x}, {y}) outside [-1, 1]"
                )));
            }
        }
        Ok(XYPosition { x, y })
    }

    /// Like [`XYPosition::new`] but snaps values within rounding slack of ±1.
    fn new_slack(x: f64, y: f64) -> Result<Self> {
        let snap = |v: f64| {
            if v.abs() > 1.0 && v.abs() <= 1.0 + XY_SLACK {
                v.signum()
            } else {
                v
            }
        };
        Self::new(snap(x), snap(y))
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVector3([f64; 3]);

impl UnitVector3 {
    pub const BORESIGHT: UnitVector3 = UnitVector3([1.0, 0.0, 0.0]);
    /// Direction of the central camera ray travelling into the mirror.
    pub const CAMERA_INCIDENT: UnitVector3 = UnitVector3([0.0, 0.0, -1.0]);

    /// Accepts `v` only if it is already unit length within 1e-12.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnit(norm));
        }
        Ok(UnitVector3([x, y, z]))
    }

    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NonUnit(norm));
        }
        Ok(UnitVector3([x / norm, y / norm, z / norm]))
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// Angle between two directions in radians, stable for tiny angles.
    pub fn angle_to(&self, other: &UnitVector3) -> f64 {
        let [a, b, c] = self.0;
        let [d, e, f] = other.0;
        let cross = [b * f - c * e, c * d - a * f, a * e - b * d];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        sin.atan2(self.dot(other))
    }
}

/// 3×3 Householder reflection `I - 2 n nᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionMatrix(pub [[f64; 3]; 3]);

impl ReflectionMatrix {
    pub fn apply(&self, v: &UnitVector3) -> [f64; 3] {
        mat_vec(&self.0, &v.0)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn transpose(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        t
    }

    pub fn squared(&self) -> [[f64; 3]; 3] {
        mat_mul(&self.0, &self.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Position value for a mirror rotation of `theta_deg`.
pub fn xy_from_angle(theta_deg: f64, spec: &MirrorSpec) -> Result<f64> {
    if !theta_deg.is_finite() || theta_deg.abs() > spec.theta_max_optical_deg {
        return Err(Error::OutOfRange(format!(
            "angle {theta_deg}° exceeds ±{}°",
            spec.theta_max_optical_deg
        )));
    }
    Ok(theta_deg.to_radians().tan() / spec.theta_max_optical_deg.to_radians().tan())
}

pub fn angle_from_xy(x: f64, spec: &MirrorSpec) -> Result<f64> {
    if !x.is_finite() || x.abs() > 1.0 {
        return Err(Error::OutOfRange(format!("position value {x} outside [-1, 1]")));
    }
    Ok((x * spec.theta_max_optical_deg.to_radians().tan())
        .atan()
        .to_degrees())
}

pub fn reflection_matrix(n: &UnitVector3) -> ReflectionMatrix {
    let [a, b, c] = n.0;
    ReflectionMatrix([
        [1.0 - 2.0 * a * a, -2.0 * a * b, -2.0 * a * c],
        [-2.0 * a * b, 1.0 - 2.0 * b * b, -2.0 * b * c],
        [-2.0 * a * c, -2.0 * b * c, 1.0 - 2.0 * c * c],
    ])
}

pub fn reflect(v: &UnitVector3, n: &UnitVector3) -> UnitVector3 {
    UnitVector3(reflection_matrix(n).apply(v))
}

/// Mirror normal that folds the camera's central ray onto `o`.
pub fn normal_from_objective(o: &UnitVector3) -> Result<UnitVector3> {
    let c2 = (o.z() + 1.0) / 2.0;
    if c2 <= 1e-12 {
        return Err(Error::Singular);
    }
    let c = c2.sqrt();
    Ok(UnitVector3([o.x() / (2.0 * c), o.y() / (2.0 * c), c]))
}

fn tilt_matrix(spec: &MirrorSpec) -> [[f64; 3]; 3] {
    let (s, c) = spec.rest_tilt_deg.to_radians().sin_cos();
    // maps the rest normal (sin t, 0, cos t) onto +z
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

/// Expresses a mirror normal in the mirror's own (un-tilted) frame.
pub fn undeform_normal(n_m1: &UnitVector3, spec: &MirrorSpec) -> UnitVector3 {
    UnitVector3(mat_vec(&tilt_matrix(spec), &n_m1.0))
}

/// Inverse of [`undeform_normal`].
pub fn deform_normal(n_m0: &UnitVector3, spec: &MirrorSpec) -> UnitVector3 {
    let t = tilt_matrix(spec);
    let tt = [
        [t[0][0], t[1][0], t[2][0]],
        [t[0][1], t[1][1], t[2][1]],
        [t[0][2], t[1][2], t[2][2]],
    ];
    UnitVector3(mat_vec(&tt, &n_m0.0))
}

pub fn xy_from_normal(n_m0: &UnitVector3, spec: &MirrorSpec) -> Result<XYPosition> {
    let s = spec.half_throw_sin();
    let (x, y) = (n_m0.x() / s, n_m0.y() / s);
    let (x, y) = if spec.swap_axes { (y, x) } else { (x, y) };
    XYPosition::new_slack(x, y).map_err(|_| {
        Error::Unreachable(format!(
            "normal ({:.6}, {:.6}, {:.6}) needs XY ({x:.6}, {y:.6})",
            n_m0.x(),
            n_m0.y(),
            n_m0.z()
        ))
    })
}

pub fn xy_from_objective(o: &UnitVector3, spec: &MirrorSpec) -> Result<XYPosition> {
    let n1 = normal_from_objective(o)?;
    xy_from_normal(&undeform_normal(&n1, spec), spec)
}

pub fn normal_from_xy(xy: &XYPosition, spec: &MirrorSpec) -> UnitVector3 {
    let s = spec.half_throw_sin();
    let (x, y) = if spec.swap_axes {
        (xy.y, xy.x)
    } else {
        (xy.x, xy.y)
    };
    let (nx, ny) = (x * s, y * s);
    let nz = (1.0 - nx * nx - ny * ny).max(0.0).sqrt();
    deform_normal(&UnitVector3([nx, ny, nz]), spec)
}

/// Viewing direction reached by commanding the mirror to `xy`.
pub fn objective_from_xy(xy: &XYPosition, spec: &MirrorSpec) -> UnitVector3 {
    reflect(&UnitVector3::CAMERA_INCIDENT, &normal_from_xy(xy, spec))
}

/// Scene tangent-plane coordinates `(u, v)` of a forward-looking direction.
pub fn tangent_coords(o: &UnitVector3) -> Option<(f64, f64)> {
    (o.x() > 0.0).then(|| (o.y() / o.x(), -o.z() / o.x()))
}

pub fn direction_from_tangent(u: f64, v: f64) -> UnitVector3 {
    let n = (1.0 + u * u + v * v).sqrt();
    UnitVector3([1.0 / n, u / n, -v / n])
}

/// Per-sample counter-rotation `-atan(dY/dX)` in degrees along a sweep.
pub fn counter_rotation_angles(path: &[XYPosition]) -> Result<Vec<f64>> {
    let pts: Vec<(f64, f64)> = path.iter().map(|p| (p.x, p.y)).collect();
    counter_rotation_angles_xy(&pts)
}

/// Same as [`counter_rotation_angles`] for any planar `(x, y)` curve.
///
/// Slopes come from the derivative of the quadratic through each point and
/// its two neighbours: the central difference in the interior and the
/// second-order one-sided formula at the two ends.
pub fn counter_rotation_angles_xy(path: &[(f64, f64)]) -> Result<Vec<f64>> {
    if path.len() < 2 {
        return Err(Error::DegeneratePath(format!(
            "need at least 2 samples, got {}",
            path.len()
        )));
    }
    let dx: Vec<f64> = path.windows(2).map(|w| w[1].0 - w[0].0).collect();
    let increasing = dx[0] > 0.0;
    if dx.iter().any(|&d| d == 0.0 || !d.is_finite() || (d > 0.0) != increasing) {
        return Err(Error::DegeneratePath(
            "X must be strictly monotone along a sweep".into(),
        ));
    }
    let n = path.len();
    let slope = |k: usize| -> f64 {
        if n == 2 {
            return (path[1].1 - path[0].1) / (path[1].0 - path[0].0);
        }
        // three-point Lagrange derivative evaluated at x_k
        let (i0, i1, i2) = match k {
            0 => (0, 1, 2),
            k if k == n - 1 => (n - 3, n - 2, n - 1),
            k => (k - 1, k, k + 1),
        };
        let (x0, y0) = path[i0];
        let (x1, y1) = path[i1];
        let (x2, y2) = path[i2];
        let x = path[k].0;
        // offsets from the middle sample keep constant-Y paths exactly flat
        (y0 - y1) * ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2))
            + (y2 - y1) * ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1))
    };
    Ok((0..n).map(|k| -slope(k).atan().to_degrees() + 0.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn spec() -> MirrorSpec {
        MirrorSpec::default()
    }

    fn uv(x: f64, y: f64, z: f64) -> UnitVector3 {
        UnitVector3::normalize(x, y, z).unwrap()
    }

    #[test]
    fn tangent_law_examples() {
        assert_eq!(xy_from_angle(0.0, &spec()).unwrap(), 0.0);
        assert_abs_diff_eq!(xy_from_angle(50.0, &spec()).unwrap(), 1.0, epsilon = 1e-15);
        let x = xy_from_angle(25.0, &spec()).unwrap();
        assert_abs_diff_eq!(x, 0.391_279, epsilon = 1e-6);
        assert_abs_diff_eq!(x, 25f64.to_radians().tan() / 50f64.to_radians().tan(), epsilon = 1e-15);
        assert!(xy_from_angle(50.1, &spec()).is_err());
        assert!(xy_from_angle(-60.0, &spec()).is_err());
    }

    #[test]
    fn inverse_tangent_law_examples() {
        assert_eq!(angle_from_xy(0.0, &spec()).unwrap(), 0.0);
        assert_abs_diff_eq!(angle_from_xy(1.0, &spec()).unwrap(), 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_from_xy(0.391279, &spec()).unwrap(), 25.0, epsilon = 1e-4);
        assert!(angle_from_xy(1.01, &spec()).is_err());
        for i in -100..=100 {
            let x = i as f64 / 100.0;
            let back = xy_from_angle(angle_from_xy(x, &spec()).unwrap(), &spec()).unwrap();
            assert_abs_diff_eq!(back, x, epsilon = 1e-12);
        }
    }

    #[test]
    fn reflection_matrix_examples() {
        let m = reflection_matrix(&uv(0.0, 0.0, 1.0)).0;
        assert_eq!(m, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]);
        let m = reflection_matrix(&uv(1.0, 0.0, 0.0)).0;
        assert_eq!(m, [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let m = reflection_matrix(&UnitVector3::new(R2, 0.0, R2).unwrap()).0;
        let want = [[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m[i][j], want[i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn non_unit_rejected() {
        assert!(matches!(UnitVector3::new(1.0, 1.0, 0.0), Err(Error::NonUnit(_))));
        assert!(UnitVector3::normalize(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn reflect_examples() {
        let r = reflect(&UnitVector3::CAMERA_INCIDENT, &uv(0.0, 0.0, 1.0));
        assert_eq!(r.as_array(), [0.0, 0.0, 1.0]);
        let r = reflect(&UnitVector3::CAMERA_INCIDENT, &uv(R2, 0.0, R2));
        assert_abs_diff_eq!(r.x(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.y(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.z(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normal_from_objective_examples() {
        let n = normal_from_objective(&uv(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(n.as_array(), [0.0, 0.0, 1.0]);
        let n = normal_from_objective(&uv(1.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(n.x(), R2, epsilon = 1e-15);
        assert_abs_diff_eq!(n.z(), R2, epsilon = 1e-15);
        assert!(matches!(
            normal_from_objective(&uv(0.0, 0.0, -1.0)),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn undeform_examples() {
        let n = undeform_normal(&uv(R2, 0.0, R2), &spec());
        assert_abs_diff_eq!(n.x(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.z(), 1.0, epsilon = 1e-15);
        assert_eq!(undeform_normal(&uv(0.0, 1.0, 0.0), &spec()).as_array(), [0.0, 1.0, 0.0]);
        let n = undeform_normal(&uv(0.0, 0.0, 1.0), &spec());
        assert_abs_diff_eq!(n.x(), -R2, epsilon = 1e-15);
        assert_abs_diff_eq!(n.z(), R2, epsilon = 1e-15);
        let back = deform_normal(&n, &spec());
        assert_abs_diff_eq!(back.z(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn xy_from_normal_examples() {
        let xy = xy_from_normal(&uv(0.0, 0.0, 1.0), &spec()).unwrap();
        assert_eq!((xy.x(), xy.y()), (0.0, 0.0));
        let t = 25f64.to_radians();
        let xy = xy_from_normal(&uv(t.sin(), 0.0, t.cos()), &spec()).unwrap();
        assert_eq!((xy.x(), xy.y()), (1.0, 0.0));
        let h = 12.5f64.to_radians();
        let xy = xy_from_normal(&uv(h.sin(), 0.0, h.cos()), &spec()).unwrap();
        assert_abs_diff_eq!(xy.x(), 0.512_140, epsilon = 1e-6);
        assert_abs_diff_eq!(xy.x(), h.sin() / t.sin(), epsilon = 1e-15);
        assert!(matches!(
            xy_from_normal(&uv(0.5, 0.0, 0.8), &spec()),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn boresight_maps_to_rest() {
        let xy = xy_from_objective(&UnitVector3::BORESIGHT, &spec()).unwrap();
        assert_abs_diff_eq!(xy.x(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xy.y(), 0.0, epsilon = 1e-15);
        let o = objective_from_xy(&XYPosition::REST, &spec());
        assert_abs_diff_eq!(o.angle_to(&UnitVector3::BORESIGHT), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn looking_backwards_is_unreachable() {
        assert!(matches!(
            xy_from_objective(&uv(0.0, 0.0, 1.0), &spec()),
            Err(Error::Unreachable(_))
        ));
        assert!(matches!(
            xy_from_objective(&uv(-1.0, 0.0, 0.0), &spec()),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn swap_axes_exchanges_channels() {
        let swapped = MirrorSpec {
            swap_axes: true,
            ..spec()
        };
        let o = direction_from_tangent(0.1, 0.2);
        let a = xy_from_objective(&o, &spec()).unwrap();
        let b = xy_from_objective(&o, &swapped).unwrap();
        assert_eq!((a.x(), a.y()), (b.y(), b.x()));
        let back = objective_from_xy(&b, &swapped);
        assert!(back.angle_to(&o) < 1e-12);
    }

    #[test]
    fn counter_rotation_examples() {
        let flat: Vec<_> = (0..5)
            .map(|i| XYPosition::new(i as f64 * 0.1, 0.3).unwrap())
            .collect();
        assert!(counter_rotation_angles(&flat).unwrap().iter().all(|&a| a == 0.0));

        let diag: Vec<_> = (0..5)
            .map(|i| XYPosition::new(i as f64 * 0.1, i as f64 * 0.1).unwrap())
            .collect();
        for a in counter_rotation_angles(&diag).unwrap() {
            assert_abs_diff_eq!(a, -45.0, epsilon = 1e-12);
        }

        let repeated = [XYPosition::REST, XYPosition::REST];
        assert!(matches!(
            counter_rotation_angles(&repeated),
            Err(Error::DegeneratePath(_))
        ));
        assert!(counter_rotation_angles(&[XYPosition::REST]).is_err());
    }

    #[test]
    fn decreasing_sweeps_are_allowed() {
        let path: Vec<_> = (0..4)
            .map(|i| XYPosition::new(0.5 - i as f64 * 0.1, 0.1 - i as f64 * 0.05).unwrap())
            .collect();
        for a in counter_rotation_angles(&path).unwrap() {
            assert_abs_diff_eq!(a, -(0.5f64).atan().to_degrees(), epsilon = 1e-12);
        }
    }
}
