//! Rotation matrices, gaze composition, binocular fusion and cone tests.
//!
//! Angles cross the public API in degrees and are converted to radians only
//! inside the matrix builders. The analysis frame is right-handed and z-up;
//! the headset looks along +x when all angles are zero, +y points to the
//! viewer's left and roll turns about the forward axis.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Default viewing-cone half angle in degrees.
pub const DEFAULT_HALF_ANGLE_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Returns `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Vec3, f: f64) -> Vec3 {
        Vec3::new(
            self.x + f * (o.x - self.x),
            self.y + f * (o.y - self.y),
            self.z + f * (o.z - self.z),
        )
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    /// Lexicographic total order on coordinates; used for deterministic tie-breaks.
    pub fn lex_cmp(&self, o: &Vec3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&o.x)
            .then(self.y.total_cmp(&o.y))
            .then(self.z.total_cmp(&o.z))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Yaw/pitch/roll in degrees. Yaw turns about the vertical (z) axis, pitch
/// about the lateral (y) axis and roll about the forward (x) axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn is_finite(self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite() && self.roll.is_finite()
    }
}

/// Composition order of the three elemental rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerOrder {
    /// `R = R_roll · R_pitch · R_yaw` (the factor order of the published formula).
    #[default]
    RollPitchYaw,
    /// `R = R_yaw · R_pitch · R_roll` (intrinsic yaw-pitch-roll, roll about the view axis).
    YawPitchRoll,
}

/// Proper 3×3 rotation, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn about_x(rad: f64) -> Self {
        let (s, c) = rad.sin_cos();
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn about_y(rad: f64) -> Self {
        let (s, c) = rad.sin_cos();
        RotationMatrix([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn about_z(rad: f64) -> Self {
        let (s, c) = rad.sin_cos();
        RotationMatrix([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, o: &RotationMatrix) -> RotationMatrix {
        let a = &self.0;
        let b = &o.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationMatrix(out)
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        RotationMatrix(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max-abs entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose().mul(self);
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.0[i][j] - target).abs());
            }
        }
        worst
    }

    /// Geodesic angle (radians) of the relative rotation `selfᵀ · other`.
    pub fn geodesic_angle(&self, other: &RotationMatrix) -> f64 {
        let q = self.transpose().mul(other).0;
        let sx = q[2][1] - q[1][2];
        let sy = q[0][2] - q[2][0];
        let sz = q[1][0] - q[0][1];
        let sin2 = (sx * sx + sy * sy + sz * sz).sqrt();
        let cos2 = q[0][0] + q[1][1] + q[2][2] - 1.0;
        sin2.atan2(cos2)
    }
}

/// Builds the rotation for `a` with the default [`EulerOrder`].
pub fn euler_to_matrix(a: EulerAngles) -> RotationMatrix {
    euler_to_matrix_with(a, EulerOrder::default())
}

pub fn euler_to_matrix_with(a: EulerAngles, order: EulerOrder) -> RotationMatrix {
    let yaw = RotationMatrix::about_z(a.yaw.to_radians());
    let pitch = RotationMatrix::about_y(a.pitch.to_radians());
    let roll = RotationMatrix::about_x(a.roll.to_radians());
    match order {
        EulerOrder::RollPitchYaw => roll.mul(&pitch).mul(&yaw),
        EulerOrder::YawPitchRoll => yaw.mul(&pitch).mul(&roll),
    }
}

/// Global gaze orientation: headset orientation times eye-in-head orientation.
pub fn compose_gaze(headset: &RotationMatrix, eye: &RotationMatrix) -> RotationMatrix {
    headset.mul(eye)
}

/// Canonical forward axis of the analysis frame.
pub const FORWARD: Vec3 = Vec3::X;
/// Canonical right-hand axis (the viewer's right) of the analysis frame.
pub const RIGHT: Vec3 = Vec3::new(0.0, -1.0, 0.0);
pub const UP: Vec3 = Vec3::Z;

pub fn forward_vector(r: &RotationMatrix) -> Vec3 {
    forward_vector_along(r, FORWARD)
}

/// Forward vector for a caller-chosen headset forward axis.
pub fn forward_vector_along(r: &RotationMatrix, axis: Vec3) -> Vec3 {
    r.apply(axis)
}

/// Recovers yaw and pitch that point [`FORWARD`] along `dir`, keeping `roll`.
pub fn orientation_from_forward(dir: Vec3, roll: f64, order: EulerOrder) -> EulerAngles {
    let f = dir.normalized().unwrap_or(FORWARD);
    match order {
        EulerOrder::YawPitchRoll => {
            let yaw = f.y.atan2(f.x);
            let pitch = (-f.z).atan2(f.x.hypot(f.y));
            EulerAngles::new(yaw.to_degrees(), pitch.to_degrees(), roll)
        }
        EulerOrder::RollPitchYaw => {
            let g = RotationMatrix::about_x(-roll.to_radians()).apply(f);
            let yaw = g.y.atan2(g.x.hypot(g.z));
            let pitch = (-g.z).atan2(g.x);
            EulerAngles::new(yaw.to_degrees(), pitch.to_degrees(), roll)
        }
    }
}

/// Confidence-weighted binocular direction.
pub fn combine_eyes(left: (Vec3, f64), right: (Vec3, f64)) -> Result<Vec3> {
    let (dl, cl) = left;
    let (dr, cr) = right;
    let cl = if cl > 0.0 { cl } else { 0.0 };
    let cr = if cr > 0.0 { cr } else { 0.0 };
    match (cl > 0.0, cr > 0.0) {
        (false, false) => Err(Error::NoValidEye),
        (true, false) => Ok(dl),
        (false, true) => Ok(dr),
        (true, true) => (dl * cl + dr * cr).normalized().ok_or(Error::NoValidEye),
    }
}

/// World-frame viewing ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalGaze {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl GlobalGaze {
    /// Normalizes `direction`; returns `None` for a zero direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Option<Self> {
        direction.normalized().map(|direction| Self { origin, direction })
    }
}

/// Angle in radians between two non-zero vectors, accurate near 0 and π.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Inclusive cone test: `angle(point − origin, direction) ≤ half_angle`.
pub fn in_frustum(gaze: &GlobalGaze, point: Vec3, half_angle_deg: f64) -> Result<bool> {
    let v = point - gaze.origin;
    if v == Vec3::ZERO {
        return Err(Error::DegeneratePoint);
    }
    let angle = angle_between(v, gaze.direction);
    Ok(angle <= half_angle_deg.to_radians() + ANGLE_EPS)
}

/// Angular slack on cone boundaries, in radians.
pub const ANGLE_EPS: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assert_mat_eq(a: &RotationMatrix, b: &RotationMatrix, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(a.0[i][j], b.0[i][j], epsilon = tol);
            }
        }
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(
            euler_to_matrix(EulerAngles::new(0.0, 0.0, 0.0)),
            RotationMatrix::IDENTITY
        );
    }

    #[test]
    fn yaw_90_turns_forward_to_lateral() {
        let r = euler_to_matrix(EulerAngles::new(90.0, 0.0, 0.0));
        // direct evaluation of Rz(90°): [[0,-1,0],[1,0,0],[0,0,1]]
        let expected = RotationMatrix([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_mat_eq(&r, &expected, 1e-15);
        let f = forward_vector(&r);
        assert_abs_diff_eq!(f.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.z, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.dot(RIGHT), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn yaw_180_negates_forward() {
        let f = forward_vector(&euler_to_matrix(EulerAngles::new(180.0, 0.0, 0.0)));
        assert_abs_diff_eq!(f.x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_forward_is_canonical() {
        assert_eq!(forward_vector(&RotationMatrix::IDENTITY), FORWARD);
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let h = euler_to_matrix(EulerAngles::new(12.3, -45.6, 78.9));
        assert_eq!(compose_gaze(&h, &RotationMatrix::IDENTITY), h);
        assert_eq!(compose_gaze(&RotationMatrix::IDENTITY, &h), h);
    }

    #[test]
    fn yaw_composition_adds_angles() {
        let r = compose_gaze(
            &euler_to_matrix(EulerAngles::new(30.0, 0.0, 0.0)),
            &euler_to_matrix(EulerAngles::new(40.0, 0.0, 0.0)),
        );
        let f = forward_vector(&r);
        let yaw = f.y.atan2(f.x).to_degrees();
        assert_abs_diff_eq!(yaw, 70.0, epsilon = 1e-12);
    }

    #[test]
    fn combine_identical_and_degenerate() {
        let d = Vec3::new(0.6, 0.8, 0.0);
        let out = combine_eyes((d, 0.3), (d, 0.9)).unwrap();
        assert_abs_diff_eq!(out.x, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(out.y, 0.8, epsilon = 1e-15);
        let l = Vec3::X;
        assert_eq!(combine_eyes((l, 1.0), (Vec3::Y, 0.0)).unwrap(), l);
        assert!(matches!(
            combine_eyes((l, 0.0), (l, 0.0)),
            Err(Error::NoValidEye)
        ));
    }

    #[test]
    fn combine_bisects_four_degrees() {
        let a = 2f64.to_radians();
        let l = Vec3::new(a.cos(), a.sin(), 0.0);
        let r = Vec3::new(a.cos(), -a.sin(), 0.0);
        let out = combine_eyes((l, 0.7), (r, 0.7)).unwrap();
        // normalize(l + r) is the x axis
        assert_abs_diff_eq!(out.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.y, 0.0, epsilon = 1e-15);
    }

    fn ray_at(deg: f64) -> Vec3 {
        let a = deg.to_radians();
        Vec3::new(a.cos(), a.sin(), 0.0)
    }

    #[test]
    fn frustum_boundary_inclusive() {
        let g = GlobalGaze::new(Vec3::ZERO, Vec3::X).unwrap();
        assert!(in_frustum(&g, Vec3::new(5.0, 0.0, 0.0), 30.0).unwrap());
        assert!(in_frustum(&g, ray_at(30.0) * 3.0, 30.0).unwrap());
        assert!(!in_frustum(&g, ray_at(30.5) * 3.0, 30.0).unwrap());
        assert!(!in_frustum(&g, ray_at(30.0 + 1e-6), 30.0).unwrap());
        assert!(matches!(
            in_frustum(&g, Vec3::ZERO, 30.0),
            Err(Error::DegeneratePoint)
        ));
    }

    #[test]
    fn zero_half_angle_only_on_ray() {
        let g = GlobalGaze::new(Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 2.0, 2.0)).unwrap();
        assert!(in_frustum(&g, g.origin + g.direction * 4.0, 0.0).unwrap());
        assert!(!in_frustum(&g, g.origin + g.direction * 4.0 + Vec3::Z * 1e-3, 0.0).unwrap());
    }

    #[test]
    fn orientation_round_trip_through_forward() {
        for order in [EulerOrder::RollPitchYaw, EulerOrder::YawPitchRoll] {
            let a = EulerAngles::new(35.0, -20.0, 15.0);
            let f = forward_vector(&euler_to_matrix_with(a, order));
            let b = orientation_from_forward(f, a.roll, order);
            let g = forward_vector(&euler_to_matrix_with(b, order));
            assert!(angle_between(f, g) < 1e-12);
        }
    }

    fn quat_oracle(a: EulerAngles) -> nalgebra::UnitQuaternion<f64> {
        use nalgebra::{UnitQuaternion, Vector3};
        let qy = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), a.yaw.to_radians());
        let qp = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), a.pitch.to_radians());
        let qr = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a.roll.to_radians());
        qr * qp * qy
    }

    fn angle() -> impl Strategy<Value = f64> {
        -720.0f64..720.0
    }

    proptest! {
        #[test]
        fn matrices_are_proper_rotations(y in angle(), p in angle(), r in angle()) {
            for order in [EulerOrder::RollPitchYaw, EulerOrder::YawPitchRoll] {
                let m = euler_to_matrix_with(EulerAngles::new(y, p, r), order);
                prop_assert!(m.orthonormality_error() < 1e-9);
                prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn composed_forward_matches_quaternion_oracle(
            hy in angle(), hp in angle(), hr in angle(),
            ey in -40.0f64..40.0, ep in -40.0f64..40.0, er in -10.0f64..10.0,
        ) {
            let h = EulerAngles::new(hy, hp, hr);
            let e = EulerAngles::new(ey, ep, er);
            let g = compose_gaze(&euler_to_matrix(h), &euler_to_matrix(e));
            let f = forward_vector(&g);
            let q = quat_oracle(h) * quat_oracle(e);
            let o = q * nalgebra::Vector3::x();
            prop_assert!((f.x - o.x).abs() < 1e-12);
            prop_assert!((f.y - o.y).abs() < 1e-12);
            prop_assert!((f.z - o.z).abs() < 1e-12);
        }

        #[test]
        fn compose_is_associative(a in angle(), b in angle(), c in angle()) {
            let ra = euler_to_matrix(EulerAngles::new(a, b, c));
            let rb = euler_to_matrix(EulerAngles::new(b, c, a));
            let rc = euler_to_matrix(EulerAngles::new(c, a, b));
            let lhs = compose_gaze(&compose_gaze(&ra, &rb), &rc);
            let rhs = compose_gaze(&ra, &compose_gaze(&rb, &rc));
            for i in 0..3 { for j in 0..3 {
                prop_assert!((lhs.0[i][j] - rhs.0[i][j]).abs() < 1e-12);
            }}
        }

        #[test]
        fn combined_direction_is_unit_and_in_span(
            a in angle(), b in -80.0f64..80.0, c in angle(), d in -80.0f64..80.0,
            cl in 0.01f64..1.0, cr in 0.01f64..1.0,
        ) {
            let l = forward_vector(&euler_to_matrix(EulerAngles::new(a, b, 0.0)));
            let r = forward_vector(&euler_to_matrix(EulerAngles::new(c, d, 0.0)));
            prop_assume!(l.dot(r) > -0.99);
            let out = combine_eyes((l, cl), (r, cr)).unwrap();
            prop_assert!((out.norm() - 1.0).abs() < 1e-12);
            let n = l.cross(r);
            if n.norm() > 1e-6 {
                prop_assert!(out.dot(n.normalized().unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn cone_test_ignores_distance(
            y in angle(), p in -80.0f64..80.0, off in 0.0f64..60.0,
            s1 in 0.01f64..100.0, s2 in 0.01f64..100.0,
        ) {
            let g = GlobalGaze::new(Vec3::new(0.3, -0.2, 1.6),
                forward_vector(&euler_to_matrix(EulerAngles::new(y, p, 0.0)))).unwrap();
            let dir = forward_vector(&euler_to_matrix(EulerAngles::new(y + off, p, 0.0)));
            let a = in_frustum(&g, g.origin + dir * s1, 30.0).unwrap();
            let b = in_frustum(&g, g.origin + dir * s2, 30.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
