//! Rotation representations: continuous 6D, rotation matrices and unit
//! quaternions, plus the quaternion geodesic distance.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Var;

pub type Rotation = Matrix3<f64>;

const DEGENERATE_EPS: f64 = 1e-8;
const ORTHONORMAL_TOL: f64 = 1e-6;

/// First two columns of a rotation matrix, stacked: `[c0x, c0y, c0z, c1x, c1y, c1z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixD(pub [f64; 6]);

impl SixD {
    pub const IDENTITY: SixD = SixD([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn values(&self) -> &[f64; 6] {
        &self.0
    }
}

/// Gram-Schmidt map from 6D to a proper rotation.
pub fn sixd_to_matrix(r: &SixD) -> Result<Rotation> {
    let v = &r.0;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateRotation(format!("non-finite 6D value {v:?}")));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 <= DEGENERATE_EPS {
        return Err(Error::DegenerateRotation("first column is zero".into()));
    }
    let b1 = a1 / n1;
    let resid = a2 - b1 * b1.dot(&a2);
    let n2 = resid.norm();
    if n2 <= DEGENERATE_EPS * a2.norm().max(1.0) {
        return Err(Error::DegenerateRotation("columns are parallel or second column is zero".into()));
    }
    let b2 = resid / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

fn check_orthonormal(r: &Rotation) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= ORTHONORMAL_TOL) || r.determinant() <= 0.0 {
        return Err(Error::Validation(format!("matrix is not a rotation (orthonormality error {err:e})")));
    }
    Ok(())
}

pub fn matrix_to_sixd(r: &Rotation) -> Result<SixD> {
    check_orthonormal(r)?;
    Ok(SixD([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]))
}

/// Unit quaternion with canonical sign `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    fn canonical(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_matrix(&self) -> Rotation {
        let Self { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn negated(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }
}

/// Shepperd's method: branch on the largest diagonal combination.
pub fn matrix_to_quaternion(r: &Rotation) -> Result<UnitQuaternion> {
    check_orthonormal(r)?;
    let m = |i, j| r[(i, j)];
    let tr = m(0, 0) + m(1, 1) + m(2, 2);
    let q = if tr > m(0, 0).max(m(1, 1)).max(m(2, 2)) {
        let s = (1.0 + tr).sqrt() * 2.0;
        (0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s)
    } else if m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2) {
        let s = (1.0 + m(0, 0) - m(1, 1) - m(2, 2)).sqrt() * 2.0;
        ((m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s)
    } else if m(1, 1) >= m(2, 2) {
        let s = (1.0 + m(1, 1) - m(0, 0) - m(2, 2)).sqrt() * 2.0;
        ((m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s)
    } else {
        let s = (1.0 + m(2, 2) - m(0, 0) - m(1, 1)).sqrt() * 2.0;
        ((m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s)
    };
    Ok(UnitQuaternion::canonical(q.0, q.1, q.2, q.3))
}

/// Rotation angle between two orientations, in `[0, pi]`. Computed from
/// the relative rotation `q1^-1 q2` with atan2, which stays accurate for
/// nearly equal inputs where `acos` of the dot product would not.
pub fn quaternion_geodesic(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let u1 = Vector3::new(q1.x, q1.y, q1.z);
    let u2 = Vector3::new(q2.x, q2.y, q2.z);
    let w = q1.dot(q2);
    let v = q1.w * u2 - q2.w * u1 - u1.cross(&u2);
    2.0 * v.norm().atan2(w.abs())
}

/// Rodrigues formula for an axis-angle vector (direction = axis, norm = angle).
pub fn axis_angle_to_matrix(v: &Vector3<f64>) -> Rotation {
    let angle = v.norm();
    if angle < 1e-12 {
        return Matrix3::identity();
    }
    let k = v / angle;
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Column-major `[n, 9]` rotation matrices from `[n, 6]` 6D values, on the tape.
pub fn sixd_to_matrix_var<'t>(x: Var<'t>) -> Var<'t> {
    let a1 = x.slice_cols(0, 3);
    let a2 = x.slice_cols(3, 6);
    let b1 = a1.div_col(a1.square().sum_cols().sqrt());
    let proj = b1.mul_col(b1.mul(a2).sum_cols());
    let resid = a2.sub(proj);
    let b2 = resid.div_col(resid.square().sum_cols().sqrt());
    let b3 = b1.cross(b2);
    Var::concat_cols(&[b1, b2, b3])
}

/// Column-major 9-vector of a matrix.
pub fn matrix_to_col9(r: &Rotation) -> [f64; 9] {
    let mut out = [0.0; 9];
    out.copy_from_slice(r.as_slice());
    out
}
