//! Round trips between rotation representations and the metric axioms of
//! the quaternion geodesic.

use std::f64::consts::PI;

use nalgebra::Vector3;
use posediff::rotations::{
    axis_angle_to_matrix, matrix_to_quaternion, matrix_to_sixd, quaternion_geodesic, sixd_to_matrix, Rotation,
    UnitQuaternion,
};
use posediff::RngStream;

pub const ROUND_TRIPS: usize = 10_000;
pub const TRIPLES: usize = 1_000;
pub const ROUND_TRIP_TOL: f64 = 1e-9;
const METRIC_TOL: f64 = 1e-12;

/// Uniform rotation from a normalized 4D Gaussian.
pub fn random_quaternion(s: &mut RngStream) -> UnitQuaternion {
    let v = [s.normal(), s.normal(), s.normal(), s.normal()];
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
    UnitQuaternion { w: sign * v[0] / n, x: sign * v[1] / n, y: sign * v[2] / n, z: sign * v[3] / n }
}

/// Mostly uniform rotations, with every tenth near the identity or near a
/// half turn where conversions are most fragile.
fn test_rotation(s: &mut RngStream, i: usize) -> Rotation {
    match i % 20 {
        0 => {
            let axis = Vector3::new(s.normal(), s.normal(), s.normal()).normalize();
            axis_angle_to_matrix(&(axis * 1e-7 * s.uniform()))
        }
        10 => {
            let axis = Vector3::new(s.normal(), s.normal(), s.normal()).normalize();
            axis_angle_to_matrix(&(axis * (PI - 1e-7 * s.uniform())))
        }
        _ => random_quaternion(s).to_matrix(),
    }
}

fn max_abs(a: &Rotation, b: &Rotation) -> f64 {
    (a - b).abs().max()
}

fn quat_diff(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let same = [a.w - b.w, a.x - b.x, a.y - b.y, a.z - b.z].iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let flip = [a.w + b.w, a.x + b.x, a.y + b.y, a.z + b.z].iter().fold(0.0f64, |m, d| m.max(d.abs()));
    same.min(flip)
}

/// Worst errors of matrix → 6D → matrix, matrix → quaternion → matrix and
/// quaternion → matrix → quaternion over `ROUND_TRIPS` rotations.
pub fn round_trip_errors(seed: u64) -> Result<[f64; 3], String> {
    let mut s = RngStream::new(seed);
    let mut worst = [0.0f64; 3];
    for i in 0..ROUND_TRIPS {
        let r = test_rotation(&mut s, i);
        let back6 = sixd_to_matrix(&matrix_to_sixd(&r).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max(max_abs(&r, &back6));
        let q = matrix_to_quaternion(&r).map_err(|e| e.to_string())?;
        worst[1] = worst[1].max(max_abs(&r, &q.to_matrix()));
        let q2 = matrix_to_quaternion(&q.to_matrix()).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max(quat_diff(&q, &q2));
    }
    Ok(worst)
}

/// Checks identity, symmetry, sign invariance, range, positivity for
/// distinct inputs, left invariance and the triangle inequality.
pub fn metric_axioms(seed: u64) -> Result<(), String> {
    let mut s = RngStream::new(seed);
    for i in 0..TRIPLES {
        let a = random_quaternion(&mut s);
        let b = random_quaternion(&mut s);
        let c = random_quaternion(&mut s);
        let (ab, ba, bc, ac) = (
            quaternion_geodesic(&a, &b),
            quaternion_geodesic(&b, &a),
            quaternion_geodesic(&b, &c),
            quaternion_geodesic(&a, &c),
        );
        let aa = quaternion_geodesic(&a, &a);
        let fail = |what: &str| Err(format!("triple {i}: {what}"));
        if aa.abs() > METRIC_TOL || quaternion_geodesic(&a, &a.negated()).abs() > METRIC_TOL {
            return fail(&format!("d(a, a) = {aa:e}"));
        }
        if (ab - ba).abs() > METRIC_TOL {
            return fail(&format!("asymmetric {ab} vs {ba}"));
        }
        if (quaternion_geodesic(&a.negated(), &b) - ab).abs() > METRIC_TOL {
            return fail("sign of a quaternion changes the distance");
        }
        if !(ab > 0.0 && ab <= PI + METRIC_TOL) {
            return fail(&format!("distance {ab} outside (0, pi]"));
        }
        if ac > ab + bc + METRIC_TOL {
            return fail(&format!("triangle inequality {ac} > {ab} + {bc}"));
        }
        let ca = matrix_to_quaternion(&(c.to_matrix() * a.to_matrix())).map_err(|e| e.to_string())?;
        let cb = matrix_to_quaternion(&(c.to_matrix() * b.to_matrix())).map_err(|e| e.to_string())?;
        if (quaternion_geodesic(&ca, &cb) - ab).abs() > 1e-9 {
            return fail("distance not invariant under a common rotation");
        }
        let rel = a.to_matrix().transpose() * b.to_matrix();
        let angle = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        if (angle - ab).abs() > 1e-6 {
            return fail(&format!("geodesic {ab} disagrees with the relative rotation angle {angle}"));
        }
    }
    Ok(())
}
