//! Metrics against brute-force and closed-form references.

use nalgebra::{Matrix3, Vector3};
use posediff::metrics::{apd, d_nn, features_of, fid, fid_from_features, pa_mpjpe};
use posediff::rotations::{matrix_to_quaternion, quaternion_geodesic, Rotation};
use posediff::skeleton::{forward_kinematics, KinematicTree, Pose, Shape, JOINT_COUNT};
use posediff::RngStream;

use super::rotation::random_quaternion;

pub const FID_SELF_TOL: f64 = 1e-8;
pub const FID_CLOSED_FORM_REL: f64 = 0.05;
pub const PA_INVARIANCE_TOL: f64 = 1e-6;

fn random_pose(s: &mut RngStream, spread: f64) -> Pose {
    let mats: Vec<Rotation> = (0..JOINT_COUNT)
        .map(|_| {
            let q = random_quaternion(s);
            // Shrink toward the identity so poses look like bodies.
            let v = Vector3::new(q.x, q.y, q.z);
            let angle = 2.0 * v.norm().atan2(q.w) * spread;
            let axis = if v.norm() > 0.0 { v.normalize() } else { Vector3::x() };
            posediff::rotations::axis_angle_to_matrix(&(axis * angle))
        })
        .collect();
    Pose::from_matrices(&mats).expect("rotations are valid")
}

fn random_poses(seed: u64, n: usize, spread: f64) -> Vec<Pose> {
    let mut s = RngStream::new(seed);
    (0..n).map(|_| random_pose(&mut s, spread)).collect()
}

/// APD against an O(n²) double loop: the same pair order must give the
/// identical value, and summing over ordered pairs must agree to rounding.
pub fn apd_matches_brute_force(seed: u64) -> Result<(), String> {
    let tree = KinematicTree::smpl();
    let poses = random_poses(seed, 40, 0.3);
    let got = apd(&poses, &tree).map_err(|e| e.to_string())?;
    let f = features_of(&poses, &tree).map_err(|e| e.to_string())?;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = f.len();
    let mut upper = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            upper += dist(&f[i], &f[j]);
        }
    }
    let upper = 100.0 * upper / (n * (n - 1) / 2) as f64;
    if got != upper {
        return Err(format!("APD {got} differs from the brute-force {upper}"));
    }
    let mut ordered = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                ordered += dist(&f[i], &f[j]);
            }
        }
    }
    let ordered = 100.0 * ordered / (n * (n - 1)) as f64;
    if (got - ordered).abs() > 1e-12 * got {
        return Err(format!("APD {got} differs from the ordered-pair sum {ordered}"));
    }
    Ok(())
}

/// d_NN against exhaustive search over every reference pose, plus a
/// cross-check of the per-joint distance against the relative rotation angle.
pub fn dnn_matches_exhaustive(seed: u64) -> Result<(), String> {
    let samples = random_poses(seed, 25, 0.4);
    let reference = random_poses(seed + 1, 60, 0.4);
    let got = d_nn(&samples, &reference).map_err(|e| e.to_string())?;
    let quats =
        |p: &Pose| -> Vec<_> { p.matrices().unwrap().iter().map(|m| matrix_to_quaternion(m).unwrap()).collect() };
    let mut total = 0.0;
    let mut via_trace = 0.0;
    for s in &samples {
        let qs = quats(s);
        let ms = s.matrices().unwrap();
        let mut best = f64::INFINITY;
        let mut best_trace = f64::INFINITY;
        for r in &reference {
            let qr = quats(r);
            let mr = r.matrices().unwrap();
            let mut d = 0.0;
            let mut d_trace = 0.0;
            for j in 1..JOINT_COUNT {
                d += quaternion_geodesic(&qs[j], &qr[j]);
                let rel: Matrix3<f64> = ms[j].transpose() * mr[j];
                d_trace += ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            }
            best = best.min(d);
            best_trace = best_trace.min(d_trace);
        }
        total += best;
        via_trace += best_trace;
    }
    let want = total / samples.len() as f64 / (JOINT_COUNT - 1) as f64;
    if got != want {
        return Err(format!("d_NN {got} differs from exhaustive search {want}"));
    }
    let trace = via_trace / samples.len() as f64 / (JOINT_COUNT - 1) as f64;
    if (got - trace).abs() > 1e-6 {
        return Err(format!("d_NN {got} disagrees with the rotation-angle reference {trace}"));
    }
    Ok(())
}

/// FID of a pose set with itself.
pub fn fid_self(seed: u64) -> Result<f64, String> {
    let tree = KinematicTree::smpl();
    let poses = random_poses(seed, 200, 0.3);
    fid(&poses, &poses, &tree).map_err(|e| e.to_string())
}

/// FID on injected Gaussian features whose covariances share eigenvectors,
/// so the Fréchet distance is `|μa - μb|² + Σ (√λa - √λb)²`. Returns the
/// measured and closed-form values.
pub fn fid_closed_form(seed: u64) -> Result<(f64, f64), String> {
    const N: usize = 20_000;
    let mut s = RngStream::new(seed);
    // Block-diagonal orthonormal basis from two random 3D rotations.
    let (q1, q2) = (random_quaternion(&mut s).to_matrix(), random_quaternion(&mut s).to_matrix());
    let basis = |i: usize, k: usize| -> f64 {
        match (i < 3, k < 3) {
            (true, true) => q1[(i, k)],
            (false, false) => q2[(i - 3, k - 3)],
            _ => 0.0,
        }
    };
    let lam_a = [1.0, 0.5, 2.0, 0.25, 1.5, 0.8];
    let lam_b = [0.3, 1.2, 0.6, 1.0, 0.4, 2.5];
    let mu_a = [0.0, 0.3, -0.2, 0.1, 0.0, 0.5];
    let mu_b = [0.4, -0.1, 0.2, 0.0, -0.3, 0.1];
    let draw = |s: &mut RngStream, mu: &[f64; 6], lam: &[f64; 6]| -> Vec<Vec<f64>> {
        (0..N)
            .map(|_| {
                let z: Vec<f64> = lam.iter().map(|l| l.sqrt() * s.normal()).collect();
                (0..6).map(|i| mu[i] + (0..6).map(|k| basis(i, k) * z[k]).sum::<f64>()).collect()
            })
            .collect()
    };
    let a = draw(&mut s, &mu_a, &lam_a);
    let b = draw(&mut s, &mu_b, &lam_b);
    let measured = fid_from_features(&a, &b).map_err(|e| e.to_string())?;
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y).powi(2)).sum();
    let cov_term: f64 = lam_a.iter().zip(&lam_b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
    Ok((measured, mean_term + cov_term))
}

/// Largest change of PA-MPJPE when the prediction is moved by random
/// similarity transforms, and the PA-MPJPE of a transformed copy of the
/// ground truth, both in millimeters.
pub fn pa_mpjpe_invariance(seed: u64) -> Result<(f64, f64), String> {
    let tree = KinematicTree::smpl();
    let mut s = RngStream::new(seed);
    let poses = random_poses(seed, 40, 0.3);
    let mut worst_shift = 0.0f64;
    let mut worst_self = 0.0f64;
    for pair in poses.chunks(2) {
        let pred = forward_kinematics(&pair[0], &Shape::default(), &tree).map_err(|e| e.to_string())?;
        let gt = forward_kinematics(&pair[1], &Shape::default(), &tree).map_err(|e| e.to_string())?;
        let base = pa_mpjpe(&pred, &gt).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let r = random_quaternion(&mut s).to_matrix();
            let scale = 0.2 + 4.0 * s.uniform();
            let t = Vector3::new(s.normal(), s.normal(), s.normal()) * 3.0;
            let moved: Vec<Vector3<f64>> = pred.iter().map(|p| scale * r * p + t).collect();
            let v = pa_mpjpe(&moved, &gt).map_err(|e| e.to_string())?;
            worst_shift = worst_shift.max((v - base).abs());
            let gt_moved: Vec<Vector3<f64>> = gt.iter().map(|p| scale * r * p + t).collect();
            worst_self = worst_self.max(pa_mpjpe(&gt_moved, &gt).map_err(|e| e.to_string())?);
        }
    }
    Ok((worst_shift, worst_self))
}
