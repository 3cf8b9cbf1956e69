//! Generation and fitting metrics: FID over joint-position features, APD,
//! nearest-neighbor quaternion distance, global-frame rotation error,
//! joint errors and Procrustes-aligned MPJPE.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::rotations::{matrix_to_quaternion, quaternion_geodesic, UnitQuaternion};
use crate::skeleton::{forward_kinematics, local_to_global, KinematicTree, Pose, Shape, JOINT_COUNT};

pub const FEATURE_DIM: usize = JOINT_COUNT * 3;
pub const COVARIANCE_REGULARIZER: f64 = 1e-6;

/// Flattened joint positions in meters (zero shape, root at the origin).
pub fn pose_features(pose: &Pose, tree: &KinematicTree) -> Result<Vec<f64>> {
    let joints = forward_kinematics(pose, &Shape::default(), tree)?;
    Ok(joints.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

pub fn features_of(poses: &[Pose], tree: &KinematicTree) -> Result<Vec<Vec<f64>>> {
    poses.iter().map(|p| pose_features(p, tree)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Mean and unbiased covariance plus the ridge regularizer.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n == 0 {
        return Err(Error::Validation("empty feature set".into()));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    if n < d + 1 {
        log::warn!("{n} samples for {d} features: covariance is rank deficient, the regularizer dominates");
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut covariance = centered.transpose() * &centered / denom;
    covariance = (&covariance + covariance.transpose()) * 0.5;
    for i in 0..d {
        covariance[(i, i)] += COVARIANCE_REGULARIZER;
    }
    Ok(GaussianStats { mean, covariance })
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sq) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Shape("feature dimensions differ".into()));
    }
    let s = sym_sqrt(&a.covariance);
    let m = &s * &b.covariance * &s;
    let m = (&m + m.transpose()) * 0.5;
    let cross: f64 = m.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = (&a.mean - &b.mean).norm_squared();
    Ok((diff + a.covariance.trace() + b.covariance.trace() - 2.0 * cross).max(0.0))
}

pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&gaussian_stats(a)?, &gaussian_stats(b)?)
}

pub fn fid(a: &[Pose], b: &[Pose], tree: &KinematicTree) -> Result<f64> {
    fid_from_features(&features_of(a, tree)?, &features_of(b, tree)?)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean pairwise feature distance in centimeters.
pub fn apd_from_features(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Validation("APD needs at least two poses".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += euclid(&features[i], &features[j]);
        }
    }
    Ok(100.0 * total / (n * (n - 1) / 2) as f64)
}

pub fn apd(set: &[Pose], tree: &KinematicTree) -> Result<f64> {
    apd_from_features(&features_of(set, tree)?)
}

fn local_quaternions(pose: &Pose) -> Result<Vec<UnitQuaternion>> {
    pose.matrices()?.iter().map(matrix_to_quaternion).collect()
}

/// Summed geodesic distance over the non-root joints.
fn joint_distance(a: &[UnitQuaternion], b: &[UnitQuaternion]) -> f64 {
    (1..JOINT_COUNT).map(|j| quaternion_geodesic(&a[j], &b[j])).sum()
}

/// Mean over samples of the nearest reference pose's summed geodesic
/// distance over the 23 non-root joints, divided by 23.
pub fn d_nn(samples: &[Pose], reference: &[Pose]) -> Result<f64> {
    if reference.is_empty() || samples.is_empty() {
        return Err(Error::Validation("d_nn needs non-empty sample and reference sets".into()));
    }
    let refs = reference.iter().map(local_quaternions).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for s in samples {
        let q = local_quaternions(s)?;
        total += refs.iter().map(|r| joint_distance(&q, r)).fold(f64::INFINITY, f64::min);
    }
    Ok(total / samples.len() as f64 / (JOINT_COUNT - 1) as f64)
}

/// Mean geodesic distance between global joint rotations, radians.
pub fn delta_q(pred: &Pose, gt: &Pose, tree: &KinematicTree) -> Result<f64> {
    let a = local_to_global(pred, tree)?;
    let b = local_to_global(gt, tree)?;
    let mut total = 0.0;
    for (ra, rb) in a.iter().zip(&b) {
        total += quaternion_geodesic(&matrix_to_quaternion(ra)?, &matrix_to_quaternion(rb)?);
    }
    Ok(total / JOINT_COUNT as f64)
}

/// Mean joint distance in millimeters.
pub fn mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("joint counts {} and {}", pred.len(), gt.len())));
    }
    Ok(1000.0 * pred.iter().zip(gt).map(|(p, g)| (p - g).norm()).sum::<f64>() / pred.len() as f64)
}

fn centered(points: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    (points.iter().map(|p| p - c).collect(), c)
}

/// Similarity transform `(s, R, t)` minimizing `Σ |s R p + t - g|²`.
pub fn procrustes(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    if pred.len() != gt.len() || pred.len() < 3 {
        return Err(Error::Alignment(format!(
            "need matching sets of at least 3 points, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let (p, pc) = centered(pred);
    let (g, gc) = centered(gt);
    let spread = |pts: &[Vector3<f64>]| {
        let cov: Matrix3<f64> = pts.iter().map(|v| v * v.transpose()).sum();
        let sv = cov.symmetric_eigenvalues();
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        s
    };
    let sg = spread(&g);
    if !(sg[0] > 0.0) || sg[1] <= 1e-12 * sg[0] {
        return Err(Error::Alignment("ground-truth joints are collinear".into()));
    }
    let var_p: f64 = p.iter().map(|v| v.norm_squared()).sum();
    if !(var_p > 0.0) {
        return Err(Error::Alignment("predicted joints coincide".into()));
    }
    let h: Matrix3<f64> = p.iter().zip(&g).map(|(a, b)| b * a.transpose()).sum();
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * fix * v_t;
    let sv = svd.singular_values;
    let s = (sv[0] + sv[1] + d * sv[2]) / var_p;
    let t = gc - s * r * pc;
    Ok((s, r, t))
}

/// MPJPE after optimal similarity alignment of `pred` onto `gt`, mm.
pub fn pa_mpjpe(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    let (s, r, t) = procrustes(pred, gt)?;
    let aligned: Vec<Vector3<f64>> = pred.iter().map(|p| s * r * p + t).collect();
    mpjpe(&aligned, gt)
}

/// Root-aligned mean joint distance of two poses, mm.
pub fn j2j(pred: &Pose, gt: &Pose, shape: &Shape, tree: &KinematicTree) -> Result<f64> {
    mpjpe(&forward_kinematics(pred, shape, tree)?, &forward_kinematics(gt, shape, tree)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub set_a: String,
    pub set_b: String,
    pub value: f64,
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_metric_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut out = String::from("metric,set_a,set_b,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.metric),
            csv_field(&r.set_a),
            csv_field(&r.set_b),
            r.value
        ));
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| Error::io(path, e))
}
