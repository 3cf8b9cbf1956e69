//! Rigid 24-joint body model with the SMPL joint hierarchy: forward
//! kinematics, skeletal hop distances, joint groups, pinhole projection and
//! the Geman-McClure robust penalty.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tensor, Var};
use crate::rotations::{matrix_to_sixd, sixd_to_matrix, sixd_to_matrix_var, Rotation, SixD};

pub const JOINT_COUNT: usize = 24;
pub const SHAPE_DIM: usize = 10;
pub const GROUP_COUNT: usize = 5;
pub const BONE_SCALE_MIN: f64 = 0.5;
pub const BONE_SCALE_MAX: f64 = 2.0;
pub const GEMAN_MCCLURE_SIGMA: f64 = 100.0;
const SHAPE_BASIS_SEED: u64 = 0x5EED_BA515;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const LEFT_HIP: usize = 1;
    pub const RIGHT_HIP: usize = 2;
    pub const SPINE1: usize = 3;
    pub const LEFT_KNEE: usize = 4;
    pub const RIGHT_KNEE: usize = 5;
    pub const SPINE2: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;
    pub const SPINE3: usize = 9;
    pub const LEFT_FOOT: usize = 10;
    pub const RIGHT_FOOT: usize = 11;
    pub const NECK: usize = 12;
    pub const LEFT_COLLAR: usize = 13;
    pub const RIGHT_COLLAR: usize = 14;
    pub const HEAD: usize = 15;
    pub const LEFT_SHOULDER: usize = 16;
    pub const RIGHT_SHOULDER: usize = 17;
    pub const LEFT_ELBOW: usize = 18;
    pub const RIGHT_ELBOW: usize = 19;
    pub const LEFT_WRIST: usize = 20;
    pub const RIGHT_WRIST: usize = 21;
    pub const LEFT_HAND: usize = 22;
    pub const RIGHT_HAND: usize = 23;
}

const SMPL_PARENTS: [i32; JOINT_COUNT] =
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];

// Meters, parent frame, y up, +x toward the body's left, +z forward (T-pose).
const REST_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.07, -0.09, 0.0],
    [-0.07, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.05, 0.02],
    [0.02, -0.06, 0.12],
    [-0.02, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.08, 0.11, -0.01],
    [-0.08, 0.11, -0.01],
    [0.0, 0.09, 0.05],
    [0.12, 0.05, -0.01],
    [-0.12, 0.05, -0.01],
    [0.26, -0.01, -0.02],
    [-0.26, -0.01, -0.02],
    [0.25, 0.01, 0.0],
    [-0.25, 0.01, 0.0],
    [0.08, -0.01, -0.01],
    [-0.08, -0.01, -0.01],
];

/// Joint hierarchy, rest geometry and the linear bone-length shape model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub parent: Vec<i32>,
    pub rest_offset: Vec<[f64; 3]>,
    /// `JOINT_COUNT x SHAPE_DIM`, row-major.
    pub shape_basis: Vec<f64>,
    #[serde(skip)]
    distances: Vec<usize>,
}

impl Default for KinematicTree {
    fn default() -> Self {
        Self::smpl()
    }
}

impl KinematicTree {
    /// The shipped tree: SMPL topology with synthetic humanoid offsets.
    pub fn smpl() -> Self {
        let mut s = RngStream::new(SHAPE_BASIS_SEED);
        let shape_basis = (0..JOINT_COUNT * SHAPE_DIM).map(|_| 0.2 * s.uniform() - 0.1).collect();
        Self::new(SMPL_PARENTS.to_vec(), REST_OFFSETS.to_vec(), shape_basis).expect("shipped tree is valid")
    }

    pub fn new(parent: Vec<i32>, rest_offset: Vec<[f64; 3]>, shape_basis: Vec<f64>) -> Result<Self> {
        if parent.len() != JOINT_COUNT || rest_offset.len() != JOINT_COUNT {
            return Err(Error::Validation(format!("tree must have {JOINT_COUNT} joints")));
        }
        if shape_basis.len() != JOINT_COUNT * SHAPE_DIM {
            return Err(Error::Validation("shape basis must be 24x10".into()));
        }
        if parent[0] != -1 || rest_offset[0] != [0.0; 3] {
            return Err(Error::Validation("joint 0 must be the root with zero offset".into()));
        }
        for (i, &p) in parent.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::Validation(format!(
                    "joint {i} has invalid parent {p} (parents must precede children)"
                )));
            }
        }
        let mut tree = Self { parent, rest_offset, shape_basis, distances: Vec::new() };
        tree.distances = tree.bfs_table();
        Ok(tree)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: KinematicTree =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("tree json: {e}")))?;
        Self::new(raw.parent, raw.rest_offset, raw.shape_basis)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn parent_of(&self, i: usize) -> Option<usize> {
        let p = self.parent[i];
        (p >= 0).then_some(p as usize)
    }

    pub fn children_of(&self, i: usize) -> Vec<usize> {
        (0..JOINT_COUNT).filter(|&j| self.parent[j] == i as i32).collect()
    }

    fn bfs_table(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); JOINT_COUNT];
        for j in 1..JOINT_COUNT {
            let p = self.parent[j] as usize;
            adj[j].push(p);
            adj[p].push(j);
        }
        let mut table = vec![usize::MAX; JOINT_COUNT * JOINT_COUNT];
        for src in 0..JOINT_COUNT {
            let mut queue = VecDeque::from([src]);
            table[src * JOINT_COUNT + src] = 0;
            while let Some(u) = queue.pop_front() {
                let du = table[src * JOINT_COUNT + u];
                for &w in &adj[u] {
                    if table[src * JOINT_COUNT + w] == usize::MAX {
                        table[src * JOINT_COUNT + w] = du + 1;
                        queue.push_back(w);
                    }
                }
            }
        }
        table
    }

    /// Number of bones on the path between two joints.
    pub fn skeletal_distance(&self, i: usize, j: usize) -> usize {
        self.distances[i * JOINT_COUNT + j]
    }

    pub fn max_distance(&self) -> usize {
        self.distances.iter().copied().max().unwrap_or(0)
    }

    /// Group index from the hop distance to the pelvis; bands are
    /// `[0]`, `[1]`, `[2, 3]`, `[4, 5]` and `[6, ..]`.
    pub fn joint_group(&self, i: usize) -> usize {
        match self.skeletal_distance(joint::PELVIS, i) {
            0 => 0,
            1 => 1,
            2 | 3 => 2,
            4 | 5 => 3,
            _ => 4,
        }
    }

    /// Per-bone length multipliers for a shape vector.
    pub fn bone_scales(&self, shape: &Shape) -> [f64; JOINT_COUNT] {
        let mut out = [1.0; JOINT_COUNT];
        for (i, s) in out.iter_mut().enumerate() {
            let lin: f64 = (0..SHAPE_DIM).map(|k| self.shape_basis[i * SHAPE_DIM + k] * shape.beta[k]).sum();
            *s = (1.0 + lin).clamp(BONE_SCALE_MIN, BONE_SCALE_MAX);
        }
        out
    }

    pub fn shape_basis_tensor(&self) -> Tensor {
        Tensor::from_vec(JOINT_COUNT, SHAPE_DIM, self.shape_basis.clone())
    }
}

/// Per-joint rotations; index 0 is the global orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<SixD>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotations: vec![SixD::IDENTITY; JOINT_COUNT] }
    }

    pub fn from_matrices(mats: &[Rotation]) -> Result<Self> {
        let rotations = mats.iter().map(matrix_to_sixd).collect::<Result<Vec<_>>>()?;
        Self::from_sixd(rotations)
    }

    pub fn from_sixd(rotations: Vec<SixD>) -> Result<Self> {
        if rotations.len() != JOINT_COUNT {
            return Err(Error::Shape(format!("pose needs {JOINT_COUNT} rotations, got {}", rotations.len())));
        }
        Ok(Self { rotations })
    }

    /// From a flat 144-vector.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != JOINT_COUNT * 6 {
            return Err(Error::Shape(format!("pose vector needs 144 values, got {}", values.len())));
        }
        let rotations = values
            .chunks(6)
            .map(|c| {
                let mut a = [0.0; 6];
                a.copy_from_slice(c);
                SixD(a)
            })
            .collect();
        Ok(Self { rotations })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rotations.iter().flat_map(|r| r.0).collect()
    }

    /// `[24, 6]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(JOINT_COUNT, 6, self.to_flat())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::from_flat(t.data())
    }

    pub fn matrices(&self) -> Result<Vec<Rotation>> {
        self.rotations.iter().map(sixd_to_matrix).collect()
    }

    /// Fails with a degenerate-rotation error if any joint is degenerate.
    pub fn validate(&self) -> Result<()> {
        self.matrices().map(|_| ())
    }

    /// Re-orthonormalized copy (each 6D replaced by its rotation's columns).
    pub fn normalized(&self) -> Result<Self> {
        Self::from_matrices(&self.matrices()?)
    }
}

/// Stack poses into a `[B * 24, 6]` batch tensor.
pub fn poses_to_batch(poses: &[Pose]) -> Tensor {
    let data = poses.iter().flat_map(|p| p.to_flat()).collect();
    Tensor::from_vec(poses.len() * JOINT_COUNT, 6, data)
}

pub fn batch_to_poses(t: &Tensor) -> Result<Vec<Pose>> {
    t.data().chunks(JOINT_COUNT * 6).map(Pose::from_flat).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Shape {
    pub beta: [f64; SHAPE_DIM],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { fx: 1000.0, fy: 1000.0, cx: 500.0, cy: 500.0 }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Per-joint global rotations: `G_i = G_parent(i) * R_i`.
pub fn local_to_global(pose: &Pose, tree: &KinematicTree) -> Result<Vec<Rotation>> {
    let local = pose.matrices()?;
    let mut global: Vec<Rotation> = Vec::with_capacity(JOINT_COUNT);
    for (i, r) in local.iter().enumerate() {
        let g = match tree.parent_of(i) {
            Some(p) => global[p] * r,
            None => *r,
        };
        global.push(g);
    }
    Ok(global)
}

/// Joint positions with the root at the origin.
pub fn forward_kinematics(pose: &Pose, shape: &Shape, tree: &KinematicTree) -> Result<Vec<Vector3<f64>>> {
    let global = local_to_global(pose, tree)?;
    let scales = tree.bone_scales(shape);
    let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(JOINT_COUNT);
    for i in 0..JOINT_COUNT {
        let p = match tree.parent_of(i) {
            Some(par) => {
                let off = Vector3::from(tree.rest_offset[i]) * scales[i];
                pos[par] + global[par] * off
            }
            None => Vector3::zeros(),
        };
        pos.push(p);
    }
    Ok(pos)
}

/// Forward kinematics on the tape for a `[B * 24, 6]` pose batch.
///
/// `bone_scale`, when given, is `[B, 24]`. Returns `[B * 24, 3]` joint
/// positions (root at the origin) and `[B * 24, 9]` global rotations.
pub fn forward_kinematics_var<'t>(
    pose: Var<'t>,
    bone_scale: Option<Var<'t>>,
    tree: &KinematicTree,
) -> (Var<'t>, Var<'t>) {
    let tape = pose.tape();
    let batch = pose.rows() / JOINT_COUNT;
    let local = sixd_to_matrix_var(pose);
    let rows_of = |j: usize| -> Vec<usize> { (0..batch).map(|b| b * JOINT_COUNT + j).collect() };
    let mut globals: Vec<Var<'t>> = Vec::with_capacity(JOINT_COUNT);
    let mut positions: Vec<Var<'t>> = Vec::with_capacity(JOINT_COUNT);
    for j in 0..JOINT_COUNT {
        let r = local.gather_rows(rows_of(j));
        match tree.parent_of(j) {
            None => {
                globals.push(r);
                positions.push(tape.constant(Tensor::zeros(&[batch, 3])));
            }
            Some(p) => {
                let off: Vec<f64> = (0..batch).flat_map(|_| tree.rest_offset[j]).collect();
                let mut off = tape.constant(Tensor::from_vec(batch, 3, off));
                if let Some(s) = bone_scale {
                    off = off.mul_col(s.slice_cols(j, j + 1));
                }
                positions.push(positions[p].add(globals[p].mat3_vec(off)));
                globals.push(globals[p].mat3_mul(r));
            }
        }
    }
    // joint-major -> batch-major
    let order: Vec<usize> = (0..batch).flat_map(|b| (0..JOINT_COUNT).map(move |j| j * batch + b)).collect();
    let pos = Var::concat_rows(&positions).gather_rows(order.clone());
    let glob = Var::concat_rows(&globals).gather_rows(order);
    (pos, glob)
}

/// Bone scales on the tape from `[B, 10]` shape parameters, as `[B, 24]`.
pub fn bone_scales_var<'t>(beta: Var<'t>, tree: &KinematicTree) -> Var<'t> {
    let basis_t = beta.tape().constant(tree.shape_basis_tensor().transpose());
    beta.matmul(basis_t).offset(1.0).clamp(BONE_SCALE_MIN, BONE_SCALE_MAX)
}

/// Pinhole projection of camera-frame points.
pub fn project(points: &[Vector3<f64>], k: &CameraIntrinsics) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .map(|p| {
            if p.z <= 1e-6 {
                return Err(Error::BehindCamera { z: p.z });
            }
            Ok([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
        })
        .collect()
}

/// Projection on the tape, `[n, 3] -> [n, 2]`.
pub fn project_var<'t>(points: Var<'t>, k: &CameraIntrinsics) -> Result<Var<'t>> {
    let min_z = points.with_value(|t| (0..t.rows()).map(|i| t.get(i, 2)).fold(f64::INFINITY, f64::min));
    if min_z <= 1e-6 {
        return Err(Error::BehindCamera { z: min_z });
    }
    let z = points.slice_cols(2, 3);
    let u = points.slice_cols(0, 1).div(z).scale(k.fx).offset(k.cx);
    let v = points.slice_cols(1, 2).div(z).scale(k.fy).offset(k.cy);
    Ok(Var::concat_cols(&[u, v]))
}

/// Sum of `r^2 s^2 / (r^2 + s^2)` over the residual entries.
pub fn geman_mcclure(residual: &[f64], sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    residual.iter().map(|r| r * r * s2 / (r * r + s2)).sum()
}

/// Rotation about a principal axis, for building test fixtures and poses.
pub fn axis_rotation(axis: usize, angle: f64) -> Rotation {
    let mut v = Vector3::zeros();
    v[axis] = angle;
    crate::rotations::axis_angle_to_matrix(&v)
}

pub fn identity_rotation() -> Rotation {
    Matrix3::identity()
}
