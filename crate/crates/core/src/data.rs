//! Synthetic pose corpus, caption templates, rendered keypoint features and
//! the `PDPS1` pose file format.
//!
//! Poses come from a low-rank latent: `u ~ N(0, I_rank)` drives per-joint
//! axis-angle vectors through a fixed table of semantic couplings (crouch,
//! arm raises, torso bend, twist, head, elbow bend, leg asymmetry) plus a
//! small seeded mixing term, and every coordinate is clamped to the joint's
//! limit box. Axis conventions of the shipped tree: knee flexion is `+x`,
//! hip flexion `-x`, forward spine bend `+x`, raising the left arm `+z` and
//! the right arm `-z`, bending the left elbow `-y` and the right elbow `+y`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ImageFeatureInput, CONTEXT_TOKENS};
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::rotations::{axis_angle_to_matrix, matrix_to_sixd, sixd_to_matrix, SixD};
use crate::skeleton::{forward_kinematics, joint, project, CameraIntrinsics, KinematicTree, Pose, Shape, JOINT_COUNT};

pub const FILE_HEADER: &str = "PDPS1";
pub const DEFAULT_LATENT_RANK: usize = 8;
/// Root position in camera coordinates used to render keypoint features.
pub const FEATURE_CAMERA_TRANSLATION: [f64; 3] = [0.0, 0.0, 4.0];
const MIXING_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: u64,
    pub split: Split,
    pub caption: Option<String>,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub size: usize,
    pub seed: u64,
    pub latent_rank: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self { size: 512, seed: 0, latent_rank: DEFAULT_LATENT_RANK }
    }
}

/// Every eighth record is held out.
pub fn split_of(id: u64) -> Split {
    if id % 8 == 7 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Per-joint axis-angle limits `[lo, hi]` for each axis.
pub fn joint_limits(j: usize) -> [[f64; 2]; 3] {
    use joint::*;
    const D: [f64; 2] = [-0.6, 0.6];
    match j {
        LEFT_HIP | RIGHT_HIP => [[-1.6, 0.6], [-0.5, 0.5], [-0.6, 0.6]],
        LEFT_KNEE | RIGHT_KNEE => [[0.0, 2.4], [-0.1, 0.1], [-0.1, 0.1]],
        SPINE1 | SPINE2 | SPINE3 => [[-0.3, 0.6], [-0.5, 0.5], [-0.3, 0.3]],
        LEFT_SHOULDER => [[-0.8, 0.8], [-0.8, 0.8], [-1.5, 1.7]],
        RIGHT_SHOULDER => [[-0.8, 0.8], [-0.8, 0.8], [-1.7, 1.5]],
        LEFT_ELBOW => [[-0.3, 0.3], [-2.4, 0.1], [-0.3, 0.3]],
        RIGHT_ELBOW => [[-0.3, 0.3], [-0.1, 2.4], [-0.3, 0.3]],
        PELVIS => [[-0.3, 0.3], [-0.3, 0.3], [-0.3, 0.3]],
        _ => [D, D, D],
    }
}

/// `(joint, axis, bias, latent weights)`; unlisted coordinates have zero
/// bias and only the seeded mixing term.
const COUPLINGS: &[(usize, usize, f64, [f64; 8])] = {
    use joint::*;
    &[
        // crouch, with a little leg asymmetry
        (LEFT_KNEE, 0, 0.6, [0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.15]),
        (RIGHT_KNEE, 0, 0.6, [0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.15]),
        (LEFT_HIP, 0, -0.1, [-0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.3]),
        (RIGHT_HIP, 0, -0.1, [-0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3]),
        (LEFT_ANKLE, 0, 0.0, [-0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (RIGHT_ANKLE, 0, 0.0, [-0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        // arm raises
        (LEFT_SHOULDER, 2, -0.6, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (RIGHT_SHOULDER, 2, 0.6, [0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (LEFT_COLLAR, 2, 0.0, [0.0, 0.15, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        (RIGHT_COLLAR, 2, 0.0, [0.0, 0.0, -0.15, 0.0, 0.0, 0.0, 0.0, 0.0]),
        // torso bend
        (SPINE1, 0, 0.1, [0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0]),
        (SPINE2, 0, 0.1, [0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0]),
        (SPINE3, 0, 0.1, [0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0]),
        // twist
        (SPINE1, 1, 0.0, [0.0, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0, 0.0]),
        (SPINE2, 1, 0.0, [0.0, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0, 0.0]),
        (SPINE3, 1, 0.0, [0.0, 0.0, 0.0, 0.0, 0.15, 0.0, 0.0, 0.0]),
        // head
        (NECK, 0, 0.0, [0.0, 0.0, 0.0, -0.1, 0.0, 0.2, 0.0, 0.0]),
        (HEAD, 1, 0.0, [0.0, 0.0, 0.0, 0.0, -0.2, 0.3, 0.0, 0.0]),
        // elbows
        (LEFT_ELBOW, 1, -0.5, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.6, 0.2]),
        (RIGHT_ELBOW, 1, 0.5, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.2]),
    ]
};

/// Axis-angle vectors for latent `u` under a given mixing table.
fn latent_to_axis_angles(u: &[f64], mixing: &[f64]) -> Vec<[f64; 3]> {
    let rank = u.len();
    let mut out = vec![[0.0; 3]; JOINT_COUNT];
    for (j, aa) in out.iter_mut().enumerate() {
        for (a, v) in aa.iter_mut().enumerate() {
            let row = &mixing[(j * 3 + a) * rank..(j * 3 + a + 1) * rank];
            *v = row.iter().zip(u).map(|(w, x)| w * x).sum();
        }
    }
    for &(j, a, bias, w) in COUPLINGS {
        out[j][a] += bias + w.iter().zip(u).map(|(w, x)| w * x).sum::<f64>();
    }
    for (j, aa) in out.iter_mut().enumerate() {
        let lim = joint_limits(j);
        for a in 0..3 {
            aa[a] = aa[a].clamp(lim[a][0], lim[a][1]);
        }
    }
    out
}

pub fn pose_from_axis_angles(aa: &[[f64; 3]]) -> Result<Pose> {
    let rots =
        aa.iter().map(|v| matrix_to_sixd(&axis_angle_to_matrix(&Vector3::from(*v)))).collect::<Result<Vec<SixD>>>()?;
    Pose::from_sixd(rots)
}

/// Principal-axis angles of every joint, recovered from its rotation.
/// Exact for the generator's output whenever one axis dominates.
pub fn axis_angles(pose: &Pose) -> Result<Vec<[f64; 3]>> {
    pose.rotations
        .iter()
        .map(|r| {
            let m = sixd_to_matrix(r)?;
            let v = nalgebra::Rotation3::from_matrix_unchecked(m).scaled_axis();
            Ok([v.x, v.y, v.z])
        })
        .collect()
}

/// Caption phrases whose angle predicates hold.
pub fn caption_phrases(aa: &[[f64; 3]]) -> Vec<&'static str> {
    use joint::*;
    let mut out = Vec::new();
    if aa[LEFT_KNEE][0] > 1.0 && aa[RIGHT_KNEE][0] > 1.0 {
        out.push("kneeling");
    } else if aa[LEFT_KNEE][0] < 0.3 && aa[RIGHT_KNEE][0] < 0.3 {
        out.push("standing");
    }
    if aa[LEFT_SHOULDER][2] > 0.3 {
        out.push("left arm raised");
    }
    if aa[RIGHT_SHOULDER][2] < -0.3 {
        out.push("right arm raised");
    }
    if aa[SPINE1][0] + aa[SPINE2][0] + aa[SPINE3][0] > 0.6 {
        out.push("bending forward");
    }
    if aa[LEFT_ELBOW][1] < -1.0 && aa[RIGHT_ELBOW][1] > 1.0 {
        out.push("elbows bent");
    }
    out
}

pub fn caption_for(aa: &[[f64; 3]]) -> String {
    let phrases = caption_phrases(aa);
    if phrases.is_empty() {
        "neutral pose".to_string()
    } else {
        phrases.join(", ")
    }
}

/// Deterministic corpus; record `id` depends only on `(spec.seed, id)`.
pub fn synth_corpus(spec: &CorpusSpec, _tree: &KinematicTree) -> Result<Vec<PoseRecord>> {
    if spec.size == 0 {
        return Err(Error::Validation("corpus size must be at least 1".into()));
    }
    if spec.latent_rank < 8 {
        return Err(Error::Validation(format!("latent rank {} below the 8 semantic factors", spec.latent_rank)));
    }
    let root = RngStream::new(spec.seed);
    let mixing: Vec<f64> =
        root.derive(0).normals(JOINT_COUNT * 3 * spec.latent_rank).into_iter().map(|x| x * MIXING_SCALE).collect();
    (0..spec.size as u64)
        .map(|id| {
            let u = root.derive(id + 1).normals(spec.latent_rank);
            let aa = latent_to_axis_angles(&u, &mixing);
            Ok(PoseRecord {
                id,
                split: split_of(id),
                caption: Some(caption_for(&aa)),
                pose: pose_from_axis_angles(&aa)?,
            })
        })
        .collect()
}

/// Projected 24 joints with the root placed at `translation`.
pub fn render_keypoints(
    pose: &Pose,
    shape: &Shape,
    tree: &KinematicTree,
    intrinsics: &CameraIntrinsics,
    translation: [f64; 3],
) -> Result<Vec<[f64; 2]>> {
    let t = Vector3::from(translation);
    let pts: Vec<Vector3<f64>> = forward_kinematics(pose, shape, tree)?.into_iter().map(|p| p + t).collect();
    project(&pts, intrinsics)
}

/// Image-feature stand-in: keypoints of joints 1..=21 rendered with the
/// default camera, full confidence.
pub fn image_features(pose: &Pose, tree: &KinematicTree) -> Result<ImageFeatureInput> {
    let kp = render_keypoints(pose, &Shape::default(), tree, &CameraIntrinsics::default(), FEATURE_CAMERA_TRANSLATION)?;
    Ok(ImageFeatureInput { keypoints2d: kp[1..=CONTEXT_TOKENS].to_vec(), confidence: vec![1.0; CONTEXT_TOKENS] })
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: u64,
    split: Split,
    caption: Option<String>,
    pose: Vec<f64>,
}

pub fn save_poses(records: &[PoseRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{FILE_HEADER}").map_err(io)?;
    for r in records {
        let line = Line { id: r.id, split: r.split, caption: r.caption.clone(), pose: r.pose.to_flat() };
        let text = serde_json::to_string(&line).map_err(|e| Error::Record { id: r.id, msg: e.to_string() })?;
        writeln!(w, "{text}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == FILE_HEADER => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => return Err(Error::Format { path: path.into(), msg: format!("missing {FILE_HEADER} header") }),
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.enumerate() {
        let number = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: number,
            msg: e.to_string(),
        })?;
        let pose = Pose::from_flat(&rec.pose).map_err(|e| Error::Record { id: rec.id, msg: e.to_string() })?;
        if !seen.insert(rec.id) {
            return Err(Error::Record { id: rec.id, msg: "duplicate id".into() });
        }
        out.push(PoseRecord { id: rec.id, split: rec.split, caption: rec.caption, pose });
    }
    Ok(out)
}
