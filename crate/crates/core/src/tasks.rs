//! End-to-end uses of the prior: keypoint-guided refinement, optimization
//! fitting, completion from sparse 3D joints and pose denoising.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::conditioning::{ImageFeatureInput, CONTEXT_TOKENS};
use crate::data::render_keypoints;
use crate::diffusion::{
    ascending_levels, ddim_invert, ddim_trajectory, descending_levels, linear_levels, predict_eps, DiffusionSchedule,
    EpsilonModel, GuidanceLoss, GuidanceSpec, SamplingContext,
};
use crate::error::{Error, Result};
use crate::metrics::csv_field;
use crate::numcore::{gauss_sample, RngStream, Tape, Tensor, Var};
use crate::rotations::{axis_angle_to_matrix, sixd_to_matrix_var};
use crate::skeleton::{
    batch_to_poses, bone_scales_var, forward_kinematics, forward_kinematics_var, joint as jt, poses_to_batch,
    project_var, CameraIntrinsics, KinematicTree, Pose, Shape, GEMAN_MCCLURE_SIGMA, JOINT_COUNT, SHAPE_DIM,
};

/// 2D keypoint evidence. `weights` combine detector confidence and any
/// per-joint importance; `translation` places the skeleton root in the
/// camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    pub keypoints: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    pub translation: [f64; 3],
}

impl Observation2D {
    /// Keypoints of `pose` rendered with unit weights.
    pub fn render(
        pose: &Pose,
        shape: &Shape,
        tree: &KinematicTree,
        intrinsics: CameraIntrinsics,
        translation: [f64; 3],
    ) -> Result<Self> {
        let keypoints = render_keypoints(pose, shape, tree, &intrinsics, translation)?;
        Ok(Self { keypoints, weights: vec![1.0; JOINT_COUNT], intrinsics, translation })
    }

    pub fn validate(&self) -> Result<()> {
        self.guidance(0.0, Shape::default()).validate()?;
        if self.keypoints.iter().flatten().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::Validation("observation holds non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn guidance(&self, rho: f64, shape: Shape) -> GuidanceSpec {
        GuidanceSpec {
            rho,
            loss: GuidanceLoss::Reprojection {
                keypoints: self.keypoints.clone(),
                weights: self.weights.clone(),
                intrinsics: self.intrinsics,
                translation: self.translation,
            },
            shape,
        }
    }

    /// Keypoint features of joints 1..=21 for conditioning, with the
    /// weights (clamped to `[0, 1]`) as confidences.
    pub fn image_features(&self) -> ImageFeatureInput {
        let joints = 1..=CONTEXT_TOKENS;
        ImageFeatureInput {
            keypoints2d: self.keypoints[joints.clone()].to_vec(),
            confidence: self.weights[joints].iter().map(|w| w.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Weighted root-mean-square pixel error of a pose's projection.
    pub fn reprojection_rms(&self, pose: &Pose, shape: &Shape, tree: &KinematicTree) -> Result<f64> {
        let kp = render_keypoints(pose, shape, tree, &self.intrinsics, self.translation)?;
        let (mut num, mut den) = (0.0, 0.0);
        for ((p, q), w) in kp.iter().zip(&self.keypoints).zip(&self.weights) {
            num += w * ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
            den += w;
        }
        if den == 0.0 {
            return Err(Error::Validation("all keypoint weights are zero".into()));
        }
        Ok((num / den).sqrt())
    }
}

/// Observed 3D joints (root at the origin); `mask[j]` marks joint `j` as observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation3D {
    pub joints: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

impl Observation3D {
    pub fn validate(&self) -> Result<()> {
        self.guidance(0.0).validate()?;
        if self.joints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("observation holds non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn guidance(&self, rho: f64) -> GuidanceSpec {
        GuidanceSpec {
            rho,
            loss: GuidanceLoss::Sparse3d { joints: self.joints.clone(), mask: self.mask.clone() },
            shape: Shape::default(),
        }
    }

    /// Mean Euclidean distance over observed joints, meters.
    pub fn observed_error(&self, pose: &Pose, shape: &Shape, tree: &KinematicTree) -> Result<f64> {
        let fk = forward_kinematics(pose, shape, tree)?;
        let (mut sum, mut n) = (0.0, 0usize);
        for (j, p) in fk.iter().enumerate().filter(|(j, _)| self.mask[*j]) {
            sum += (p - Vector3::from(self.joints[j])).norm();
            n += 1;
        }
        Ok(sum / n.max(1) as f64)
    }
}

/// Simulated occlusion patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionScenario {
    /// The left arm chain (shoulder to hand) is hidden.
    OccArm,
    /// Both leg chains (hip to foot) are hidden.
    OccLegs,
    /// Only wrists, ankles and head are visible.
    EndEffectors,
}

impl OcclusionScenario {
    pub const ALL: [OcclusionScenario; 3] = [Self::OccArm, Self::OccLegs, Self::EndEffectors];

    pub fn name(self) -> &'static str {
        match self {
            Self::OccArm => "occ_arm",
            Self::OccLegs => "occ_legs",
            Self::EndEffectors => "end_effectors",
        }
    }

    pub fn mask(self) -> [bool; JOINT_COUNT] {
        let set = |joints: &[usize], value: bool| {
            let mut m = [!value; JOINT_COUNT];
            joints.iter().for_each(|&j| m[j] = value);
            m
        };
        match self {
            Self::OccArm => set(&[jt::LEFT_SHOULDER, jt::LEFT_ELBOW, jt::LEFT_WRIST, jt::LEFT_HAND], false),
            Self::OccLegs => set(
                &[
                    jt::LEFT_HIP,
                    jt::RIGHT_HIP,
                    jt::LEFT_KNEE,
                    jt::RIGHT_KNEE,
                    jt::LEFT_ANKLE,
                    jt::RIGHT_ANKLE,
                    jt::LEFT_FOOT,
                    jt::RIGHT_FOOT,
                ],
                false,
            ),
            Self::EndEffectors => {
                set(&[jt::LEFT_WRIST, jt::RIGHT_WRIST, jt::LEFT_ANKLE, jt::RIGHT_ANKLE, jt::HEAD], true)
            }
        }
    }
}

impl FromStr for OcclusionScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown occlusion scenario {s:?}")))
    }
}

pub fn make_scenario(
    scenario: OcclusionScenario,
    gt: &Pose,
    shape: &Shape,
    tree: &KinematicTree,
) -> Result<Observation3D> {
    let joints = forward_kinematics(gt, shape, tree)?.iter().map(|p| [p.x, p.y, p.z]).collect();
    Ok(Observation3D { joints, mask: scenario.mask().to_vec() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    /// Noise level the initial estimate is inverted to.
    pub t: usize,
    pub stride: usize,
    pub rho: f64,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self { t: 50, stride: 2, rho: 0.003 }
    }
}

/// Inverts each init to `settings.t`, then denoises back to a clean pose
/// under reprojection guidance. All items share `sc` and the camera.
#[allow(clippy::too_many_arguments)]
pub fn refine_poses<M: EpsilonModel + ?Sized>(
    model: &M,
    inits: &[Pose],
    observations: &[Observation2D],
    shapes: &[Shape],
    sc: &SamplingContext,
    settings: &RefineSettings,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Vec<Pose>> {
    if inits.len() != observations.len() || inits.len() != shapes.len() {
        return Err(Error::Validation("refinement needs one observation and shape per init".into()));
    }
    inits.iter().try_for_each(Pose::validate)?;
    observations.iter().try_for_each(Observation2D::validate)?;
    let specs: Vec<GuidanceSpec> =
        observations.iter().zip(shapes).map(|(o, s)| o.guidance(settings.rho, s.clone())).collect();
    let refs: Vec<&GuidanceSpec> = specs.iter().collect();
    let z = ddim_invert(model, &poses_to_batch(inits), settings.t, settings.stride, sc, schedule)?;
    let levels = descending_levels(settings.t, settings.stride)?;
    let x = ddim_trajectory(model, z, &levels, sc, Some(&refs), schedule, tree)?;
    batch_to_poses(&x)?.iter().map(Pose::normalized).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn refine_pose<M: EpsilonModel + ?Sized>(
    model: &M,
    init: &Pose,
    observation: &Observation2D,
    shape: &Shape,
    sc: &SamplingContext,
    settings: &RefineSettings,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Pose> {
    let out = refine_poses(
        model,
        std::slice::from_ref(init),
        std::slice::from_ref(observation),
        std::slice::from_ref(shape),
        sc,
        settings,
        schedule,
        tree,
    )?;
    Ok(out.into_iter().next().expect("one refined pose"))
}

/// Guidance strength for completion from sparse 3D joints. The squared
/// metric loss is far smaller than a pixel-space reprojection loss, so the
/// strength is correspondingly larger.
pub const COMPLETION_RHO: f64 = 150.0;

/// Completion guidance acts only on levels below this one. The shift a
/// gradient term in ε causes in the clean estimate grows like (1 - ᾱ)/ᾱ,
/// so one constant strength that is effective late is explosive early.
pub const COMPLETION_GUIDE_BELOW: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompleteSettings {
    pub from: usize,
    pub to: usize,
    pub steps: usize,
    pub rho: f64,
    /// Levels at or above this one run unguided.
    pub guide_below: usize,
    /// Start from the DDIM inversion of a supplied initial guess instead of noise.
    pub invert_init: bool,
}

impl Default for CompleteSettings {
    fn default() -> Self {
        Self {
            from: 900,
            to: 10,
            steps: 400,
            rho: COMPLETION_RHO,
            guide_below: COMPLETION_GUIDE_BELOW,
            invert_init: false,
        }
    }
}

/// Sampling over `steps` linearly spaced levels from `from` to `to`, then to
/// the clean level, guided by the observations once below `guide_below`.
/// With `invert_init` every item starts from the inversion of its entry in
/// `inits`; otherwise from pure noise.
#[allow(clippy::too_many_arguments)]
pub fn complete_poses<M: EpsilonModel + ?Sized>(
    model: &M,
    observations: &[Observation3D],
    inits: Option<&[Pose]>,
    sc: &SamplingContext,
    settings: &CompleteSettings,
    schedule: &DiffusionSchedule,
    stream: &mut RngStream,
    tree: &KinematicTree,
) -> Result<Vec<Pose>> {
    observations.iter().try_for_each(Observation3D::validate)?;
    let n = observations.len();
    let levels = linear_levels(settings.from, settings.to, settings.steps)?;
    let z = if settings.invert_init {
        let inits = inits.ok_or_else(|| Error::Validation("inversion start needs initial poses".into()))?;
        if inits.len() != n {
            return Err(Error::Validation("one initial pose per observation".into()));
        }
        let start = levels[0];
        let stride = (start / settings.steps.max(1)).max(1);
        ddim_invert(model, &poses_to_batch(inits), start, stride, sc, schedule)?
    } else {
        gauss_sample(stream, &[n * JOINT_COUNT, 6])
    };
    let specs: Vec<GuidanceSpec> = observations.iter().map(|o| o.guidance(settings.rho)).collect();
    let refs: Vec<&GuidanceSpec> = specs.iter().collect();
    let split = levels.iter().position(|&t| t < settings.guide_below).unwrap_or(levels.len() - 1);
    let z = ddim_trajectory(model, z, &levels[..=split], sc, None, schedule, tree)?;
    let x = ddim_trajectory(model, z, &levels[split..], sc, Some(&refs), schedule, tree)?;
    batch_to_poses(&x)?.iter().map(Pose::normalized).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn complete_pose<M: EpsilonModel + ?Sized>(
    model: &M,
    observation: &Observation3D,
    init: Option<&Pose>,
    sc: &SamplingContext,
    settings: &CompleteSettings,
    schedule: &DiffusionSchedule,
    stream: &mut RngStream,
    tree: &KinematicTree,
) -> Result<Pose> {
    let inits = init.map(|p| vec![p.clone()]);
    let out = complete_poses(
        model,
        std::slice::from_ref(observation),
        inits.as_deref(),
        sc,
        settings,
        schedule,
        stream,
        tree,
    )?;
    Ok(out.into_iter().next().expect("one completed pose"))
}

pub const DENOISE_START: usize = 400;
pub const DENOISE_STRIDE: usize = 5;

/// Treats each noisy pose as the latent at level 400 and runs σ=0 DDIM
/// back to the clean level with stride 5, unconditionally.
pub fn denoise_poses<M: EpsilonModel + ?Sized>(
    model: &M,
    noisy: &[Pose],
    sc: &SamplingContext,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Vec<Pose>> {
    noisy.iter().try_for_each(Pose::validate)?;
    let levels = descending_levels(DENOISE_START, DENOISE_STRIDE)?;
    let x = ddim_trajectory(model, poses_to_batch(noisy), &levels, sc, None, schedule, tree)?;
    batch_to_poses(&x)?.iter().map(Pose::normalized).collect()
}

pub fn denoise_pose<M: EpsilonModel + ?Sized>(
    model: &M,
    noisy: &Pose,
    sc: &SamplingContext,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Pose> {
    Ok(denoise_poses(model, std::slice::from_ref(noisy), sc, schedule, tree)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Weights of the pose prior, the shape penalty and the bending penalty.
    pub lambdas: [f64; 3],
    pub iterations: usize,
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Level the pose is treated as when projected onto the prior.
    pub prior_t: usize,
    pub prior_stride: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            lambdas: [0.1, 1e-3, 1e-2],
            iterations: 200,
            initial_step: 1e-2,
            shrink: 0.5,
            max_backtracks: 20,
            prior_t: 50,
            prior_stride: 10,
        }
    }
}

impl FitSettings {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Validation(format!("lambdas {:?} must be finite and non-negative", self.lambdas)));
        }
        if !(self.initial_step > 0.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Validation("line search needs a positive step and a shrink factor in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub pose: Pose,
    pub shape: Shape,
    /// Objective at the start and after every accepted step.
    pub losses: Vec<f64>,
}

/// Signed primary-axis angles of the elbows and knees, positive when the
/// joint bends against its natural direction. Knees flex about +x and the
/// left and right elbows about -y and +y in this skeleton.
fn hyperextension_var<'t>(x: Var<'t>) -> Var<'t> {
    let r = sixd_to_matrix_var(x.gather_rows(vec![jt::LEFT_KNEE, jt::RIGHT_KNEE, jt::LEFT_ELBOW, jt::RIGHT_ELBOW]));
    // Column-major entries: R21 = 5, R22 = 8, R02 = 6, R00 = 0.
    let about_x = r.slice_cols(5, 6).atan2(r.slice_cols(8, 9));
    let about_y = r.slice_cols(6, 7).atan2(r.slice_cols(0, 1));
    let sign = x.tape().constant(Tensor::from_vec(4, 1, vec![-1.0, -1.0, 0.0, 0.0]));
    let sign_y = x.tape().constant(Tensor::from_vec(4, 1, vec![0.0, 0.0, 1.0, -1.0]));
    about_x.mul(sign).add(about_y.mul(sign_y))
}

/// One σ=0 DDIM pass treating `x` as the latent at `t`, on the tape.
fn prior_projection_var<'t, M: EpsilonModel + ?Sized>(
    model: &M,
    x: Var<'t>,
    sc: &SamplingContext,
    settings: &FitSettings,
    schedule: &DiffusionSchedule,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let levels = descending_levels(settings.prior_t, settings.prior_stride)?;
    let mut z = x;
    for w in levels.windows(2) {
        let (ab, ab_prev) = (schedule.alpha_bar[w[0]], schedule.level_alpha_bar(w[1]));
        let eps = predict_eps(model, tape, z, &[w[0]], sc)?;
        let x0 = z.sub(eps.scale((1.0 - ab).sqrt())).scale(1.0 / ab.sqrt());
        z = x0.scale(ab_prev.sqrt()).add(eps.scale((1.0 - ab_prev).sqrt()));
    }
    Ok(z)
}

#[allow(clippy::too_many_arguments)]
fn fit_objective<'t, M: EpsilonModel + ?Sized>(
    model: &M,
    x: Var<'t>,
    beta: Var<'t>,
    obs: &Observation2D,
    sc: &SamplingContext,
    settings: &FitSettings,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let [l_prior, l_shape, l_bend] = settings.lambdas;
    let (joints, _) = forward_kinematics_var(x, Some(bone_scales_var(beta, tree)), tree);
    let offset: Vec<f64> = (0..JOINT_COUNT).flat_map(|_| obs.translation).collect();
    let uv = project_var(joints.add(tape.constant(Tensor::from_vec(JOINT_COUNT, 3, offset))), &obs.intrinsics)?;
    let target: Vec<f64> = obs.keypoints.iter().flatten().copied().collect();
    let residual = uv.sub(tape.constant(Tensor::from_vec(JOINT_COUNT, 2, target)));
    let weights = tape.constant(Tensor::from_vec(JOINT_COUNT, 1, obs.weights.clone()));
    let mut loss = residual.geman_mcclure(GEMAN_MCCLURE_SIGMA).sum_cols().mul(weights).sum();
    if l_prior > 0.0 {
        let projected = prior_projection_var(model, x, sc, settings, schedule)?;
        loss = loss.add(x.sub(projected).square().sum().scale(l_prior));
    }
    if l_shape > 0.0 {
        loss = loss.add(beta.square().sum().scale(l_shape));
    }
    if l_bend > 0.0 {
        loss = loss.add(hyperextension_var(x).exp().sum().scale(l_bend));
    }
    Ok(loss)
}

fn objective_value<M: EpsilonModel + ?Sized>(
    model: &M,
    x: &Tensor,
    beta: &Tensor,
    args: (&Observation2D, &SamplingContext, &FitSettings, &DiffusionSchedule, &KinematicTree),
) -> Result<f64> {
    let (obs, sc, settings, schedule, tree) = args;
    let tape = Tape::new();
    let loss =
        fit_objective(model, tape.constant(x.clone()), tape.constant(beta.clone()), obs, sc, settings, schedule, tree)?;
    Ok(loss.with_value(Tensor::item))
}

/// Gradient descent with backtracking line search on the reprojection
/// objective plus prior, shape and bending penalties. Only steps that do
/// not increase the objective are accepted; the loop stops early once no
/// step size in the backtracking range helps.
#[allow(clippy::too_many_arguments)]
pub fn smplify_fit<M: EpsilonModel + ?Sized>(
    model: &M,
    obs: &Observation2D,
    init: &Pose,
    shape: &Shape,
    sc: &SamplingContext,
    settings: &FitSettings,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<FitResult> {
    settings.validate()?;
    obs.validate()?;
    init.validate()?;
    let args = (obs, sc, settings, schedule, tree);
    let mut x = init.to_tensor();
    let mut beta = Tensor::from_vec(1, SHAPE_DIM, shape.beta.to_vec());
    let mut losses = Vec::with_capacity(settings.iterations + 1);
    for iteration in 0..settings.iterations {
        let tape = Tape::new();
        let (xv, bv) = (tape.var(x.clone()), tape.var(beta.clone()));
        let loss = fit_objective(model, xv, bv, obs, sc, settings, schedule, tree)?;
        let current = loss.with_value(Tensor::item);
        if !current.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        if losses.is_empty() {
            losses.push(current);
        }
        let grads = tape.backward(loss)?;
        let (gx, gb) = (grads.get_or_zeros(xv), grads.get_or_zeros(bv));
        let g2 = gx.data().iter().chain(gb.data()).map(|g| g * g).sum::<f64>();
        if !g2.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        if g2 == 0.0 {
            break;
        }
        let mut step = settings.initial_step;
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let (mut xc, mut bc) = (x.clone(), beta.clone());
            xc.axpy(-step, &gx);
            bc.axpy(-step, &gb);
            // Candidates that leave the valid region count as rejections.
            if let Ok(v) = objective_value(model, &xc, &bc, args) {
                if v.is_nan() {
                    return Err(Error::Diverged { iteration });
                }
                if v <= current {
                    accepted = Some((xc, bc, v));
                    break;
                }
            }
            step *= settings.shrink;
        }
        let Some((xc, bc, v)) = accepted else { break };
        x = xc;
        beta = bc;
        losses.push(v);
    }
    let mut shape = Shape::default();
    shape.beta.copy_from_slice(beta.data());
    Ok(FitResult { pose: Pose::from_tensor(&x)?.normalized()?, shape, losses })
}

/// Applies an independent random rotation to every joint: axis-angle
/// vectors with i.i.d. `N(0, sigma^2)` components, right-multiplied.
pub fn perturb_pose(pose: &Pose, sigma: f64, stream: &mut RngStream) -> Result<Pose> {
    let mats: Vec<_> = pose
        .matrices()?
        .into_iter()
        .map(|r| {
            let v = stream.normals(3);
            r * axis_angle_to_matrix(&Vector3::new(v[0], v[1], v[2]).scale(sigma))
        })
        .collect();
    Pose::from_matrices(&mats)
}

/// One line of a task report.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRow {
    pub scenario: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_scenario_csv(rows: &[ScenarioRow], path: &Path) -> Result<()> {
    let mut out = String::from("scenario,metric,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", csv_field(&r.scenario), csv_field(&r.metric), r.value));
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| Error::io(path, e))
}

/// Levels visited by refinement's inversion and guided pass.
pub fn refine_levels(settings: &RefineSettings) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok((ascending_levels(settings.t, settings.stride)?, descending_levels(settings.t, settings.stride)?))
}
