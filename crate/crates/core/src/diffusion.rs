//! DDPM forward process, noise-prediction objective, deterministic DDIM
//! sampling and inversion, classifier-free guidance and loss-guided noise.
//!
//! Schedule arrays are indexed `0..T`. Within DDIM stepping the target
//! level `0` denotes the clean sample (`ᾱ = 1`), so a trajectory
//! `t_k > ... > t_1 > 0` ends exactly at a pose estimate, and inversion
//! starts from the clean pose with the model evaluated at index 0.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::conditioning::ContextSequence;
use crate::denoiser::PoseModel;
use crate::error::{Error, Result};
use crate::numcore::{gauss_sample, RngStream, Tape, Tensor, Var};
use crate::skeleton::{
    batch_to_poses, bone_scales_var, forward_kinematics_var, project_var, CameraIntrinsics, KinematicTree, Pose, Shape,
    GEMAN_MCCLURE_SIGMA, JOINT_COUNT,
};

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Linear β from 1e-4 to 0.02 over `t` steps.
pub fn make_schedule(t: usize) -> Result<DiffusionSchedule> {
    if t < 1 {
        return Err(Error::Validation("schedule needs at least one step".into()));
    }
    let beta: Vec<f64> = (0..t)
        .map(|i| if t == 1 { BETA_START } else { BETA_START + (BETA_END - BETA_START) * i as f64 / (t - 1) as f64 })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(DiffusionSchedule { beta, alpha, alpha_bar })
}

impl DiffusionSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Validation(format!("timestep {t} outside 0..{}", self.len())));
        }
        Ok(())
    }

    /// `ᾱ` of a DDIM level: 1 for the clean level 0, the table value otherwise.
    pub fn level_alpha_bar(&self, level: usize) -> f64 {
        if level == 0 {
            1.0
        } else {
            self.alpha_bar[level]
        }
    }
}

pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, schedule: &DiffusionSchedule) -> Result<Tensor> {
    schedule.check(t)?;
    let ab = schedule.alpha_bar[t];
    Ok(z0.zip_map(eps, |x, e| ab.sqrt() * x + (1.0 - ab).sqrt() * e))
}

pub fn estimate_x0(z_t: &Tensor, t: usize, eps_hat: &Tensor, schedule: &DiffusionSchedule) -> Result<Tensor> {
    schedule.check(t)?;
    let ab = schedule.alpha_bar[t];
    Ok(z_t.zip_map(eps_hat, |z, e| (z - (1.0 - ab).sqrt() * e) / ab.sqrt()))
}

/// Moves `z` from noise level `ab_from` to `ab_to` along the DDIM path
/// defined by `eps`, adding `sigma * noise` when given.
fn ddim_transfer(z: &Tensor, eps: &Tensor, ab_from: f64, ab_to: f64, sigma: f64, noise: Option<&Tensor>) -> Tensor {
    let (s_from, n_from) = (ab_from.sqrt(), (1.0 - ab_from).sqrt());
    let (s_to, n_to) = (ab_to.sqrt(), (1.0 - ab_to - sigma * sigma).max(0.0).sqrt());
    let mut out = z.zip_map(eps, |z, e| s_to * (z - n_from * e) / s_from + n_to * e);
    if let Some(n) = noise {
        out.axpy(sigma, n);
    }
    out
}

/// One DDIM update from index `t` to level `t_prev` (0 = clean). Draws
/// fresh noise only when `sigma > 0`.
pub fn ddim_step(
    z_t: &Tensor,
    t: usize,
    t_prev: usize,
    eps_hat: &Tensor,
    sigma: f64,
    stream: &mut RngStream,
    schedule: &DiffusionSchedule,
) -> Result<Tensor> {
    schedule.check(t)?;
    if t_prev >= t {
        return Err(Error::Validation(format!("t_prev {t_prev} must be below t {t}")));
    }
    let ab_prev = schedule.level_alpha_bar(t_prev);
    if sigma < 0.0 || sigma * sigma > 1.0 - ab_prev {
        return Err(Error::Validation(format!("sigma {sigma} exceeds the available variance {}", 1.0 - ab_prev)));
    }
    let noise = (sigma > 0.0).then(|| gauss_sample(stream, z_t.shape()));
    Ok(ddim_transfer(z_t, eps_hat, schedule.alpha_bar[t], ab_prev, sigma, noise.as_ref()))
}

/// Anything that predicts noise for a batch of noisy poses.
pub trait EpsilonModel {
    /// `z` is `[B * 24, 6]`; `context` is `[B * 21, D]`.
    fn predict<'t>(&self, tape: &'t Tape, z: Var<'t>, ts: &[usize], context: &Tensor) -> Result<Var<'t>>;
}

impl EpsilonModel for PoseModel {
    fn predict<'t>(&self, tape: &'t Tape, z: Var<'t>, ts: &[usize], context: &Tensor) -> Result<Var<'t>> {
        let bp = self.bind(tape, false);
        self.forward(&bp, z, ts, tape.constant(context.clone()))
    }
}

/// Counts batched model evaluations of the wrapped model.
pub struct CountingModel<'m, M> {
    pub inner: &'m M,
    calls: Cell<usize>,
}

impl<'m, M> CountingModel<'m, M> {
    pub fn new(inner: &'m M) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<M: EpsilonModel> EpsilonModel for CountingModel<'_, M> {
    fn predict<'t>(&self, tape: &'t Tape, z: Var<'t>, ts: &[usize], context: &Tensor) -> Result<Var<'t>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict(tape, z, ts, context)
    }
}

/// Context plus classifier-free guidance settings for sampling.
#[derive(Debug, Clone)]
pub struct SamplingContext {
    pub context: ContextSequence,
    /// Null context, needed whenever `scale != 1` with a real context.
    pub null: Option<ContextSequence>,
    pub scale: f64,
}

impl SamplingContext {
    pub fn plain(context: ContextSequence) -> Self {
        Self { context, null: None, scale: 1.0 }
    }

    pub fn guided(context: ContextSequence, null: ContextSequence, scale: f64) -> Self {
        Self { context, null: Some(null), scale }
    }

    pub fn unconditional(model: &PoseModel) -> Self {
        Self::plain(crate::conditioning::null_context(model))
    }
}

/// Noise prediction with the `null + w (cond - null)` combination.
pub fn predict_eps<'t, M: EpsilonModel + ?Sized>(
    model: &M,
    tape: &'t Tape,
    z: Var<'t>,
    ts: &[usize],
    sc: &SamplingContext,
) -> Result<Var<'t>> {
    let batch = ts.len();
    if sc.context.is_null || sc.scale == 1.0 {
        return model.predict(tape, z, ts, &sc.context.tiled(batch));
    }
    let null = sc
        .null
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("guidance scale {} needs a null context", sc.scale)))?;
    let e_null = model.predict(tape, z, ts, &null.tiled(batch))?;
    if sc.scale == 0.0 {
        return Ok(e_null);
    }
    let e_cond = model.predict(tape, z, ts, &sc.context.tiled(batch))?;
    Ok(e_null.add(e_cond.sub(e_null).scale(sc.scale)))
}

/// Data term evaluated on the estimated clean pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GuidanceLoss {
    /// Weighted Geman-McClure reprojection error of 24 keypoints; the
    /// skeleton root sits at `translation` in camera coordinates.
    Reprojection { keypoints: Vec<[f64; 2]>, weights: Vec<f64>, intrinsics: CameraIntrinsics, translation: [f64; 3] },
    /// Squared distance of observed joints (root at the origin).
    Sparse3d { joints: Vec<[f64; 3]>, mask: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub rho: f64,
    pub loss: GuidanceLoss,
    #[serde(default)]
    pub shape: Shape,
}

impl GuidanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Validation(format!("guidance scale rho {} must be finite and non-negative", self.rho)));
        }
        match &self.loss {
            GuidanceLoss::Reprojection { keypoints, weights, .. } => {
                if keypoints.len() != JOINT_COUNT || weights.len() != JOINT_COUNT {
                    return Err(Error::Validation("reprojection guidance needs 24 keypoints and weights".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::Validation("keypoint weights must be finite and non-negative".into()));
                }
            }
            GuidanceLoss::Sparse3d { joints, mask } => {
                if joints.len() != JOINT_COUNT || mask.len() != JOINT_COUNT {
                    return Err(Error::Validation("3D guidance needs 24 joints and mask entries".into()));
                }
                if !mask.iter().any(|&m| m) {
                    return Err(Error::Validation("3D guidance needs at least one observed joint".into()));
                }
            }
        }
        Ok(())
    }
}

/// Joint positions `[B * 24, 3]` of a pose batch under per-item shapes.
fn joints_var<'t>(x: Var<'t>, shapes: &[&Shape], tree: &KinematicTree) -> Var<'t> {
    let scale = if shapes.iter().all(|s| s.beta.iter().all(|&b| b == 0.0)) {
        None
    } else {
        let beta: Vec<f64> = shapes.iter().flat_map(|s| s.beta).collect();
        let beta = x.tape().constant(Tensor::from_vec(shapes.len(), beta.len() / shapes.len(), beta));
        Some(bone_scales_var(beta, tree))
    };
    forward_kinematics_var(x, scale, tree).0
}

/// Summed guidance loss of a `[B * 24, 6]` pose batch, one spec per item.
pub fn guidance_loss_var<'t>(x: Var<'t>, specs: &[&GuidanceSpec], tree: &KinematicTree) -> Result<Var<'t>> {
    let tape = x.tape();
    let batch = specs.len();
    let shapes: Vec<&Shape> = specs.iter().map(|s| &s.shape).collect();
    let joints = joints_var(x, &shapes, tree);
    let n = batch * JOINT_COUNT;
    match &specs[0].loss {
        GuidanceLoss::Reprojection { intrinsics, .. } => {
            let mut offset = Vec::with_capacity(n * 3);
            let mut target = Vec::with_capacity(n * 2);
            let mut weight = Vec::with_capacity(n);
            for s in specs {
                let GuidanceLoss::Reprojection { keypoints, weights, translation, intrinsics: k } = &s.loss else {
                    return Err(Error::Validation("mixed guidance kinds in one batch".into()));
                };
                if k != intrinsics {
                    return Err(Error::Validation("one camera per guided batch".into()));
                }
                for j in 0..JOINT_COUNT {
                    offset.extend(translation);
                    target.extend(keypoints[j]);
                    weight.push(weights[j]);
                }
            }
            let cam = joints.add(tape.constant(Tensor::from_vec(n, 3, offset)));
            let uv = project_var(cam, intrinsics)?;
            let r = uv.sub(tape.constant(Tensor::from_vec(n, 2, target)));
            let per_joint = r.geman_mcclure(GEMAN_MCCLURE_SIGMA).sum_cols();
            Ok(per_joint.mul(tape.constant(Tensor::from_vec(n, 1, weight))).sum())
        }
        GuidanceLoss::Sparse3d { .. } => {
            let mut target = Vec::with_capacity(n * 3);
            let mut mask = Vec::with_capacity(n);
            for s in specs {
                let GuidanceLoss::Sparse3d { joints, mask: m } = &s.loss else {
                    return Err(Error::Validation("mixed guidance kinds in one batch".into()));
                };
                for j in 0..JOINT_COUNT {
                    target.extend(joints[j]);
                    mask.push(if m[j] { 1.0 } else { 0.0 });
                }
            }
            let d = joints.sub(tape.constant(Tensor::from_vec(n, 3, target))).square().sum_cols();
            Ok(d.mul(tape.constant(Tensor::from_vec(n, 1, mask))).sum())
        }
    }
}

/// Noise prediction for every item, shifted by the guidance gradient with
/// respect to `z_t` through the clean-pose estimate when `guidance` is set.
fn guided_eps<M: EpsilonModel + ?Sized>(
    model: &M,
    z: &Tensor,
    ts: &[usize],
    sc: &SamplingContext,
    guidance: Option<&[&GuidanceSpec]>,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Tensor> {
    let tape = Tape::new();
    let active = guidance.filter(|g| g.iter().any(|s| s.rho != 0.0));
    let Some(specs) = active else {
        let z = tape.constant(z.clone());
        let eps = predict_eps(model, &tape, z, ts, sc)?;
        tape.check_finite()?;
        return Ok(eps.value().as_ref().clone());
    };
    let zv = tape.var(z.clone());
    let eps = predict_eps(model, &tape, zv, ts, sc)?;
    // Per-item x̂0 = (z - sqrt(1 - ab) eps) / sqrt(ab).
    let mut a = Vec::with_capacity(z.rows());
    let mut c = Vec::with_capacity(z.rows());
    for &t in ts {
        let ab = schedule.alpha_bar[t];
        for _ in 0..JOINT_COUNT {
            a.push(1.0 / ab.sqrt());
            c.push((1.0 - ab).sqrt() / ab.sqrt());
        }
    }
    let a = tape.constant(Tensor::from_vec(z.rows(), 1, a));
    let c = tape.constant(Tensor::from_vec(z.rows(), 1, c));
    let x0 = zv.mul_col(a).sub(eps.mul_col(c));
    let loss = guidance_loss_var(x0, specs, tree)?;
    tape.check_finite()?;
    let grads = tape.backward(loss)?;
    let g = grads.get_or_zeros(zv);
    let mut out = eps.value().as_ref().clone();
    for (b, (&t, spec)) in ts.iter().zip(specs.iter()).enumerate() {
        let k = spec.rho * (1.0 - schedule.alpha_bar[t]).sqrt();
        let rows = b * JOINT_COUNT * 6..(b + 1) * JOINT_COUNT * 6;
        for (o, gi) in out.data_mut()[rows.clone()].iter_mut().zip(&g.data()[rows]) {
            *o += k * gi;
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric { primitive: "guidance" });
    }
    Ok(out)
}

/// Guided noise prediction for a single `[24, 6]` state.
#[allow(clippy::too_many_arguments)]
pub fn dps_epsilon<M: EpsilonModel + ?Sized>(
    model: &M,
    z_t: &Tensor,
    t: usize,
    sc: &SamplingContext,
    guidance: &GuidanceSpec,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Tensor> {
    schedule.check(t)?;
    guidance.validate()?;
    guided_eps(model, z_t, &[t], sc, Some(&[guidance]), schedule, tree)
}

/// Runs σ=0 DDIM through the descending `levels`, the last of which is
/// the target (0 = clean). One batched evaluation per transition.
#[allow(clippy::too_many_arguments)]
pub fn ddim_trajectory<M: EpsilonModel + ?Sized>(
    model: &M,
    z: Tensor,
    levels: &[usize],
    sc: &SamplingContext,
    guidance: Option<&[&GuidanceSpec]>,
    schedule: &DiffusionSchedule,
    tree: &KinematicTree,
) -> Result<Tensor> {
    let batch = z.rows() / JOINT_COUNT;
    if let Some(g) = guidance {
        if g.len() != batch {
            return Err(Error::Validation(format!("{} guidance specs for a batch of {batch}", g.len())));
        }
        g.iter().try_for_each(|s| s.validate())?;
    }
    let mut z = z;
    for w in levels.windows(2) {
        let (t, t_prev) = (w[0], w[1]);
        if t_prev >= t {
            return Err(Error::Validation(format!("levels must descend, got {t} then {t_prev}")));
        }
        schedule.check(t)?;
        let ts = vec![t; batch];
        let eps = guided_eps(model, &z, &ts, sc, guidance, schedule, tree)?;
        z = ddim_transfer(&z, &eps, schedule.alpha_bar[t], schedule.level_alpha_bar(t_prev), 0.0, None);
    }
    Ok(z)
}

/// Reverse σ=0 DDIM from the clean level 0 up to `t_target` in `stride`
/// increments, evaluating the model at the lower level of each pair.
pub fn ddim_invert<M: EpsilonModel + ?Sized>(
    model: &M,
    z0: &Tensor,
    t_target: usize,
    stride: usize,
    sc: &SamplingContext,
    schedule: &DiffusionSchedule,
) -> Result<Tensor> {
    schedule.check(t_target)?;
    let levels = ascending_levels(t_target, stride)?;
    let batch = z0.rows() / JOINT_COUNT;
    let mut z = z0.clone();
    for w in levels.windows(2) {
        let (s, s_next) = (w[0], w[1]);
        let tape = Tape::new();
        let eps = predict_eps(model, &tape, tape.constant(z.clone()), &vec![s; batch], sc)?;
        tape.check_finite()?;
        z = ddim_transfer(&z, &eps.value(), schedule.level_alpha_bar(s), schedule.alpha_bar[s_next], 0.0, None);
    }
    Ok(z)
}

/// `0, stride, 2 stride, ..., t_target`.
pub fn ascending_levels(t_target: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Validation("stride must be positive".into()));
    }
    let mut levels: Vec<usize> = (0..t_target).step_by(stride).collect();
    levels.push(t_target);
    levels.dedup();
    Ok(levels)
}

/// `start, start - stride, ..., > 0` followed by the clean level 0.
pub fn descending_levels(start: usize, stride: usize) -> Result<Vec<usize>> {
    let mut levels = ascending_levels(start, stride)?;
    levels.reverse();
    Ok(levels)
}

/// Sampling levels for `steps` evaluations with stride `T / steps`:
/// `T-1, T-1-stride, ...` then clean.
pub fn sampling_levels(schedule: &DiffusionSchedule, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > schedule.len() {
        return Err(Error::Validation(format!("steps must lie in 1..={}", schedule.len())));
    }
    let stride = schedule.len() / steps;
    let mut levels: Vec<usize> = (0..steps).map(|i| schedule.len() - 1 - i * stride).collect();
    levels.push(0);
    levels.dedup();
    Ok(levels)
}

/// `count` levels linearly spaced from `from` down to `to`, then clean.
pub fn linear_levels(from: usize, to: usize, count: usize) -> Result<Vec<usize>> {
    if count < 2 || to == 0 || to >= from || from - to + 1 < count {
        return Err(Error::Validation(format!("cannot space {count} levels from {from} to {to}")));
    }
    let mut levels: Vec<usize> = (0..count)
        .map(|i| (from as f64 - (from - to) as f64 * i as f64 / (count - 1) as f64).round() as usize)
        .collect();
    levels.push(0);
    Ok(levels)
}

/// Draws `n` poses from pure noise with `steps` DDIM evaluations.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch<M: EpsilonModel + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    sc: &SamplingContext,
    steps: usize,
    guidance: Option<&[&GuidanceSpec]>,
    n: usize,
    stream: &mut RngStream,
    tree: &KinematicTree,
) -> Result<Vec<Pose>> {
    let levels = sampling_levels(schedule, steps)?;
    let z = gauss_sample(stream, &[n * JOINT_COUNT, 6]);
    let x = ddim_trajectory(model, z, &levels, sc, guidance, schedule, tree)?;
    batch_to_poses(&x)?.iter().map(Pose::normalized).collect()
}

pub fn sample<M: EpsilonModel + ?Sized>(
    model: &M,
    schedule: &DiffusionSchedule,
    sc: &SamplingContext,
    steps: usize,
    guidance: Option<&GuidanceSpec>,
    stream: &mut RngStream,
    tree: &KinematicTree,
) -> Result<Pose> {
    let g = guidance.map(|g| [g]);
    let mut poses = sample_batch(model, schedule, sc, steps, g.as_ref().map(|g| &g[..]), 1, stream, tree)?;
    Ok(poses.remove(0))
}

/// Denoising objective `mean_b ||eps_b - pred_b||^2` for a predictor on the
/// tape; `predict` receives the noised batch.
pub fn training_loss_with<'t>(
    tape: &'t Tape,
    z0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    schedule: &DiffusionSchedule,
    predict: impl FnOnce(Var<'t>) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let batch = ts.len();
    if z0.rows() != batch * JOINT_COUNT || z0.cols() != 6 || eps.shape() != z0.shape() {
        return Err(Error::Shape(format!("batch {:?} / noise {:?} for {batch} timesteps", z0.shape(), eps.shape())));
    }
    let mut zt = Vec::with_capacity(z0.len());
    let per_item = JOINT_COUNT * 6;
    for (b, &t) in ts.iter().enumerate() {
        schedule.check(t)?;
        let ab = schedule.alpha_bar[t];
        let range = b * per_item..(b + 1) * per_item;
        for (x, e) in z0.data()[range.clone()].iter().zip(&eps.data()[range]) {
            zt.push(ab.sqrt() * x + (1.0 - ab).sqrt() * e);
        }
    }
    let z = tape.constant(Tensor::from_vec(z0.rows(), 6, zt));
    let pred = predict(z)?;
    Ok(tape.constant(eps.clone()).sub(pred).square().sum().scale(1.0 / batch as f64))
}

/// Timesteps drawn uniformly from `0..T`, one per batch item.
pub fn sample_timesteps(stream: &mut RngStream, batch: usize, schedule: &DiffusionSchedule) -> Vec<usize> {
    (0..batch).map(|_| stream.below(schedule.len())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_recurrence() {
        let s = make_schedule(1000).unwrap();
        assert_eq!(s.beta[0], 1e-4);
        assert!((s.beta[999] - 0.02).abs() < 1e-15);
        assert_eq!(s.alpha_bar[0], 1.0 - 1e-4);
        for t in 1..1000 {
            assert_eq!(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t]);
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
        }
        assert!(make_schedule(0).is_err());
    }

    #[test]
    fn level_lists() {
        let s = make_schedule(1000).unwrap();
        let l = sampling_levels(&s, 20).unwrap();
        assert_eq!(l.len(), 21);
        assert_eq!((l[0], l[19], l[20]), (999, 49, 0));
        assert_eq!(descending_levels(400, 5).unwrap().len(), 81);
        assert_eq!(ascending_levels(50, 2).unwrap().len(), 26);
        let ik = linear_levels(900, 10, 400).unwrap();
        assert_eq!((ik[0], ik[399], ik[400]), (900, 10, 0));
        assert!(ik.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ddim_step_checks_sigma() {
        let s = make_schedule(1000).unwrap();
        let z = Tensor::zeros(&[24, 6]);
        let mut st = RngStream::new(0);
        assert!(ddim_step(&z, 10, 0, &z, 0.5, &mut st, &s).is_err());
        assert!(ddim_step(&z, 10, 10, &z, 0.0, &mut st, &s).is_err());
    }
}
