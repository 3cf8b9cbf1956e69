//! Closed-form identities of the forward process and σ=0 DDIM.

use posediff::denoiser::{DenoiserConfig, PoseModel};
use posediff::diffusion::{
    ddim_step, dps_epsilon, estimate_x0, make_schedule, predict_eps, q_sample, GuidanceLoss, GuidanceSpec,
    SamplingContext,
};
use posediff::numcore::gauss_sample;
use posediff::skeleton::{CameraIntrinsics, KinematicTree, JOINT_COUNT};
use posediff::{RngStream, Tape, Tensor};

pub const INVERSION_TOL: f64 = 1e-10;

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `α_t = 1 - β_t` and `ᾱ_t = ᾱ_{t-1} α_t`, compared bit for bit.
pub fn recurrence_is_exact() -> Result<(), String> {
    let s = make_schedule(1000).map_err(|e| e.to_string())?;
    let mut acc = 1.0;
    for t in 0..s.len() {
        if s.alpha[t] != 1.0 - s.beta[t] {
            return Err(format!("alpha[{t}] != 1 - beta[{t}]"));
        }
        acc *= s.alpha[t];
        if s.alpha_bar[t] != acc {
            return Err(format!("alpha_bar[{t}] = {} but the product is {acc}", s.alpha_bar[t]));
        }
    }
    Ok(())
}

/// Worst error of `estimate_x0(q_sample(z0, t, ε), t, ε)` over every t.
pub fn x0_inversion_error(seed: u64) -> Result<f64, String> {
    let s = make_schedule(1000).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(seed);
    let mut worst = 0.0f64;
    for t in 0..s.len() {
        let z0 = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
        let eps = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
        let zt = q_sample(&z0, t, &eps, &s).map_err(|e| e.to_string())?;
        let x0 = estimate_x0(&zt, t, &eps, &s).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&x0, &z0));
    }
    Ok(worst)
}

/// Worst error of a σ=0 DDIM step fed the true noise: the step from t to
/// the clean level must return z0, and to any lower level `s` must land on
/// `q_sample(z0, s, ε)`.
pub fn ddim_oracle_error(seed: u64) -> Result<f64, String> {
    let s = make_schedule(1000).map_err(|e| e.to_string())?;
    let mut rng = RngStream::new(seed);
    let mut unused = RngStream::new(0);
    let mut worst = 0.0f64;
    for t in 1..s.len() {
        let z0 = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
        let eps = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
        let zt = q_sample(&z0, t, &eps, &s).map_err(|e| e.to_string())?;
        let clean = ddim_step(&zt, t, 0, &eps, 0.0, &mut unused, &s).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(&clean, &z0));
        if t >= 2 {
            let lower = 1 + rng.below(t - 1);
            let mid = ddim_step(&zt, t, lower, &eps, 0.0, &mut unused, &s).map_err(|e| e.to_string())?;
            let want = q_sample(&z0, lower, &eps, &s).map_err(|e| e.to_string())?;
            worst = worst.max(max_diff(&mid, &want));
        }
    }
    Ok(worst)
}

/// `dps_epsilon` with ρ=0 against the plain noise prediction, for both
/// guidance losses, compared bit for bit.
pub fn zero_rho_is_bit_identical(seed: u64) -> Result<(), String> {
    let tree = KinematicTree::smpl();
    let c = DenoiserConfig { latent_dim: 16, blocks: 2, heads: 2, mlp_hidden: 24, ..Default::default() };
    let model = PoseModel::new(c, &tree, seed).map_err(|e| e.to_string())?;
    let s = make_schedule(1000).map_err(|e| e.to_string())?;
    let sc = SamplingContext::unconditional(&model);
    let mut rng = RngStream::new(seed);
    let losses = [
        GuidanceLoss::Reprojection {
            keypoints: (0..JOINT_COUNT).map(|j| [500.0 + j as f64, 480.0 - 2.0 * j as f64]).collect(),
            weights: vec![1.0; JOINT_COUNT],
            intrinsics: CameraIntrinsics::default(),
            translation: [0.0, 0.0, 4.0],
        },
        GuidanceLoss::Sparse3d {
            joints: (0..JOINT_COUNT).map(|j| [0.01 * j as f64, -0.02 * j as f64, 0.0]).collect(),
            mask: (0..JOINT_COUNT).map(|j| j % 3 == 0).collect(),
        },
    ];
    for t in [0, 1, 50, 500, 999] {
        let z = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
        let tape = Tape::new();
        let plain = predict_eps(&model, &tape, tape.constant(z.clone()), &[t], &sc).map_err(|e| e.to_string())?;
        let plain = plain.value().as_ref().clone();
        for loss in &losses {
            let spec = GuidanceSpec { rho: 0.0, loss: loss.clone(), shape: Default::default() };
            let guided = dps_epsilon(&model, &z, t, &sc, &spec, &s, &tree).map_err(|e| e.to_string())?;
            let same = guided.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || guided.shape() != plain.shape() {
                return Err(format!("rho = 0 output differs from the unguided prediction at t = {t}"));
            }
        }
    }
    Ok(())
}
