//! Forward process, DDIM stepping, inversion and guidance behaviour.

use posediff::conditioning::{encode_condition, null_context, Condition};
use posediff::denoiser::{DenoiserConfig, PoseModel};
use posediff::diffusion::{
    ascending_levels, ddim_invert, ddim_step, dps_epsilon, estimate_x0, make_schedule, predict_eps, q_sample,
    sample_batch, training_loss_with, CountingModel, EpsilonModel, GuidanceLoss, GuidanceSpec, SamplingContext,
};
use posediff::numcore::gauss_sample;
use posediff::skeleton::{batch_to_poses, forward_kinematics, KinematicTree, Shape, JOINT_COUNT};
use posediff::{RngStream, Tape, Tensor, Var};

fn model() -> PoseModel {
    let c = DenoiserConfig { latent_dim: 16, blocks: 2, heads: 2, mlp_hidden: 24, ..Default::default() };
    PoseModel::new(c, &KinematicTree::smpl(), 21).unwrap()
}

/// `ε̂ = a z`, whose DDIM recurrences have closed forms.
struct Linear(f64);

impl EpsilonModel for Linear {
    fn predict<'t>(&self, _: &'t Tape, z: Var<'t>, _: &[usize], _: &Tensor) -> posediff::Result<Var<'t>> {
        Ok(z.scale(self.0))
    }
}

#[test]
fn schedule_is_strictly_decreasing() {
    let s = make_schedule(1000).unwrap();
    assert_eq!(s.alpha_bar[0], 1.0 - 1e-4);
    assert!(s.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
    assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    assert!(s.alpha_bar[999] < 1e-4);
}

#[test]
fn q_sample_examples_and_variance() {
    let s = make_schedule(1000).unwrap();
    let mut rng = RngStream::new(1);
    let z0 = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
    let zero = Tensor::zeros(&[JOINT_COUNT, 6]);
    let scaled = q_sample(&z0, 300, &zero, &s).unwrap();
    assert!(scaled.max_abs_diff(&z0.map(|x| s.alpha_bar[300].sqrt() * x)) < 1e-15);
    let eps = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
    let near = q_sample(&z0, 0, &eps, &s).unwrap();
    let bound = (1.0 - s.alpha_bar[0]).sqrt() * eps.data().iter().fold(0.0f64, |m, e| m.max(e.abs())) + 1e-4;
    assert!(near.max_abs_diff(&z0) <= bound);

    // Variance of one coordinate over 10^4 noise draws.
    let t = 400;
    let n = 10_000;
    let draws: Vec<f64> =
        (0..n).map(|_| q_sample(&z0, t, &gauss_sample(&mut rng, &[JOINT_COUNT, 6]), &s).unwrap().get(3, 2)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let want = 1.0 - s.alpha_bar[t];
    assert!((var - want).abs() < 0.05 * want, "variance {var} vs {want}");
}

#[test]
fn training_loss_with_oracle_and_zero_predictors() {
    let s = make_schedule(1000).unwrap();
    let mut rng = RngStream::new(2);
    let tape = Tape::new();
    let z0 = gauss_sample(&mut rng, &[2 * JOINT_COUNT, 6]);
    let eps = gauss_sample(&mut rng, &[2 * JOINT_COUNT, 6]);
    let perfect = training_loss_with(&tape, &z0, &[10, 700], &eps, &s, |_| Ok(tape.constant(eps.clone()))).unwrap();
    assert_eq!(perfect.with_value(Tensor::item), 0.0);

    let batch = 1000;
    let z0 = gauss_sample(&mut rng, &[batch * JOINT_COUNT, 6]);
    let eps = gauss_sample(&mut rng, &[batch * JOINT_COUNT, 6]);
    let ts: Vec<usize> = (0..batch).map(|i| i % 1000).collect();
    let zero = Tensor::zeros(&[batch * JOINT_COUNT, 6]);
    let loss = training_loss_with(&tape, &z0, &ts, &eps, &s, |_| Ok(tape.constant(zero.clone()))).unwrap();
    let v = loss.with_value(Tensor::item);
    assert!((v - 144.0).abs() < 0.05 * 144.0, "loss {v}");
}

#[test]
fn estimate_x0_at_t0_with_zero_noise() {
    let s = make_schedule(1000).unwrap();
    let z = gauss_sample(&mut RngStream::new(3), &[JOINT_COUNT, 6]);
    let x0 = estimate_x0(&z, 0, &Tensor::zeros(&[JOINT_COUNT, 6]), &s).unwrap();
    assert!(x0.max_abs_diff(&z.map(|v| v / s.alpha_bar[0].sqrt())) < 1e-15);
}

#[test]
fn ddim_step_determinism_and_stochastic_variance() {
    let s = make_schedule(1000).unwrap();
    let mut rng = RngStream::new(4);
    let z = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
    let eps = gauss_sample(&mut rng, &[JOINT_COUNT, 6]);
    let a = ddim_step(&z, 500, 450, &eps, 0.0, &mut rng, &s).unwrap();
    let b = ddim_step(&z, 500, 450, &eps, 0.0, &mut rng, &s).unwrap();
    assert_eq!(a, b);
    let sigma = 0.5 * (1.0 - s.alpha_bar[450]).sqrt();
    let n = 1000;
    let draws: Vec<f64> =
        (0..n).map(|_| ddim_step(&z, 500, 450, &eps, sigma, &mut rng, &s).unwrap().get(0, 0)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(var > 0.8 * sigma * sigma && var < 1.2 * sigma * sigma, "variance {var}");
    assert!(ddim_step(&z, 500, 450, &eps, 2.0, &mut rng, &s).is_err());
    assert!(ddim_step(&z, 500, 500, &eps, 0.0, &mut rng, &s).is_err());
}

#[test]
fn inversion_to_zero_is_identity() {
    let m = model();
    let s = make_schedule(1000).unwrap();
    let z = gauss_sample(&mut RngStream::new(5), &[JOINT_COUNT, 6]);
    let sc = SamplingContext::unconditional(&m);
    assert_eq!(ddim_invert(&m, &z, 0, 2, &sc, &s).unwrap(), z);
}

#[test]
fn linear_model_inversion_matches_closed_form() {
    let m = model();
    let s = make_schedule(1000).unwrap();
    let sc = SamplingContext::unconditional(&m);
    let a = 0.3;
    let z0 = gauss_sample(&mut RngStream::new(6), &[JOINT_COUNT, 6]);
    let got = ddim_invert(&Linear(a), &z0, 50, 2, &sc, &s).unwrap();
    // Each transfer multiplies by sqrt(ab_to) (1 - sqrt(1 - ab_from) a) / sqrt(ab_from) + sqrt(1 - ab_to) a.
    let mut factor = 1.0;
    for w in ascending_levels(50, 2).unwrap().windows(2) {
        let from = s.level_alpha_bar(w[0]);
        let to = s.alpha_bar[w[1]];
        factor *= to.sqrt() * (1.0 - (1.0 - from).sqrt() * a) / from.sqrt() + (1.0 - to).sqrt() * a;
    }
    assert!(got.max_abs_diff(&z0.map(|v| factor * v)) < 1e-8);
}

#[test]
fn consistent_observation_leaves_noise_unchanged() {
    let m = model();
    let tree = KinematicTree::smpl();
    let s = make_schedule(1000).unwrap();
    let sc = SamplingContext::unconditional(&m);
    let t = 200;
    let z = gauss_sample(&mut RngStream::new(7), &[JOINT_COUNT, 6]);
    let tape = Tape::new();
    let eps = predict_eps(&m, &tape, tape.constant(z.clone()), &[t], &sc).unwrap().value().as_ref().clone();
    let x0 = estimate_x0(&z, t, &eps, &s).unwrap();
    let pose = batch_to_poses(&x0).unwrap().remove(0);
    let joints = forward_kinematics(&pose, &Shape::default(), &tree).unwrap();
    let spec = GuidanceSpec {
        rho: 1.0,
        loss: GuidanceLoss::Sparse3d {
            joints: joints.iter().map(|p| [p.x, p.y, p.z]).collect(),
            mask: vec![true; JOINT_COUNT],
        },
        shape: Shape::default(),
    };
    let guided = dps_epsilon(&m, &z, t, &sc, &spec, &s, &tree).unwrap();
    assert!(guided.max_abs_diff(&eps) < 1e-10);
}

#[test]
fn sampling_counts_and_cfg_algebra() {
    let m = model();
    let tree = KinematicTree::smpl();
    let s = make_schedule(1000).unwrap();
    let counting = CountingModel::new(&m);
    let uncond = SamplingContext::unconditional(&m);
    let a = sample_batch(&counting, &s, &uncond, 20, None, 3, &mut RngStream::new(8), &tree).unwrap();
    assert_eq!(counting.calls(), 20);
    let b = sample_batch(&m, &s, &uncond, 20, None, 3, &mut RngStream::new(8), &tree).unwrap();
    assert_eq!(a, b);

    let ctx = encode_condition(&m, &Condition::text("kneeling")).unwrap();
    let w0 = SamplingContext::guided(ctx.clone(), null_context(&m), 0.0);
    let c = sample_batch(&m, &s, &w0, 20, None, 3, &mut RngStream::new(8), &tree).unwrap();
    assert_eq!(a, c);
    let w2 = SamplingContext::guided(ctx, null_context(&m), 2.0);
    let counting = CountingModel::new(&m);
    let d = sample_batch(&counting, &s, &w2, 20, None, 3, &mut RngStream::new(8), &tree).unwrap();
    assert_eq!(counting.calls(), 40);
    assert_ne!(a, d);
}
