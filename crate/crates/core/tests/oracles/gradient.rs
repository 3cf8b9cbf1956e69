//! Central finite differences against reverse-mode gradients for every
//! differentiable primitive and the composite objectives built from them.

use std::rc::Rc;

use posediff::conditioning::{context_var, Condition, PreparedCondition};
use posediff::denoiser::{DenoiserConfig, PoseModel};
use posediff::diffusion::{
    dps_epsilon, make_schedule, training_loss_with, GuidanceLoss, GuidanceSpec, SamplingContext,
};
use posediff::numcore::{evaluate_with_gradients, gauss_sample, gradients_agree};
use posediff::rotations::sixd_to_matrix_var;
use posediff::skeleton::{
    bone_scales_var, forward_kinematics_var, project_var, CameraIntrinsics, KinematicTree, Shape, JOINT_COUNT,
};
use posediff::{RngStream, Tape, Tensor, Var};

pub const REL_TOL: f64 = 1e-4;
/// Below this gradient magnitude the comparison is absolute.
const SMALL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-7;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct GradientReport {
    pub probes: usize,
    pub failures: Vec<String>,
    pub worst_rel: f64,
}

impl GradientReport {
    fn compare(&mut self, name: &str, analytic: f64, numeric: f64) {
        self.probes += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale >= SMALL {
            self.worst_rel = self.worst_rel.max((analytic - numeric).abs() / scale);
        }
        if !gradients_agree(analytic, numeric, REL_TOL, ABS_TOL, SMALL) {
            self.failures.push(format!("{name}: analytic {analytic:.10e} numeric {numeric:.10e}"));
        }
    }
}

/// Deterministic non-uniform weights so a tensor output becomes a scalar
/// whose gradient exercises every entry differently.
fn weigh<'t>(v: Var<'t>) -> Var<'t> {
    let (r, c) = (v.rows(), v.cols());
    let w: Vec<f64> = (0..r * c).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    v.mul(v.tape().constant(Tensor::from_vec(r, c, w))).sum()
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    f(&tape, &vars).with_value(Tensor::item)
}

/// Probes `per_input` random coordinates of every input.
fn probe<F>(report: &mut GradientReport, name: &str, f: F, inputs: &[Tensor], per_input: usize, stream: &mut RngStream)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let (_, grads) = evaluate_with_gradients(&f, inputs).expect("objective evaluates");
    for (k, x) in inputs.iter().enumerate() {
        for _ in 0..per_input.min(x.len()) {
            let i = stream.below(x.len());
            let h = FD_STEP * x.data()[i].abs().max(1.0);
            let mut moved = inputs.to_vec();
            moved[k].data_mut()[i] = x.data()[i] + h;
            let up = eval(&f, &moved);
            moved[k].data_mut()[i] = x.data()[i] - h;
            let down = eval(&f, &moved);
            report.compare(&format!("{name}[{k}][{i}]"), grads[k].data()[i], (up - down) / (2.0 * h));
        }
    }
}

fn randn(stream: &mut RngStream, r: usize, c: usize) -> Tensor {
    gauss_sample(stream, &[r, c])
}

fn positive(stream: &mut RngStream, r: usize, c: usize) -> Tensor {
    randn(stream, r, c).map(|x| 0.5 + x.abs())
}

fn primitives(rep: &mut GradientReport, s: &mut RngStream) {
    let a = randn(s, 3, 4);
    let b = randn(s, 3, 4);
    let p = positive(s, 3, 4);
    let m = randn(s, 4, 2);
    let row = randn(s, 1, 4);
    let col = positive(s, 3, 1);
    probe(rep, "add", |_, x| weigh(x[0].add(x[1])), &[a.clone(), b.clone()], 2, s);
    probe(rep, "sub", |_, x| weigh(x[0].sub(x[1])), &[a.clone(), b.clone()], 2, s);
    probe(rep, "mul", |_, x| weigh(x[0].mul(x[1])), &[a.clone(), b.clone()], 2, s);
    probe(rep, "div", |_, x| weigh(x[0].div(x[1])), &[a.clone(), p.clone()], 2, s);
    probe(rep, "scale_offset", |_, x| weigh(x[0].scale(-1.7).offset(0.3)), std::slice::from_ref(&a), 2, s);
    probe(rep, "matmul", |_, x| weigh(x[0].matmul(x[1])), &[a.clone(), m.clone()], 2, s);
    probe(rep, "transpose", |_, x| weigh(x[0].transpose()), std::slice::from_ref(&a), 2, s);
    probe(rep, "add_row", |_, x| weigh(x[0].add_row(x[1])), &[a.clone(), row.clone()], 2, s);
    probe(rep, "mul_row", |_, x| weigh(x[0].mul_row(x[1])), &[a.clone(), row.clone()], 2, s);
    probe(rep, "mul_col", |_, x| weigh(x[0].mul_col(x[1])), &[a.clone(), col.clone()], 2, s);
    probe(rep, "div_col", |_, x| weigh(x[0].div_col(x[1])), &[a.clone(), col.clone()], 2, s);
    probe(rep, "tile_rows", |_, x| weigh(x[0].tile_rows(3)), std::slice::from_ref(&a), 2, s);
    probe(rep, "repeat_rows", |_, x| weigh(x[0].repeat_rows(2)), std::slice::from_ref(&a), 2, s);
    probe(rep, "gather_rows", |_, x| weigh(x[0].gather_rows(vec![2, 0, 2, 1])), std::slice::from_ref(&a), 2, s);
    probe(rep, "slice_cols", |_, x| weigh(x[0].slice_cols(1, 3)), std::slice::from_ref(&a), 2, s);
    probe(rep, "concat_cols", |_, x| weigh(Var::concat_cols(&[x[0], x[1]])), &[a.clone(), b.clone()], 2, s);
    probe(rep, "concat_rows", |_, x| weigh(Var::concat_rows(&[x[0], x[1]])), &[a.clone(), b.clone()], 2, s);
    probe(rep, "reshape", |_, x| weigh(x[0].reshape(&[6, 2])), std::slice::from_ref(&a), 2, s);
    probe(rep, "sum_mean", |_, x| x[0].square().sum().add(x[0].mean()), std::slice::from_ref(&a), 2, s);
    probe(rep, "sum_cols", |_, x| weigh(x[0].sum_cols()), std::slice::from_ref(&a), 2, s);
    probe(rep, "square", |_, x| weigh(x[0].square()), std::slice::from_ref(&a), 2, s);
    probe(rep, "sqrt", |_, x| weigh(x[0].sqrt()), std::slice::from_ref(&p), 2, s);
    probe(rep, "exp", |_, x| weigh(x[0].exp()), std::slice::from_ref(&a), 2, s);
    probe(rep, "sin", |_, x| weigh(x[0].sin()), std::slice::from_ref(&a), 2, s);
    probe(rep, "cos", |_, x| weigh(x[0].cos()), std::slice::from_ref(&a), 2, s);
    probe(rep, "tanh", |_, x| weigh(x[0].tanh()), std::slice::from_ref(&a), 2, s);
    probe(rep, "silu", |_, x| weigh(x[0].silu()), std::slice::from_ref(&a), 2, s);
    probe(rep, "atan2", |_, x| weigh(x[0].atan2(x[1])), &[a.clone(), p.clone()], 2, s);
    // Entries kept away from the clamp corners.
    let c = a.map(|v| if (v.abs() - 1.0).abs() < 0.05 { v * 0.5 } else { v });
    probe(rep, "clamp", |_, x| weigh(x[0].clamp(-1.0, 1.0)), &[c], 2, s);
    probe(rep, "layer_norm", |_, x| weigh(x[0].layer_norm(1e-5)), std::slice::from_ref(&a), 3, s);
    let u = randn(s, 4, 3);
    let v = randn(s, 4, 3);
    probe(rep, "cross", |_, x| weigh(x[0].cross(x[1])), &[u.clone(), v.clone()], 2, s);
    let m9 = randn(s, 4, 9);
    let n9 = randn(s, 4, 9);
    probe(rep, "mat3_mul", |_, x| weigh(x[0].mat3_mul(x[1])), &[m9.clone(), n9], 2, s);
    probe(rep, "mat3_vec", |_, x| weigh(x[0].mat3_vec(x[1])), &[m9, u], 2, s);
    let r = randn(s, 5, 2).scale(80.0);
    probe(rep, "geman_mcclure", |_, x| weigh(x[0].geman_mcclure(100.0)), &[r], 3, s);
}

fn attention(rep: &mut GradientReport, s: &mut RngStream) {
    let (batch, nq, nk, d, heads) = (2, 3, 4, 4, 2);
    let q = randn(s, batch * nq, d);
    let k = randn(s, batch * nk, d);
    let v = randn(s, batch * nk, d);
    let bias = randn(s, nq * nk, heads);
    let mask = Rc::new(vec![true, false, true, true, true, true, false, true]);
    probe(
        rep,
        "attention",
        move |_, x| weigh(x[0].attention(x[1], x[2], Some(x[3]), heads, nq, nk, Some(mask.clone()))),
        &[q, k, v, bias],
        3,
        s,
    );
}

fn kinematics(rep: &mut GradientReport, s: &mut RngStream) {
    let tree = KinematicTree::smpl();
    let sixd = randn(s, 3, 6);
    probe(rep, "sixd_to_matrix", |_, x| weigh(sixd_to_matrix_var(x[0])), &[sixd], 4, s);
    let pose = randn(s, 2 * JOINT_COUNT, 6);
    let beta = randn(s, 2, 10).scale(0.3);
    let t = tree.clone();
    probe(
        rep,
        "forward_kinematics",
        move |_, x| weigh(forward_kinematics_var(x[0], Some(bone_scales_var(x[1], &t)), &t).0),
        &[pose, beta],
        6,
        s,
    );
    let pts = randn(s, 5, 3).map(|v| v * 0.5).add(&Tensor::from_vec(5, 3, [0.0, 0.0, 4.0].repeat(5)));
    let k = CameraIntrinsics::default();
    probe(rep, "project", move |_, x| weigh(project_var(x[0], &k).expect("in front of camera")), &[pts], 5, s);
}

fn small_model(tree: &KinematicTree) -> PoseModel {
    let c = DenoiserConfig { latent_dim: 16, blocks: 2, heads: 2, mlp_hidden: 24, ..Default::default() };
    PoseModel::new(c, tree, 11).expect("valid config")
}

/// Gradient of the noise-prediction loss with respect to randomly chosen
/// parameter coordinates, through the context encoder and the denoiser.
fn denoiser_loss(rep: &mut GradientReport, s: &mut RngStream) {
    let tree = KinematicTree::smpl();
    let base = small_model(&tree);
    let schedule = make_schedule(1000).expect("schedule");
    let z0 = randn(s, 2 * JOINT_COUNT, 6);
    let eps = randn(s, 2 * JOINT_COUNT, 6);
    let ts = [17, 640];
    let conds = vec![
        PreparedCondition::new(&Condition::text("kneeling, left arm raised")).expect("caption"),
        PreparedCondition::Null,
    ];
    let loss_of = |model: &PoseModel, grads: bool| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let bp = model.bind(&tape, grads);
        let loss = training_loss_with(&tape, &z0, &ts, &eps, &schedule, |z| {
            model.forward(&bp, z, &ts, context_var(model, &bp, &conds))
        })
        .expect("loss");
        let value = loss.with_value(Tensor::item);
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(loss).expect("backward");
        (value, bp.gradients(&g))
    };
    let (_, grads) = loss_of(&base, true);
    let names: Vec<String> = base.params.names().to_vec();
    for _ in 0..30 {
        let p = s.below(names.len());
        let t = base.params.tensor(p);
        let i = s.below(t.len());
        let h = FD_STEP * t.data()[i].abs().max(1.0);
        let shifted = |delta: f64| {
            let mut m = base.clone();
            m.params.tensor_mut(p).data_mut()[i] += delta;
            loss_of(&m, false).0
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        rep.compare(&format!("denoiser_loss[{}][{i}]", names[p]), grads[p].data()[i], numeric);
    }
}

/// The guided noise minus the plain prediction, divided by
/// `rho * sqrt(1 - ᾱ_t)`, is the gradient of the data loss at x̂0 with
/// respect to `z_t`.
fn dps_gradient(rep: &mut GradientReport, s: &mut RngStream) {
    let tree = KinematicTree::smpl();
    let model = small_model(&tree);
    let schedule = make_schedule(1000).expect("schedule");
    let t = 120;
    let ab = schedule.alpha_bar[t];
    let sc = SamplingContext::unconditional(&model);
    let z = randn(s, JOINT_COUNT, 6);
    let ctx = sc.context.tiled(1);
    let kp: Vec<[f64; 2]> = (0..JOINT_COUNT).map(|j| [480.0 + 3.0 * j as f64, 430.0 + 5.0 * j as f64]).collect();
    let specs = [
        GuidanceSpec {
            rho: 0.5,
            loss: GuidanceLoss::Reprojection {
                keypoints: kp,
                weights: (0..JOINT_COUNT).map(|j| 0.5 + (j % 3) as f64 * 0.25).collect(),
                intrinsics: CameraIntrinsics::default(),
                translation: [0.0, 0.0, 4.0],
            },
            shape: Shape::default(),
        },
        GuidanceSpec {
            rho: 2.0,
            loss: GuidanceLoss::Sparse3d {
                joints: (0..JOINT_COUNT).map(|j| [0.01 * j as f64, -0.02 * j as f64, 0.1]).collect(),
                mask: (0..JOINT_COUNT).map(|j| j % 2 == 0).collect(),
            },
            shape: Shape::default(),
        },
    ];
    for spec in &specs {
        let guided = dps_epsilon(&model, &z, t, &sc, spec, &schedule, &tree).expect("guided");
        let plain = model.denoise_batch(&z, &[t], &ctx).expect("plain");
        let k = spec.rho * (1.0 - ab).sqrt();
        let data_loss = |zz: &Tensor| -> f64 {
            let eps = model.denoise_batch(zz, &[t], &ctx).expect("eps");
            let x0 = zz.zip_map(&eps, |a, e| (a - (1.0 - ab).sqrt() * e) / ab.sqrt());
            let tape = Tape::new();
            posediff::diffusion::guidance_loss_var(tape.constant(x0), &[spec], &tree)
                .expect("loss")
                .with_value(Tensor::item)
        };
        for _ in 0..8 {
            let i = s.below(z.len());
            let h = FD_STEP * z.data()[i].abs().max(1.0);
            let mut zz = z.clone();
            zz.data_mut()[i] += h;
            let up = data_loss(&zz);
            zz.data_mut()[i] -= 2.0 * h;
            let down = data_loss(&zz);
            let analytic = (guided.data()[i] - plain.data()[i]) / k;
            let kind = match spec.loss {
                GuidanceLoss::Reprojection { .. } => "dps_reprojection",
                GuidanceLoss::Sparse3d { .. } => "dps_sparse3d",
            };
            rep.compare(&format!("{kind}[{i}]"), analytic, (up - down) / (2.0 * h));
        }
    }
}

/// Runs every probe family with a fixed seed.
pub fn gradient_oracle() -> GradientReport {
    let mut rep = GradientReport::default();
    let mut s = RngStream::new(2024);
    primitives(&mut rep, &mut s);
    attention(&mut rep, &mut s);
    kinematics(&mut rep, &mut s);
    denoiser_loss(&mut rep, &mut s);
    dps_gradient(&mut rep, &mut s);
    rep
}
