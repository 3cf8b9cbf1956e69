//! Pose-oriented transformer denoiser.
//!
//! Each of the 24 joints is one token. Self-attention logits carry a
//! per-head bias computed from the skeletal hop distance between joints,
//! cross-attention reads the 21-token context, and the head predicts the
//! noise added to every 6D rotation.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::conditioning::{ContextSequence, CONTEXT_TOKENS, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tape, Tensor, Var};
use crate::params::{BoundParams, Init, ParamStore};
use crate::skeleton::{KinematicTree, GROUP_COUNT, JOINT_COUNT};

pub(crate) const LN_EPS: f64 = 1e-5;
const PHI_HIDDEN: usize = 16;
pub(crate) const FUSION_BLOCKS: usize = 2;
pub(crate) const IMAGE_FEATURES: usize = CONTEXT_TOKENS * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Hidden width of every feed-forward sublayer.
    pub mlp_hidden: usize,
    pub group_count: usize,
    pub joint_tokens: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            blocks: 4,
            heads: 4,
            mlp_hidden: 128,
            group_count: GROUP_COUNT,
            joint_tokens: JOINT_COUNT,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.latent_dim == 0 || self.blocks == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return bad(format!("model sizes must be positive: {self:?}"));
        }
        if !self.latent_dim.is_multiple_of(self.heads) {
            return bad(format!("latent_dim {} not divisible by heads {}", self.latent_dim, self.heads));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return bad(format!("latent_dim {} must be even for the timestep encoding", self.latent_dim));
        }
        if self.group_count != GROUP_COUNT {
            return bad(format!("group_count must be {GROUP_COUNT}"));
        }
        if self.joint_tokens != JOINT_COUNT {
            return bad(format!("joint_tokens must be {JOINT_COUNT}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum InitKind {
    Linear(usize),
    Normal(f64),
    Zeros,
    Ones,
}

/// Name, shape and initializer of one learnable tensor.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    init: InitKind,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, init: InitKind) -> ParamSpec {
    ParamSpec { name: name.into(), rows, cols, init }
}

fn push_norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(spec(format!("{prefix}.g"), 1, d, InitKind::Ones));
    out.push(spec(format!("{prefix}.b"), 1, d, InitKind::Zeros));
}

// Key projections carry no bias: a bias on keys shifts every logit of a
// query row equally and would never receive gradient.
fn push_attention(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(spec(format!("{prefix}.wq"), d, d, InitKind::Linear(d)));
    out.push(spec(format!("{prefix}.bq"), 1, d, InitKind::Zeros));
    out.push(spec(format!("{prefix}.wk"), d, d, InitKind::Linear(d)));
    out.push(spec(format!("{prefix}.wv"), d, d, InitKind::Linear(d)));
    out.push(spec(format!("{prefix}.bv"), 1, d, InitKind::Zeros));
    out.push(spec(format!("{prefix}.wo"), d, d, InitKind::Linear(d)));
}

fn push_mlp(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, hidden: usize) {
    out.push(spec(format!("{prefix}.w1"), d, hidden, InitKind::Linear(d)));
    out.push(spec(format!("{prefix}.b1"), 1, hidden, InitKind::Zeros));
    out.push(spec(format!("{prefix}.w2"), hidden, d, InitKind::Linear(hidden)));
    out.push(spec(format!("{prefix}.b2"), 1, d, InitKind::Zeros));
}

/// Every parameter of the denoiser and the context encoder, in storage order.
pub fn param_layout(config: &DenoiserConfig) -> Vec<ParamSpec> {
    let d = config.latent_dim;
    let h = config.heads;
    let hid = config.mlp_hidden;
    let mut out = vec![
        spec("embed.w", 6, d, InitKind::Linear(6)),
        spec("embed.b", 1, d, InitKind::Zeros),
        spec("embed.pos", JOINT_COUNT, d, InitKind::Normal(0.1)),
        spec("embed.group", GROUP_COUNT, d, InitKind::Normal(0.1)),
        spec("time.w1", d, d, InitKind::Linear(d)),
        spec("time.b1", 1, d, InitKind::Zeros),
        spec("time.w2", d, d, InitKind::Linear(d)),
        spec("time.b2", 1, d, InitKind::Zeros),
        spec("phi.w1", 1, PHI_HIDDEN, InitKind::Normal(1.0)),
        spec("phi.b1", 1, PHI_HIDDEN, InitKind::Normal(0.5)),
        // No output bias: softmax ignores a per-head constant.
        spec("phi.w2", PHI_HIDDEN, h, InitKind::Linear(PHI_HIDDEN)),
    ];
    for i in 0..config.blocks {
        let p = format!("blocks.{i}");
        push_norm(&mut out, &format!("{p}.ln1"), d);
        push_attention(&mut out, &format!("{p}.sa"), d);
        push_norm(&mut out, &format!("{p}.ln2"), d);
        push_attention(&mut out, &format!("{p}.ca"), d);
        push_norm(&mut out, &format!("{p}.ln3"), d);
        push_mlp(&mut out, &format!("{p}.mlp"), d, hid);
    }
    push_norm(&mut out, "head.ln", d);
    out.push(spec("head.w", d, 6, InitKind::Normal(0.1 / (d as f64).sqrt())));
    out.push(spec("head.b", 1, 6, InitKind::Zeros));

    out.push(spec("text.table", VOCAB_SIZE, d, InitKind::Normal(0.5)));
    out.push(spec("image.w1", IMAGE_FEATURES, d, InitKind::Linear(IMAGE_FEATURES)));
    out.push(spec("image.b1", 1, d, InitKind::Zeros));
    out.push(spec("image.w2", d, d, InitKind::Linear(d)));
    out.push(spec("image.b2", 1, d, InitKind::Zeros));
    out.push(spec("fusion.cls", 1, d, InitKind::Normal(0.5)));
    for i in 0..FUSION_BLOCKS {
        let p = format!("fusion.{i}");
        push_norm(&mut out, &format!("{p}.ln1"), d);
        push_attention(&mut out, &format!("{p}.attn"), d);
        push_norm(&mut out, &format!("{p}.ln2"), d);
        push_mlp(&mut out, &format!("{p}.mlp"), d, hid);
    }
    push_norm(&mut out, "fusion.ln", d);
    out.push(spec("fusion.proj", d, d, InitKind::Linear(d)));
    out.push(spec("context.queries", CONTEXT_TOKENS, d, InitKind::Normal(0.5)));
    out.push(spec("context.null", 1, d, InitKind::Normal(0.5)));
    out
}

/// Denoiser plus context encoder with their parameters and the skeleton
/// tables the forward pass needs.
#[derive(Debug, Clone)]
pub struct PoseModel {
    pub config: DenoiserConfig,
    pub params: ParamStore,
    groups: Vec<usize>,
    /// Hop distance of every joint pair divided by the maximum, `[576, 1]`.
    distance_input: Tensor,
}

impl PoseModel {
    /// Freshly initialized model.
    pub fn new(config: DenoiserConfig, tree: &KinematicTree, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init { store: &mut params, stream: RngStream::new(seed) };
        for p in param_layout(&config) {
            match p.init {
                InitKind::Linear(fan_in) => init.linear(&p.name, fan_in, p.cols),
                InitKind::Normal(std) => init.normal(&p.name, p.rows, p.cols, std),
                InitKind::Zeros => init.zeros(&p.name, p.rows, p.cols),
                InitKind::Ones => init.ones(&p.name, p.rows, p.cols),
            }
        }
        Ok(Self::assemble(config, params, tree))
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: DenoiserConfig, params: ParamStore, tree: &KinematicTree) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Validation(format!("expected {} parameters, found {}", layout.len(), params.len())));
        }
        for (p, (name, t)) in layout.iter().zip(params.iter()) {
            if p.name != name || t.shape() != [p.rows, p.cols] {
                return Err(Error::Validation(format!(
                    "parameter {name} {:?} does not match expected {} [{}, {}]",
                    t.shape(),
                    p.name,
                    p.rows,
                    p.cols
                )));
            }
            if !t.is_finite() {
                return Err(Error::Validation(format!("parameter {name} holds non-finite values")));
            }
        }
        Ok(Self::assemble(config, params, tree))
    }

    fn assemble(config: DenoiserConfig, params: ParamStore, tree: &KinematicTree) -> Self {
        let groups = (0..JOINT_COUNT).map(|i| tree.joint_group(i)).collect();
        let max = tree.max_distance().max(1) as f64;
        let mut dist = Vec::with_capacity(JOINT_COUNT * JOINT_COUNT);
        for i in 0..JOINT_COUNT {
            for j in 0..JOINT_COUNT {
                dist.push(tree.skeletal_distance(i, j) as f64 / max);
            }
        }
        let distance_input = Tensor::from_vec(JOINT_COUNT * JOINT_COUNT, 1, dist);
        Self { config, params, groups, distance_input }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn bind<'t>(&self, tape: &'t Tape, requires_grad: bool) -> BoundParams<'t, '_> {
        self.params.bind(tape, requires_grad)
    }

    /// Projected 6D inputs plus per-joint and group embeddings, `[B * 24, D]`.
    pub fn embed_inputs<'t>(&self, bp: &BoundParams<'t, '_>, z: Var<'t>) -> Var<'t> {
        let batch = z.rows() / JOINT_COUNT;
        let group_rows = bp.get("embed.group").gather_rows(self.groups.clone());
        let addend = bp.get("embed.pos").add(group_rows).tile_rows(batch);
        linear(bp, z, "embed.w", Some("embed.b")).add(addend)
    }

    /// Sinusoidal encoding of each timestep through a two-layer MLP, `[B, D]`.
    pub fn timestep_embedding<'t>(&self, bp: &BoundParams<'t, '_>, ts: &[usize]) -> Var<'t> {
        let tape = bp.get("time.w1").tape();
        let enc = tape.constant(sinusoidal_encoding(ts, self.config.latent_dim));
        let h = linear(bp, enc, "time.w1", Some("time.b1")).silu();
        linear(bp, h, "time.w2", Some("time.b2"))
    }

    /// Per-head attention bias for every joint pair, `[576, H]`.
    pub fn distance_bias<'t>(&self, bp: &BoundParams<'t, '_>) -> Var<'t> {
        let tape = bp.get("phi.w1").tape();
        let d = tape.constant(self.distance_input.clone());
        d.matmul(bp.get("phi.w1")).add_row(bp.get("phi.b1")).silu().matmul(bp.get("phi.w2"))
    }

    /// Distance-biased multi-head self-attention over joint tokens
    /// (already normalized), including the output projection.
    pub fn pose_attention<'t>(
        &self,
        bp: &BoundParams<'t, '_>,
        block: usize,
        tokens: Var<'t>,
        bias: Var<'t>,
    ) -> Var<'t> {
        attend(
            bp,
            &format!("blocks.{block}.sa"),
            tokens,
            tokens,
            Some(bias),
            self.config.heads,
            JOINT_COUNT,
            JOINT_COUNT,
            None,
        )
    }

    /// Softmax weights of one block's pose attention, `[B, H, 24, 24]`.
    pub fn pose_attention_weights(&self, block: usize, tokens: &Tensor) -> Vec<f64> {
        let tape = Tape::new();
        let bp = self.bind(&tape, false);
        let bias = self.distance_bias(&bp).value();
        let x = tape.constant(tokens.clone());
        let p = format!("blocks.{block}.sa");
        let q = linear(&bp, x, &format!("{p}.wq"), Some(&format!("{p}.bq"))).value();
        let k = linear(&bp, x, &format!("{p}.wk"), None).value();
        let v = linear(&bp, x, &format!("{p}.wv"), Some(&format!("{p}.bv"))).value();
        let shape = crate::numcore::AttnShape::new(
            tokens.rows() / JOINT_COUNT,
            JOINT_COUNT,
            JOINT_COUNT,
            q.cols(),
            self.config.heads,
        );
        crate::numcore::attention_forward(&shape, &q, &k, &v, Some(&bias), None).1
    }

    /// Residual cross-attention from joint tokens to context tokens.
    pub fn cross_attend<'t>(
        &self,
        bp: &BoundParams<'t, '_>,
        block: usize,
        tokens: Var<'t>,
        context: Var<'t>,
    ) -> Result<Var<'t>> {
        if context.cols() != tokens.cols() {
            return Err(Error::Shape(format!(
                "context width {} does not match token width {}",
                context.cols(),
                tokens.cols()
            )));
        }
        let p = format!("blocks.{block}");
        let h = norm(bp, tokens, &format!("{p}.ln2"));
        let a = attend(bp, &format!("{p}.ca"), h, context, None, self.config.heads, JOINT_COUNT, CONTEXT_TOKENS, None);
        Ok(tokens.add(a))
    }

    /// Full forward pass. `z` is `[B * 24, 6]`, `context` is `[B * 21, D]`
    /// without the timestep, which is added here.
    pub fn forward<'t>(&self, bp: &BoundParams<'t, '_>, z: Var<'t>, ts: &[usize], context: Var<'t>) -> Result<Var<'t>> {
        let batch = ts.len();
        if z.cols() != 6 || z.rows() != batch * JOINT_COUNT {
            return Err(Error::Shape(format!("noisy pose batch {:?} does not match {batch} timesteps", z.shape())));
        }
        if context.rows() != batch * CONTEXT_TOKENS || context.cols() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "context {:?}, expected [{}, {}]",
                context.shape(),
                batch * CONTEXT_TOKENS,
                self.config.latent_dim
            )));
        }
        let context = context.add(self.timestep_embedding(bp, ts).repeat_rows(CONTEXT_TOKENS));
        let bias = self.distance_bias(bp);
        let mut x = self.embed_inputs(bp, z);
        for b in 0..self.config.blocks {
            let p = format!("blocks.{b}");
            let h = norm(bp, x, &format!("{p}.ln1"));
            x = x.add(self.pose_attention(bp, b, h, bias));
            x = self.cross_attend(bp, b, x, context)?;
            let h = norm(bp, x, &format!("{p}.ln3"));
            x = x.add(mlp(bp, h, &format!("{p}.mlp")));
        }
        let h = norm(bp, x, "head.ln");
        Ok(linear(bp, h, "head.w", Some("head.b")))
    }

    /// Noise prediction for a batch of noisy poses, outside any tape.
    pub fn denoise_batch(&self, z: &Tensor, ts: &[usize], context: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bp = self.bind(&tape, false);
        let out = self.forward(&bp, tape.constant(z.clone()), ts, tape.constant(context.clone()))?;
        tape.check_finite()?;
        Ok(out.value().as_ref().clone())
    }

    /// Noise prediction for a single `[24, 6]` noisy pose.
    pub fn denoise(&self, z: &Tensor, t: usize, context: &ContextSequence) -> Result<Tensor> {
        self.denoise_batch(z, &[t], &context.tokens)
    }
}

/// `[B, D]` sinusoidal features: `sin(t w_i)` then `cos(t w_i)`.
pub fn sinusoidal_encoding(ts: &[usize], d: usize) -> Tensor {
    let half = d / 2;
    let mut out = Vec::with_capacity(ts.len() * d);
    for &t in ts {
        let row_start = out.len();
        out.resize(row_start + d, 0.0);
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            out[row_start + i] = (t as f64 * freq).sin();
            out[row_start + half + i] = (t as f64 * freq).cos();
        }
    }
    Tensor::from_vec(ts.len(), d, out)
}

pub(crate) fn linear<'t>(bp: &BoundParams<'t, '_>, x: Var<'t>, w: &str, b: Option<&str>) -> Var<'t> {
    let y = x.matmul(bp.get(w));
    match b {
        Some(b) => y.add_row(bp.get(b)),
        None => y,
    }
}

pub(crate) fn norm<'t>(bp: &BoundParams<'t, '_>, x: Var<'t>, prefix: &str) -> Var<'t> {
    x.layer_norm(LN_EPS).mul_row(bp.get(&format!("{prefix}.g"))).add_row(bp.get(&format!("{prefix}.b")))
}

pub(crate) fn mlp<'t>(bp: &BoundParams<'t, '_>, x: Var<'t>, prefix: &str) -> Var<'t> {
    let h = linear(bp, x, &format!("{prefix}.w1"), Some(&format!("{prefix}.b1"))).silu();
    linear(bp, h, &format!("{prefix}.w2"), Some(&format!("{prefix}.b2")))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<'t>(
    bp: &BoundParams<'t, '_>,
    prefix: &str,
    queries: Var<'t>,
    keys: Var<'t>,
    bias: Option<Var<'t>>,
    heads: usize,
    nq: usize,
    nk: usize,
    key_mask: Option<Rc<Vec<bool>>>,
) -> Var<'t> {
    let q = linear(bp, queries, &format!("{prefix}.wq"), Some(&format!("{prefix}.bq")));
    let k = linear(bp, keys, &format!("{prefix}.wk"), None);
    let v = linear(bp, keys, &format!("{prefix}.wv"), Some(&format!("{prefix}.bv")));
    q.attention(k, v, bias, heads, nq, nk, key_mask).matmul(bp.get(&format!("{prefix}.wo")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DenoiserConfig {
        DenoiserConfig { latent_dim: 16, blocks: 2, heads: 2, mlp_hidden: 24, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(DenoiserConfig::default().validate().is_ok());
        assert!(DenoiserConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(DenoiserConfig { group_count: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn output_shape_and_determinism() {
        let tree = KinematicTree::smpl();
        let model = PoseModel::new(small(), &tree, 3).unwrap();
        let z = Tensor::from_vec(48, 6, RngStream::new(1).normals(288));
        let ctx = Tensor::zeros(&[42, 16]);
        let a = model.denoise_batch(&z, &[10, 500], &ctx).unwrap();
        let b = model.denoise_batch(&z, &[10, 500], &ctx).unwrap();
        assert_eq!(a.shape(), &[48, 6]);
        assert_eq!(a, b);
    }

    #[test]
    fn batch_items_are_independent() {
        let tree = KinematicTree::smpl();
        let model = PoseModel::new(small(), &tree, 3).unwrap();
        let z = Tensor::from_vec(48, 6, RngStream::new(1).normals(288));
        let ctx = Tensor::from_vec(42, 16, RngStream::new(2).normals(42 * 16));
        let both = model.denoise_batch(&z, &[10, 500], &ctx).unwrap();
        let second = model.denoise_batch(&z.slice_rows(24, 48), &[500], &ctx.slice_rows(21, 42)).unwrap();
        assert!(both.slice_rows(24, 48).max_abs_diff(&second) < 1e-12);
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let tree = KinematicTree::smpl();
        let model = PoseModel::new(small(), &tree, 3).unwrap();
        let other = DenoiserConfig { latent_dim: 32, ..small() };
        assert!(PoseModel::from_params(other, model.params.clone(), &tree).is_err());
        assert!(PoseModel::from_params(small(), model.params, &tree).is_ok());
    }

    #[test]
    fn sinusoid_at_zero() {
        let e = sinusoidal_encoding(&[0], 8);
        assert_eq!(e.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
