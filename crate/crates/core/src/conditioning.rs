//! Context encoder: toy text and keypoint-feature encoders, a small fusion
//! transformer with a learned CLS token, and the fixed-length context.
//!
//! Caption words are lowercased, split on whitespace, stripped of leading and
//! trailing ASCII punctuation and hashed with 64-bit FNV-1a modulo
//! [`VOCAB_SIZE`]; the hash is part of the checkpoint format.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::denoiser::{attend, linear, mlp, norm, PoseModel, FUSION_BLOCKS, IMAGE_FEATURES};
use crate::error::{Error, Result};
use crate::numcore::{RngStream, Tape, Tensor, Var};
use crate::params::BoundParams;

/// Tokens in every context sequence.
pub const CONTEXT_TOKENS: usize = 21;
/// Rows of the hashed word-embedding table.
pub const VOCAB_SIZE: usize = 4096;
/// Pixel frame the image keypoints are normalized against.
pub const IMAGE_SIZE: f64 = 1000.0;

/// Fixed-length conditioning tokens, `[21, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextSequence {
    pub tokens: Tensor,
    pub is_null: bool,
}

impl ContextSequence {
    /// The tokens repeated for `batch` items, `[batch * 21, D]`.
    pub fn tiled(&self, batch: usize) -> Tensor {
        let parts: Vec<&Tensor> = std::iter::repeat_n(&self.tokens, batch).collect();
        Tensor::concat_rows(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextInput {
    pub caption: String,
}

impl TextInput {
    pub fn new(caption: impl Into<String>) -> Self {
        Self { caption: caption.into() }
    }
}

/// 2D keypoints of joints 1..=21 in pixels with detector confidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatureInput {
    pub keypoints2d: Vec<[f64; 2]>,
    pub confidence: Vec<f64>,
}

impl ImageFeatureInput {
    pub fn validate(&self) -> Result<()> {
        if self.keypoints2d.len() != CONTEXT_TOKENS || self.confidence.len() != CONTEXT_TOKENS {
            return Err(Error::Validation(format!(
                "image features need {CONTEXT_TOKENS} keypoints and confidences, got {} and {}",
                self.keypoints2d.len(),
                self.confidence.len()
            )));
        }
        if self.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Validation("confidences must lie in [0, 1]".into()));
        }
        if self.keypoints2d.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("keypoints must be finite".into()));
        }
        Ok(())
    }

    /// `(u, v, c)` per keypoint mapped to `[-1, 1]`.
    pub fn normalized(&self) -> [f64; IMAGE_FEATURES] {
        let half = IMAGE_SIZE / 2.0;
        let mut out = [0.0; IMAGE_FEATURES];
        for (i, (p, c)) in self.keypoints2d.iter().zip(&self.confidence).enumerate() {
            out[3 * i] = ((p[0] - half) / half).clamp(-1.0, 1.0);
            out[3 * i + 1] = ((p[1] - half) / half).clamp(-1.0, 1.0);
            out[3 * i + 2] = 2.0 * c - 1.0;
        }
        out
    }
}

/// Optional caption and image evidence for one pose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub text: Option<TextInput>,
    pub image: Option<ImageFeatureInput>,
}

impl Condition {
    pub fn text(caption: impl Into<String>) -> Self {
        Self { text: Some(TextInput::new(caption)), image: None }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_none() && self.image.is_none()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Embedding-table rows of a caption's words.
pub fn caption_rows(caption: &str) -> Result<Vec<usize>> {
    let rows: Vec<usize> =
        tokenize(caption).iter().map(|w| (fnv1a64(w.as_bytes()) % VOCAB_SIZE as u64) as usize).collect();
    if rows.is_empty() {
        return Err(Error::Validation("caption has no words".into()));
    }
    Ok(rows)
}

/// A condition reduced to what the encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedCondition {
    Null,
    Evidence { text: Option<Vec<usize>>, image: Option<[f64; IMAGE_FEATURES]> },
}

impl PreparedCondition {
    pub fn new(cond: &Condition) -> Result<Self> {
        if cond.is_empty() {
            return Ok(Self::Null);
        }
        let text = cond.text.as_ref().map(|t| caption_rows(&t.caption)).transpose()?;
        let image = match &cond.image {
            Some(f) => {
                f.validate()?;
                Some(f.normalized())
            }
            None => None,
        };
        Ok(Self::Evidence { text, image })
    }
}

/// Mean-pooled word embeddings, one row per caption.
pub fn encode_text_var<'t>(bp: &BoundParams<'t, '_>, captions: &[&[usize]]) -> Var<'t> {
    let table = bp.get("text.table");
    let total: usize = captions.iter().map(|c| c.len()).sum();
    let mut pool = vec![0.0; captions.len() * total];
    let mut idx = Vec::with_capacity(total);
    for (b, rows) in captions.iter().enumerate() {
        for &r in rows.iter() {
            pool[b * total + idx.len()] = 1.0 / rows.len() as f64;
            idx.push(r);
        }
    }
    let pool = table.tape().constant(Tensor::from_vec(captions.len(), total, pool));
    pool.matmul(table.gather_rows(idx))
}

/// Keypoint MLP over normalized features, one row per input.
pub fn encode_image_var<'t>(bp: &BoundParams<'t, '_>, feats: &[&[f64; IMAGE_FEATURES]]) -> Var<'t> {
    let data = feats.iter().flat_map(|f| f.iter().copied()).collect();
    let x = bp.get("image.w1").tape().constant(Tensor::from_vec(feats.len(), IMAGE_FEATURES, data));
    let h = linear(bp, x, "image.w1", Some("image.b1")).silu();
    linear(bp, h, "image.w2", Some("image.b2"))
}

/// Runs `[CLS, c_I, c_T]` through the fusion encoder and expands the CLS
/// output into 21 tokens with learned per-token queries. `image` and `text`
/// are `[B, D]`; rows flagged absent are masked out of attention.
pub fn fuse_var<'t>(
    model: &PoseModel,
    bp: &BoundParams<'t, '_>,
    image: Var<'t>,
    text: Var<'t>,
    has_image: &[bool],
    has_text: &[bool],
) -> Var<'t> {
    let batch = has_image.len();
    let cls = bp.get("fusion.cls").tile_rows(batch);
    // Interleave rows so item b owns rows 3b..3b+3.
    let order = (0..batch).flat_map(|b| [b, batch + b, 2 * batch + b]).collect();
    let mut x = Var::concat_rows(&[cls, image, text]).gather_rows(order);
    let mask: Vec<bool> = (0..batch).flat_map(|b| [true, has_image[b], has_text[b]]).collect();
    let mask = Rc::new(mask);
    for i in 0..FUSION_BLOCKS {
        let p = format!("fusion.{i}");
        let h = norm(bp, x, &format!("{p}.ln1"));
        x = x.add(attend(bp, &format!("{p}.attn"), h, h, None, model.config.heads, 3, 3, Some(mask.clone())));
        let h = norm(bp, x, &format!("{p}.ln2"));
        x = x.add(mlp(bp, h, &format!("{p}.mlp")));
    }
    let cls_out = x.gather_rows((0..batch).map(|b| 3 * b).collect());
    let summary = norm(bp, cls_out, "fusion.ln").matmul(bp.get("fusion.proj"));
    summary.repeat_rows(CONTEXT_TOKENS).add(bp.get("context.queries").tile_rows(batch))
}

/// Context tokens for a batch of prepared conditions, `[B * 21, D]`.
pub fn context_var<'t>(model: &PoseModel, bp: &BoundParams<'t, '_>, conds: &[PreparedCondition]) -> Var<'t> {
    let tape = bp.get("context.null").tape();
    let d = model.latent_dim();
    let live: Vec<usize> = (0..conds.len()).filter(|&i| conds[i] != PreparedCondition::Null).collect();
    let null_rows = bp.get("context.null").gather_rows(vec![0; CONTEXT_TOKENS]);
    if live.is_empty() {
        return null_rows.tile_rows(conds.len());
    }
    let mut texts: Vec<&[usize]> = Vec::new();
    let mut images: Vec<&[f64; IMAGE_FEATURES]> = Vec::new();
    let (mut text_idx, mut image_idx) = (Vec::new(), Vec::new());
    let (mut has_text, mut has_image) = (Vec::new(), Vec::new());
    for &i in &live {
        let PreparedCondition::Evidence { text, image } = &conds[i] else { unreachable!() };
        has_text.push(text.is_some());
        has_image.push(image.is_some());
        text_idx.push(text.as_ref().map_or(0, |t| {
            texts.push(t);
            texts.len()
        }));
        image_idx.push(image.as_ref().map_or(0, |f| {
            images.push(f);
            images.len()
        }));
    }
    // Row 0 is a zero placeholder for absent modalities.
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    let text_rows = if texts.is_empty() {
        zero.gather_rows(vec![0; live.len()])
    } else {
        Var::concat_rows(&[zero, encode_text_var(bp, &texts)]).gather_rows(text_idx)
    };
    let image_rows = if images.is_empty() {
        zero.gather_rows(vec![0; live.len()])
    } else {
        Var::concat_rows(&[zero, encode_image_var(bp, &images)]).gather_rows(image_idx)
    };
    let fused = fuse_var(model, bp, image_rows, text_rows, &has_image, &has_text);
    if live.len() == conds.len() {
        return fused;
    }
    // Stitch live items and null items back into batch order.
    let null_base = live.len() * CONTEXT_TOKENS;
    let mut slot = 0;
    let mut idx = Vec::with_capacity(conds.len() * CONTEXT_TOKENS);
    for c in conds {
        if *c == PreparedCondition::Null {
            idx.extend(null_base..null_base + CONTEXT_TOKENS);
        } else {
            idx.extend(slot * CONTEXT_TOKENS..(slot + 1) * CONTEXT_TOKENS);
            slot += 1;
        }
    }
    Var::concat_rows(&[fused, null_rows]).gather_rows(idx)
}

pub fn encode_text(model: &PoseModel, text: &TextInput) -> Result<Tensor> {
    let rows = caption_rows(&text.caption)?;
    let tape = Tape::new();
    let bp = model.bind(&tape, false);
    Ok(encode_text_var(&bp, &[&rows]).value().as_ref().clone())
}

pub fn encode_image(model: &PoseModel, feat: &ImageFeatureInput) -> Result<Tensor> {
    feat.validate()?;
    let tape = Tape::new();
    let bp = model.bind(&tape, false);
    Ok(encode_image_var(&bp, &[&feat.normalized()]).value().as_ref().clone())
}

/// Context from already encoded modalities. The timestep is added later by
/// the denoiser, so the result is reusable across sampling steps.
pub fn fuse(model: &PoseModel, c_image: Option<&Tensor>, c_text: Option<&Tensor>) -> Result<ContextSequence> {
    if c_image.is_none() && c_text.is_none() {
        return Err(Error::UseNullContext);
    }
    let d = model.latent_dim();
    for c in [c_image, c_text].into_iter().flatten() {
        if c.shape() != [1, d] {
            return Err(Error::Shape(format!("modality vector {:?}, expected [1, {d}]", c.shape())));
        }
    }
    let tape = Tape::new();
    let bp = model.bind(&tape, false);
    let zero = Tensor::zeros(&[1, d]);
    let image = tape.constant(c_image.unwrap_or(&zero).clone());
    let text = tape.constant(c_text.unwrap_or(&zero).clone());
    let out = fuse_var(model, &bp, image, text, &[c_image.is_some()], &[c_text.is_some()]);
    Ok(ContextSequence { tokens: out.value().as_ref().clone(), is_null: false })
}

pub fn null_context(model: &PoseModel) -> ContextSequence {
    let null = model.params.get("context.null");
    let parts: Vec<&Tensor> = std::iter::repeat_n(null, CONTEXT_TOKENS).collect();
    ContextSequence { tokens: Tensor::concat_rows(&parts), is_null: true }
}

/// Encodes a condition; an empty condition maps to the null context.
pub fn encode_condition(model: &PoseModel, cond: &Condition) -> Result<ContextSequence> {
    let prepared = PreparedCondition::new(cond)?;
    if prepared == PreparedCondition::Null {
        return Ok(null_context(model));
    }
    let tape = Tape::new();
    let bp = model.bind(&tape, false);
    let out = context_var(model, &bp, &[prepared]);
    Ok(ContextSequence { tokens: out.value().as_ref().clone(), is_null: false })
}

/// Replaces the context with the null context with probability `p`.
pub fn cfg_dropout(
    model: &PoseModel,
    context: ContextSequence,
    p: f64,
    stream: &mut RngStream,
) -> Result<ContextSequence> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Validation(format!("dropout probability {p} outside [0, 1]")));
    }
    Ok(if stream.bernoulli(p) { null_context(model) } else { context })
}
