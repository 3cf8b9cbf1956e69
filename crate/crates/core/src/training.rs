//! Noise-prediction training with Adam, cosine learning-rate decay and
//! classifier-free-guidance context dropout.

use serde::{Deserialize, Serialize};

use crate::conditioning::{Condition, ImageFeatureInput, PreparedCondition, TextInput};
use crate::data::{image_features, PoseRecord, Split};
use crate::denoiser::PoseModel;
use crate::diffusion::{sample_timesteps, training_loss_with, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::numcore::{gauss_sample, RngStream, Tape, Tensor};
use crate::params::{Adam, AdamConfig};
use crate::skeleton::{poses_to_batch, KinematicTree, Pose, JOINT_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Probability that an example's context is replaced by the null context.
    pub cfg_dropout: f64,
    /// Of the conditioned examples, the share that see only the caption,
    /// only the keypoint features, or both.
    pub text_only: f64,
    pub image_only: f64,
    /// Probability of keeping each caption phrase (at least one is kept).
    pub phrase_keep: f64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 3000,
            learning_rate: 1e-3,
            cfg_dropout: 0.1,
            text_only: 0.5,
            image_only: 0.25,
            phrase_keep: 0.5,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("cfg_dropout", self.cfg_dropout)?;
        unit("text_only", self.text_only)?;
        unit("image_only", self.image_only)?;
        unit("phrase_keep", self.phrase_keep)?;
        if self.text_only + self.image_only > 1.0 {
            return Err(Error::Validation("text_only + image_only exceeds 1".into()));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Validation("batch_size and steps must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Validation("learning rate and gradient clip must be positive".into()));
        }
        Ok(())
    }

    /// Cosine decay from the base rate to zero over `steps`.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = step as f64 / self.steps as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// A training pose with the evidence it may be conditioned on.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub pose: Pose,
    pub caption: Option<String>,
    pub image: Option<ImageFeatureInput>,
}

/// Training-split records with their rendered keypoint features.
pub fn training_examples(records: &[PoseRecord], tree: &KinematicTree) -> Result<Vec<TrainingExample>> {
    records
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| {
            Ok(TrainingExample {
                pose: r.pose.clone(),
                caption: r.caption.clone(),
                image: Some(image_features(&r.pose, tree)?),
            })
        })
        .collect()
}

/// Random modality choice, phrase subsampling and context dropout for one example.
pub fn draw_condition(ex: &TrainingExample, config: &TrainConfig, stream: &mut RngStream) -> Result<PreparedCondition> {
    if stream.bernoulli(config.cfg_dropout) {
        return Ok(PreparedCondition::Null);
    }
    let u = stream.uniform();
    let (use_text, use_image) = if u < config.text_only {
        (true, false)
    } else if u < config.text_only + config.image_only {
        (false, true)
    } else {
        (true, true)
    };
    let text = match (&ex.caption, use_text || ex.image.is_none()) {
        (Some(c), true) => {
            let phrases: Vec<&str> = c.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
            let mut kept: Vec<&str> =
                phrases.iter().copied().filter(|_| stream.bernoulli(config.phrase_keep)).collect();
            if kept.is_empty() && !phrases.is_empty() {
                kept.push(phrases[stream.below(phrases.len())]);
            }
            (!kept.is_empty()).then(|| TextInput::new(kept.join(", ")))
        }
        _ => None,
    };
    let image = if use_image || text.is_none() { ex.image.clone() } else { None };
    PreparedCondition::new(&Condition { text, image })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over a window of steps, clamped to the recorded range.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.losses.len());
        let w = &self.losses[from.min(to)..to];
        w.iter().sum::<f64>() / w.len().max(1) as f64
    }
}

/// One optimizer update on a batch; returns the batch loss.
pub fn train_step(
    model: &mut PoseModel,
    opt: &mut Adam,
    batch: &[&TrainingExample],
    conds: &[PreparedCondition],
    schedule: &DiffusionSchedule,
    lr: f64,
    stream: &mut RngStream,
) -> Result<f64> {
    let poses: Vec<Pose> = batch.iter().map(|e| e.pose.clone()).collect();
    let z0 = poses_to_batch(&poses);
    let ts = sample_timesteps(stream, batch.len(), schedule);
    let eps = gauss_sample(stream, &[batch.len() * JOINT_COUNT, 6]);
    let tape = Tape::new();
    let grads = {
        let bp = model.bind(&tape, true);
        let loss = training_loss_with(&tape, &z0, &ts, &eps, schedule, |z| {
            let ctx = crate::conditioning::context_var(model, &bp, conds);
            model.forward(&bp, z, &ts, ctx)
        })?;
        tape.check_finite()?;
        let value = loss.with_value(Tensor::item);
        let g = tape.backward(loss)?;
        (value, bp.gradients(&g))
    };
    opt.step(&mut model.params, &grads.1, lr);
    Ok(grads.0)
}

/// Full training run; `progress` sees `(step, loss)` after every update.
pub fn train(
    model: &mut PoseModel,
    examples: &[TrainingExample],
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Validation("no training examples".into()));
    }
    let mut opt = Adam::new(&model.params, AdamConfig { clip_norm: Some(config.grad_clip), ..Default::default() });
    let root = RngStream::new(seed);
    let mut report = TrainReport::default();
    for step in 0..config.steps {
        let mut stream = root.derive(step as u64);
        let batch: Vec<&TrainingExample> =
            (0..config.batch_size).map(|_| &examples[stream.below(examples.len())]).collect();
        let conds = batch.iter().map(|e| draw_condition(e, config, &mut stream)).collect::<Result<Vec<_>>>()?;
        let loss = train_step(model, &mut opt, &batch, &conds, schedule, config.learning_rate_at(step), &mut stream)?;
        report.losses.push(loss);
        progress(step, loss);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate_at(0), 1e-3);
        assert!((c.learning_rate_at(1500) - 5e-4).abs() < 1e-15);
        assert!(c.learning_rate_at(3000) < 1e-18);
    }

    #[test]
    fn dropout_rate_matches() {
        let ex =
            TrainingExample { pose: Pose::identity(), caption: Some("kneeling, left arm raised".into()), image: None };
        let cfg = TrainConfig::default();
        let mut s = RngStream::new(4);
        let n = 20_000;
        let nulls = (0..n).filter(|_| draw_condition(&ex, &cfg, &mut s).unwrap() == PreparedCondition::Null).count();
        let frac = nulls as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }
}
