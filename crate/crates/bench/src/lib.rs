//! Shared fixtures for the kernel benchmarks.

use posediff::conditioning::{null_context, ContextSequence};
use posediff::data::{synth_corpus, CorpusSpec};
use posediff::denoiser::{DenoiserConfig, PoseModel};
use posediff::numcore::gauss_sample;
use posediff::skeleton::{KinematicTree, JOINT_COUNT};
use posediff::training::{training_examples, TrainingExample};
use posediff::{RngStream, Tensor};

pub struct Fixture {
    pub tree: KinematicTree,
    pub model: PoseModel,
    pub examples: Vec<TrainingExample>,
    pub null: ContextSequence,
}

/// Default-size model and the default synthetic corpus.
pub fn fixture() -> Fixture {
    let tree = KinematicTree::smpl();
    let model = PoseModel::new(DenoiserConfig::default(), &tree, 0).expect("default config is valid");
    let records = synth_corpus(&CorpusSpec::default(), &tree).expect("default corpus");
    let examples = training_examples(&records, &tree).expect("examples");
    let null = null_context(&model);
    Fixture { tree, model, examples, null }
}

/// Standard normal latent batch of `batch` poses.
pub fn latent_batch(batch: usize, seed: u64) -> Tensor {
    gauss_sample(&mut RngStream::new(seed), &[batch * JOINT_COUNT, 6])
}
