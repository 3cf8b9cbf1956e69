use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Tensor;

/// Counter-based random stream: `(seed, counter)` fully determines every
/// future draw, so streams can be copied, stored and derived without any
/// shared mutable state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream for sub-task `index`.
    pub fn derive(&self, index: u64) -> Self {
        Self::new(mix64(mix64(self.seed ^ 0xA076_1D64_78BD_642F).wrapping_add(index)))
    }

    fn with_rng<T>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> T) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.counter as u128);
        let out = f(&mut rng);
        self.counter = rng.get_word_pos() as u64;
        out
    }

    pub fn uniform(&mut self) -> f64 {
        self.with_rng(|r| r.random::<f64>())
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.with_rng(|r| r.random_range(0..n))
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        self.with_rng(|r| r.sample(StandardNormal))
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        self.with_rng(|r| (0..n).map(|_| r.sample(StandardNormal)).collect())
    }
}

/// I.i.d. standard normal tensor.
pub fn gauss_sample(stream: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), stream.normals(n)).expect("shape and draw count agree")
}
