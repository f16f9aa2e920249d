//! He-normal weight initialization: N(0, 2/fan_in). Biases start at zero,
//! batch-norm scale at one, shift at zero.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn he_normal_stddev(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

pub fn he_normal_fill(buf: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, he_normal_stddev(fan_in)).unwrap();
    for v in buf.iter_mut() {
        *v = normal.sample(rng);
    }
}
