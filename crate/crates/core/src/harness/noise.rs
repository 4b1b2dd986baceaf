//! Reproducible Gaussian measurement noise. Every draw is addressed by
//! `(seed, channel, step)`, so a channel's stream does not depend on which
//! other channels are sampled or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Measured channels that can carry noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Speed,
    LateralSpeed,
    YawRate,
    LateralDeviation,
}

impl Channel {
    fn stream(self) -> u64 {
        match self {
            Channel::Speed => 1,
            Channel::LateralSpeed => 2,
            Channel::YawRate => 3,
            Channel::LateralDeviation => 4,
        }
    }
}

/// Counter-based noise source.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
}

/// 32-bit words consumed per step and channel; a standard normal draw never
/// needs more than a handful.
const WORDS_PER_STEP: u128 = 64;

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Standard normal sample for `(channel, step)`.
    pub fn standard(&self, channel: Channel, step: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(channel.stream());
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng.sample(StandardNormal)
    }

    /// `value + sigma * N(0, 1)`; exactly `value` when `sigma == 0`.
    pub fn apply(&self, value: f64, sigma: f64, channel: Channel, step: u64) -> f64 {
        if sigma == 0.0 {
            value
        } else {
            value + sigma * self.standard(channel, step)
        }
    }
}

/// Adds noise of standard deviation `sigma` to a whole stream.
pub fn add_noise(signal: &[f64], sigma: f64, seed: u64, channel: Channel) -> Vec<f64> {
    let src = NoiseSource::new(seed);
    signal
        .iter()
        .enumerate()
        .map(|(k, &v)| src.apply(v, sigma, channel, k as u64))
        .collect()
}
