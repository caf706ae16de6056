//! Seeded, serialisable random streams.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<F: crate::real::Real>(rng: &mut Rng) -> F {
    F::of(rng.sample::<f64, _>(StandardNormal))
}

pub fn uniform<F: crate::real::Real>(rng: &mut Rng, lo: f64, hi: f64) -> F {
    F::of(rng.random_range(lo..hi))
}

/// Exact generator position: seed, stream and word offset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

pub fn save_state(rng: &Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos(),
    }
}

pub fn restore_state(state: &RngState) -> Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}
