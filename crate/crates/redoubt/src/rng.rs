//! Seeded randomness with checkpointable state.
//!
//! Every stochastic decision in a run (init draws, epoch shuffles, attacker
//! noise, attack pixel choices) comes from a ChaCha8 stream addressed by
//! (run seed, stream id), so phases and campaigns are independent and any
//! of them can be resumed from a saved (seed, stream, word position)
//! triple.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const STREAM_INIT: u64 = 0;
pub const STREAM_PHASE1: u64 = 1;
pub const STREAM_PHASE2: u64 = 2;
pub const STREAM_CLASSIFIER: u64 = 3;
pub const STREAM_BASELINE: u64 = 4;
pub const STREAM_BASELINE_CLASSIFIER: u64 = 5;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable ChaCha8 position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, hex-encoded for JSON friendliness.
    pub word_pos: String,
}

pub fn save_state(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed(),
        stream: rng.get_stream(),
        word_pos: format!("{:x}", rng.get_word_pos()),
    }
}

pub fn restore_state(st: &RngState) -> crate::error::Result<ChaCha8Rng> {
    let mut rng = ChaCha8Rng::from_seed(st.seed);
    rng.set_stream(st.stream);
    let pos = u128::from_str_radix(&st.word_pos, 16)
        .map_err(|e| crate::error::Error::Checkpoint(format!("bad rng word_pos: {e}")))?;
    rng.set_word_pos(pos);
    Ok(rng)
}

/// Uniform [0,1) tensor of the given dims.
pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize]) -> crate::tensor::Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>()).collect();
    crate::tensor::Tensor::from_vec(dims, data).expect("dims")
}
