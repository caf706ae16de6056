//! The fixed set of differentiable building blocks the three training stages
//! need: dense networks, frequency and hash encodings, and Adam.
//!
//! Every block follows the same convention: `forward` returns the output plus
//! a tape, `backward` consumes the tape and accumulates into a flat gradient
//! buffer laid out like the block's parameter vector.

mod adam;
mod hashgrid;
mod mlp;
mod posenc;
pub mod rng;

pub use adam::{Adam, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use hashgrid::{HashGrid, HashGridConfig, HashTape};
pub use mlp::{Mlp, MlpConfig, MlpTape};
pub use posenc::{positional_encoding, positional_encoding_backward, PosEncConfig};
