use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Number of frequencies per input group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosEncConfig {
    pub position_freqs: usize,
    pub time_freqs: usize,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        Self {
            position_freqs: 10,
            time_freqs: 6,
        }
    }
}

/// `(sin(2ˡπx), cos(2ˡπx))` for `l = 0..levels`, component by component.
/// Writes `2 · levels · x.len()` values into `out`.
pub fn positional_encoding<F: Real>(x: &[F], levels: usize, out: &mut [F]) {
    assert_eq!(
        out.len(),
        2 * levels * x.len(),
        "positional encoding output length"
    );
    let pi = F::of(std::f64::consts::PI);
    let mut k = 0;
    for &xi in x {
        let mut freq = pi;
        for _ in 0..levels {
            let a = freq * xi;
            out[k] = a.sin();
            out[k + 1] = a.cos();
            k += 2;
            freq = freq + freq;
        }
    }
}

/// Accumulates `∂L/∂x` into `dx` given `∂L/∂γ(x)`.
pub fn positional_encoding_backward<F: Real>(x: &[F], levels: usize, d_out: &[F], dx: &mut [F]) {
    assert_eq!(d_out.len(), 2 * levels * x.len());
    let pi = F::of(std::f64::consts::PI);
    let mut k = 0;
    for (i, &xi) in x.iter().enumerate() {
        let mut freq = pi;
        for _ in 0..levels {
            let a = freq * xi;
            dx[i] += freq * (a.cos() * d_out[k] - a.sin() * d_out[k + 1]);
            k += 2;
            freq = freq + freq;
        }
    }
}
