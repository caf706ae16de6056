use serde::{Deserialize, Serialize};

use crate::real::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Learning rate as a function of the iteration index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Log-linear interpolation from `start` to `end` over `steps`, then held.
    ExpDecay {
        start: f64,
        end: f64,
        steps: u64,
    },
}

impl LrSchedule {
    pub fn at(&self, iteration: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::ExpDecay { start, end, steps } => {
                if steps == 0 {
                    return end;
                }
                let t = (iteration as f64 / steps as f64).min(1.0);
                (start.ln() * (1.0 - t) + end.ln() * t).exp()
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            LrSchedule::Constant { lr } => LrSchedule::Constant { lr: lr * factor },
            LrSchedule::ExpDecay { start, end, steps } => LrSchedule::ExpDecay {
                start: start * factor,
                end: end * factor,
                steps,
            },
        }
    }
}

/// Bias-corrected Adam state for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F = f32> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
    /// Updates refused because the gradient held a NaN or infinity.
    pub skipped: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update; returns `false` and leaves everything untouched if
    /// `grads` is not finite.
    pub fn update(&mut self, params: &mut [F], grads: &[F], lr: f64) -> bool {
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer state does not match parameters"
        );
        assert_eq!(
            grads.len(),
            self.m.len(),
            "gradient does not match parameters"
        );
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.step += 1;
        let b1 = F::of(ADAM_BETA1);
        let b2 = F::of(ADAM_BETA2);
        let c1 = 1.0 - ADAM_BETA1.powi(self.step.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step.min(i32::MAX as u64) as i32);
        let step_size = F::of(lr / c1);
        let c2_sqrt = F::of(c2.sqrt());
        let eps = F::of(ADAM_EPS);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            params[i] -= step_size * self.m[i] / (self.v[i].sqrt() / c2_sqrt + eps);
        }
        true
    }

    /// Keeps the moments of the rows (each `width` wide) where `keep` is true.
    pub fn retain_rows(&mut self, width: usize, keep: &[bool]) {
        for buf in [&mut self.m, &mut self.v] {
            let mut out = Vec::with_capacity(buf.len());
            for (r, k) in keep.iter().enumerate() {
                if *k {
                    out.extend_from_slice(&buf[r * width..(r + 1) * width]);
                }
            }
            *buf = out;
        }
    }

    /// Appends zeroed moments for `extra` new parameters.
    pub fn grow(&mut self, extra: usize) {
        self.m.resize(self.m.len() + extra, F::zero());
        self.v.resize(self.v.len() + extra, F::zero());
    }
}
