//! Stage 1: a canonical Gaussian set moved over time by a deformation
//! network, with a learned per-Gaussian lifecycle on opacity and annealed
//! position noise that pushes motion information into the motion features.

mod field;
mod init;
mod train;

pub use field::{DeformConfig, DeformField, DeformOutput, DeformTape};
pub use init::silhouette_points;
pub(crate) use train::{read_adam_groups, write_adam_groups, SettingsMeta};
pub use train::{
    HyperCanonicalScene, NoiseTarget, Stage1Config, Stage1Rates, Stage1Trainer, StepReport,
};

use crate::math::{
    quat_identity, quat_mul, quat_mul_backward, quat_normalize, quat_normalize_backward,
};
use crate::nn::rng::{normal, Rng};
use crate::real::{sigmoid, Real};
use crate::splat::{GaussianSet, Splat3D, Splat3DGrad};

/// Iteration at which the annealing noise reaches zero.
pub const NOISE_ANNEAL_ITERATIONS: u64 = 10_000;
/// Slope applied to the opacity network output before the sigmoid.
pub const LIFECYCLE_SHARPNESS: f64 = 10.0;

/// Standard deviation of the position noise at iteration `i`.
pub fn noise_std(i: u64, noise_scale: f64) -> f64 {
    let progress = (i as f64 / NOISE_ANNEAL_ITERATIONS as f64).min(1.0);
    noise_scale * (1.0 - progress)
}

/// `count × 3` samples of `N(0, 1) · N_s · (1 − min(1, i / 10000))`.
pub fn annealing_noise<F: Real>(i: u64, noise_scale: f64, count: usize, rng: &mut Rng) -> Vec<F> {
    let std = noise_std(i, noise_scale);
    if std == 0.0 {
        return vec![F::zero(); count * 3];
    }
    (0..count * 3)
        .map(|_| F::of(std * normal::<f64>(rng)))
        .collect()
}

/// `ψ = sigmoid(10 · Δo)`.
pub fn lifecycle<F: Real>(delta_o: F) -> F {
    sigmoid(F::of(LIFECYCLE_SHARPNESS) * delta_o)
}

/// Per-Gaussian motion at one timestamp: translation, rotation offset (a full
/// quaternion composed on the right) and opacity multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion<F = f32> {
    /// n × 3
    pub dmu: Vec<F>,
    /// n × 4
    pub dq: Vec<F>,
    /// n
    pub psi: Vec<F>,
}

impl<F: Real> Motion<F> {
    pub fn identity(n: usize) -> Self {
        let mut dq = Vec::with_capacity(4 * n);
        for _ in 0..n {
            dq.extend_from_slice(&quat_identity::<F>());
        }
        Self {
            dmu: vec![F::zero(); 3 * n],
            dq,
            psi: vec![F::one(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }
}

/// Renderer inputs for `set` moved by `motion`: `μ + Δμ`, `normalize(q ⊗ Δq)`, `σ · ψ`.
pub fn apply_motion<F: Real>(set: &GaussianSet<F>, motion: &Motion<F>) -> Vec<Splat3D<F>> {
    (0..set.len())
        .map(|i| {
            let mu = set.mu3(i);
            let q = set.rot4(i);
            let dq = [
                motion.dq[4 * i],
                motion.dq[4 * i + 1],
                motion.dq[4 * i + 2],
                motion.dq[4 * i + 3],
            ];
            Splat3D {
                mu: [
                    mu[0] + motion.dmu[3 * i],
                    mu[1] + motion.dmu[3 * i + 1],
                    mu[2] + motion.dmu[3 * i + 2],
                ],
                rot: quat_normalize(&quat_mul(&q, &dq)),
                log_scale: [
                    set.log_scale[3 * i],
                    set.log_scale[3 * i + 1],
                    set.log_scale[3 * i + 2],
                ],
                color: [set.color[3 * i], set.color[3 * i + 1], set.color[3 * i + 2]],
                opacity: set.opacity(i) * motion.psi[i],
            }
        })
        .collect()
}

/// Adjoint of [`apply_motion`]: gradients for the set (same layout, motion
/// features left at zero) and for the motion.
pub fn apply_motion_backward<F: Real>(
    set: &GaussianSet<F>,
    motion: &Motion<F>,
    grads: &[Splat3DGrad<F>],
) -> (GaussianSet<F>, Motion<F>) {
    let n = set.len();
    let mut gs = GaussianSet {
        mu: vec![F::zero(); 3 * n],
        rot: vec![F::zero(); 4 * n],
        log_scale: vec![F::zero(); 3 * n],
        color: vec![F::zero(); 3 * n],
        opacity_logit: vec![F::zero(); n],
        motion: vec![F::zero(); set.feat_dim * n],
        feat_dim: set.feat_dim,
    };
    let mut gm = Motion {
        dmu: vec![F::zero(); 3 * n],
        dq: vec![F::zero(); 4 * n],
        psi: vec![F::zero(); n],
    };
    for (i, d) in grads.iter().enumerate() {
        for k in 0..3 {
            gs.mu[3 * i + k] = d.mu[k];
            gm.dmu[3 * i + k] = d.mu[k];
            gs.log_scale[3 * i + k] = d.log_scale[k];
            gs.color[3 * i + k] = d.color[k];
        }
        let q = set.rot4(i);
        let dq = [
            motion.dq[4 * i],
            motion.dq[4 * i + 1],
            motion.dq[4 * i + 2],
            motion.dq[4 * i + 3],
        ];
        let prod = quat_mul(&q, &dq);
        let d_prod = quat_normalize_backward(&prod, &d.rot);
        let (d_q, d_dq) = quat_mul_backward(&q, &dq, &d_prod);
        gs.rot[4 * i..4 * i + 4].copy_from_slice(&d_q);
        gm.dq[4 * i..4 * i + 4].copy_from_slice(&d_dq);
        let s = set.opacity(i);
        gs.opacity_logit[i] = d.opacity * motion.psi[i] * s * (F::one() - s);
        gm.psi[i] = d.opacity * s;
    }
    (gs, gm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    #[test]
    fn noise_schedule_values() {
        assert_eq!(noise_std(0, 0.3), 0.3);
        assert_eq!(noise_std(5000, 0.3), 0.15);
        assert_eq!(noise_std(10_000, 0.3), 0.0);
        assert_eq!(noise_std(25_000, 0.3), 0.0);
        let mut rng = seeded(1);
        assert!(annealing_noise::<f32>(3, 0.0, 10, &mut rng)
            .iter()
            .all(|v| *v == 0.0));
        assert!(annealing_noise::<f32>(12_000, 1.0, 10, &mut rng)
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn lifecycle_values() {
        assert_eq!(lifecycle(0.0f64), 0.5);
        assert!((lifecycle(0.5f64) - 0.993_307_149_075_715).abs() < 1e-15);
        assert!((lifecycle(-0.5f64) - (1.0 - lifecycle(0.5f64))).abs() < 1e-15);
    }

    #[test]
    fn identity_motion_keeps_the_canonical_scene() {
        use crate::splat::Gaussian;
        let g = Gaussian::<f64> {
            mu: [0.1, 0.2, 0.3],
            rot: quat_normalize(&[0.9, 0.1, -0.3, 0.2]),
            log_scale: [-1.0, -2.0, -1.5],
            color: [0.2, 0.4, 0.6],
            opacity_logit: 0.7,
            motion_feat: vec![0.0; 2],
        };
        let set = GaussianSet::from_gaussians(2, std::slice::from_ref(&g));
        let s = apply_motion(&set, &Motion::identity(1));
        assert_eq!(s[0], g.to_splat(1.0));
    }
}
