use serde::{Deserialize, Serialize};

use super::{lifecycle, Motion, LIFECYCLE_SHARPNESS};
use crate::error::{Error, Result};
use crate::nn::rng::Rng;
use crate::nn::{
    positional_encoding, positional_encoding_backward, Mlp, MlpConfig, MlpTape, PosEncConfig,
};
use crate::real::Real;

/// Architecture of the deformation network D and the opacity network D_o.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformConfig {
    /// Width of the motion feature m.
    pub feat_dim: usize,
    pub posenc: PosEncConfig,
    pub deform_depth: usize,
    pub deform_width: usize,
    pub opacity_depth: usize,
    pub opacity_width: usize,
    /// Initial bias of the opacity head, so that ψ starts near sigmoid(10 · bias).
    pub opacity_bias_init: f64,
    /// When false, ψ is fixed at 1 and D_o is never evaluated.
    pub lifecycle: bool,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            feat_dim: 8,
            posenc: PosEncConfig::default(),
            deform_depth: 8,
            deform_width: 128,
            opacity_depth: 4,
            opacity_width: 64,
            opacity_bias_init: 0.3,
            lifecycle: true,
        }
    }
}

impl DeformConfig {
    /// Width of `[γ(μ), m, γ(t)]`.
    pub fn input_dim(&self) -> usize {
        6 * self.posenc.position_freqs + self.feat_dim + 2 * self.posenc.time_freqs
    }

    pub fn deform_mlp(&self) -> MlpConfig {
        MlpConfig {
            input: self.input_dim(),
            hidden: self.deform_width,
            depth: self.deform_depth,
            output: 7,
            skip_at: (self.deform_depth > 1).then_some(self.deform_depth / 2),
        }
    }

    pub fn opacity_mlp(&self) -> MlpConfig {
        MlpConfig {
            input: self.input_dim(),
            hidden: self.opacity_width,
            depth: self.opacity_depth,
            output: 1,
            skip_at: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.posenc.position_freqs == 0 || self.posenc.time_freqs == 0 {
            return Err(Error::Config(
                "positional encoding needs at least one frequency".into(),
            ));
        }
        if self.deform_width == 0 && self.deform_depth > 0 {
            return Err(Error::Config(
                "deformation network width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The networks D (Δμ, Δq) and D_o (lifecycle logit).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformField<F = f32> {
    pub config: DeformConfig,
    pub deform: Mlp<F>,
    pub opacity: Mlp<F>,
}

/// Raw network outputs for a batch, plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct DeformTape<F> {
    rows: usize,
    mu: Vec<F>,
    deform: MlpTape<F>,
    opacity: Option<MlpTape<F>>,
    /// Δo per row, before the lifecycle sigmoid.
    pub delta_o: Vec<F>,
}

/// Batch evaluation result.
#[derive(Clone, Debug)]
pub struct DeformOutput<F> {
    pub motion: Motion<F>,
    pub tape: DeformTape<F>,
}

impl<F: Real> DeformField<F> {
    /// Glorot hidden layers, zero translation/rotation head, opacity head
    /// with zero weights and the configured bias.
    pub fn new(config: DeformConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let deform = Mlp::new(config.deform_mlp(), true, rng);
        let mut opacity = Mlp::new(config.opacity_mlp(), true, rng);
        let (_, bias) = opacity.head_ranges();
        opacity.params[bias.start] = F::of(config.opacity_bias_init);
        Ok(Self {
            config,
            deform,
            opacity,
        })
    }

    pub fn from_params(config: DeformConfig, deform: Vec<F>, opacity: Vec<F>) -> Result<Self> {
        config.validate()?;
        let deform = Mlp::from_params(config.deform_mlp(), deform)?;
        let opacity = Mlp::from_params(config.opacity_mlp(), opacity)?;
        Ok(Self {
            config,
            deform,
            opacity,
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.config.feat_dim
    }

    /// `[γ(μ), m, γ(t)]` for each row.
    pub fn encode(&self, mu: &[F], motion: &[F], t: f64) -> Vec<F> {
        let rows = mu.len() / 3;
        let lx = self.config.posenc.position_freqs;
        let lt = self.config.posenc.time_freqs;
        let d = self.config.feat_dim;
        let width = self.config.input_dim();
        let mut time_enc = vec![F::zero(); 2 * lt];
        positional_encoding(&[F::of(t)], lt, &mut time_enc);
        let mut x = vec![F::zero(); rows * width];
        for r in 0..rows {
            let row = &mut x[r * width..(r + 1) * width];
            positional_encoding(&mu[3 * r..3 * r + 3], lx, &mut row[..6 * lx]);
            row[6 * lx..6 * lx + d].copy_from_slice(&motion[r * d..(r + 1) * d]);
            row[6 * lx + d..].copy_from_slice(&time_enc);
        }
        x
    }

    /// Evaluates both networks for `mu` (n × 3) and `motion` (n × d) at time `t`.
    pub fn forward(&self, mu: &[F], motion: &[F], t: f64) -> Result<DeformOutput<F>> {
        let rows = mu.len() / 3;
        if mu.len() != rows * 3 || motion.len() != rows * self.config.feat_dim {
            return Err(Error::Shape(
                "deformation inputs disagree on the row count".into(),
            ));
        }
        let x = self.encode(mu, motion, t);
        let (out, deform_tape) = self.deform.forward(&x, rows)?;
        let mut m = Motion::identity(rows);
        for r in 0..rows {
            for k in 0..3 {
                m.dmu[3 * r + k] = out[7 * r + k];
            }
            for k in 0..4 {
                m.dq[4 * r + k] += out[7 * r + 3 + k];
            }
        }
        let (opacity_tape, delta_o) = if self.config.lifecycle {
            let (o, tape) = self.opacity.forward(&x, rows)?;
            for r in 0..rows {
                m.psi[r] = lifecycle(o[r]);
            }
            (Some(tape), o)
        } else {
            (None, Vec::new())
        };
        Ok(DeformOutput {
            motion: m,
            tape: DeformTape {
                rows,
                mu: mu.to_vec(),
                deform: deform_tape,
                opacity: opacity_tape,
                delta_o,
            },
        })
    }

    /// Lifecycle only (ψ per row); all ones when the lifecycle is disabled.
    pub fn lifecycle_only(&self, mu: &[F], motion: &[F], t: f64) -> Result<Vec<F>> {
        let rows = mu.len() / 3;
        if !self.config.lifecycle {
            return Ok(vec![F::one(); rows]);
        }
        let x = self.encode(mu, motion, t);
        Ok(self
            .opacity
            .infer(&x, rows)?
            .into_iter()
            .map(lifecycle)
            .collect())
    }

    /// Accumulates network gradients and returns `(∂L/∂μ, ∂L/∂m)` for the inputs.
    pub fn backward(
        &self,
        out: &DeformOutput<F>,
        d_motion: &Motion<F>,
        d_deform: &mut [F],
        d_opacity: &mut [F],
    ) -> Result<(Vec<F>, Vec<F>)> {
        let tape = &out.tape;
        let rows = tape.rows;
        let mut d_out = vec![F::zero(); rows * 7];
        for r in 0..rows {
            for k in 0..3 {
                d_out[7 * r + k] = d_motion.dmu[3 * r + k];
            }
            for k in 0..4 {
                d_out[7 * r + 3 + k] = d_motion.dq[4 * r + k];
            }
        }
        let mut dx = self.deform.backward(&tape.deform, &d_out, d_deform)?;
        if let Some(op_tape) = &tape.opacity {
            let k = F::of(LIFECYCLE_SHARPNESS);
            let d_o: Vec<F> = (0..rows)
                .map(|r| {
                    let psi = out.motion.psi[r];
                    d_motion.psi[r] * k * psi * (F::one() - psi)
                })
                .collect();
            let dx_o = self.opacity.backward(op_tape, &d_o, d_opacity)?;
            for (a, b) in dx.iter_mut().zip(&dx_o) {
                *a += *b;
            }
        }
        let lx = self.config.posenc.position_freqs;
        let d = self.config.feat_dim;
        let width = self.config.input_dim();
        let mut d_mu = vec![F::zero(); rows * 3];
        let mut d_feat = vec![F::zero(); rows * d];
        for r in 0..rows {
            let row = &dx[r * width..(r + 1) * width];
            positional_encoding_backward(
                &tape.mu[3 * r..3 * r + 3],
                lx,
                &row[..6 * lx],
                &mut d_mu[3 * r..3 * r + 3],
            );
            d_feat[r * d..(r + 1) * d].copy_from_slice(&row[6 * lx..6 * lx + d]);
        }
        Ok((d_mu, d_feat))
    }

    pub fn cast<G: Real>(&self) -> DeformField<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::of(x.as_f64())).collect::<Vec<G>>();
        DeformField::from_params(
            self.config.clone(),
            c(&self.deform.params),
            c(&self.opacity.params),
        )
        .expect("same configuration")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_identity;
    use crate::nn::rng::seeded;

    fn small() -> DeformConfig {
        DeformConfig {
            feat_dim: 3,
            posenc: PosEncConfig {
                position_freqs: 3,
                time_freqs: 2,
            },
            deform_depth: 3,
            deform_width: 8,
            opacity_depth: 2,
            opacity_width: 6,
            ..Default::default()
        }
    }

    #[test]
    fn zero_heads_give_identity_motion() {
        let mut rng = seeded(2);
        let f = DeformField::<f64>::new(small(), &mut rng).unwrap();
        let out = f
            .forward(&[0.1, 0.2, 0.3, -0.5, 0.0, 0.9], &[0.5; 6], 0.4)
            .unwrap();
        assert!(out.motion.dmu.iter().all(|v| *v == 0.0));
        assert_eq!(&out.motion.dq[..4], &quat_identity::<f64>());
        assert!((out.motion.psi[0] - lifecycle(0.3)).abs() < 1e-15);
    }

    #[test]
    fn same_input_same_output() {
        let mut rng = seeded(4);
        let mut f = DeformField::<f64>::new(small(), &mut rng).unwrap();
        for v in f.deform.params.iter_mut() {
            *v += 0.01;
        }
        let a = f
            .forward(
                &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3],
                &[0.5, 0.1, 0.2, 0.5, 0.1, 0.2],
                0.7,
            )
            .unwrap();
        assert_eq!(a.motion.dmu[..3], a.motion.dmu[3..]);
        assert_eq!(a.motion.dq[..4], a.motion.dq[4..]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(9);
        let mut f = DeformField::<f64>::new(small(), &mut rng).unwrap();
        let mut rng2 = seeded(10);
        for v in f
            .deform
            .params
            .iter_mut()
            .chain(f.opacity.params.iter_mut())
        {
            *v += crate::nn::rng::uniform::<f64>(&mut rng2, -0.2, 0.2);
        }
        let mu = [0.1, -0.2, 0.33, 0.4, 0.05, -0.7];
        let m = [0.3, -0.1, 0.2, 0.0, 0.5, -0.4];
        let t = 0.35;
        let w: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let loss = |f: &DeformField<f64>, mu: &[f64], m: &[f64]| {
            let o = f.forward(mu, m, t).unwrap().motion;
            let mut s = 0.0;
            for r in 0..2 {
                for k in 0..3 {
                    s += w[8 * r + k] * o.dmu[3 * r + k];
                }
                for k in 0..4 {
                    s += w[8 * r + 3 + k] * o.dq[4 * r + k];
                }
                s += w[8 * r + 7] * o.psi[r];
            }
            s
        };
        let out = f.forward(&mu, &m, t).unwrap();
        let mut dm = Motion::identity(2);
        for r in 0..2 {
            for k in 0..3 {
                dm.dmu[3 * r + k] = w[8 * r + k];
            }
            for k in 0..4 {
                dm.dq[4 * r + k] = w[8 * r + 3 + k];
            }
            dm.psi[r] = w[8 * r + 7];
        }
        let mut gd = vec![0.0; f.deform.num_params()];
        let mut go = vec![0.0; f.opacity.num_params()];
        let (dmu, dfeat) = f.backward(&out, &dm, &mut gd, &mut go).unwrap();
        let h = 1e-6;
        let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-6 * fd.abs().max(1.0);
        for k in 0..6 {
            let (mut a, mut b) = (mu, mu);
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&f, &a, &m) - loss(&f, &b, &m)) / (2.0 * h);
            assert!(close(fd, dmu[k]), "mu {k}: {fd} vs {}", dmu[k]);
            let (mut a, mut b) = (m, m);
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&f, &mu, &a) - loss(&f, &mu, &b)) / (2.0 * h);
            assert!(close(fd, dfeat[k]), "m {k}");
        }
        for k in (0..gd.len()).step_by(5) {
            let (mut a, mut b) = (f.clone(), f.clone());
            a.deform.params[k] += h;
            b.deform.params[k] -= h;
            let fd = (loss(&a, &mu, &m) - loss(&b, &mu, &m)) / (2.0 * h);
            assert!(close(fd, gd[k]), "D {k}");
        }
        for k in (0..go.len()).step_by(3) {
            let (mut a, mut b) = (f.clone(), f.clone());
            a.opacity.params[k] += h;
            b.opacity.params[k] -= h;
            let fd = (loss(&a, &mu, &m) - loss(&b, &mu, &m)) / (2.0 * h);
            assert!(close(fd, go[k]), "D_o {k}");
        }
    }
}
