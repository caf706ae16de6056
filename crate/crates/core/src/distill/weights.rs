use serde::{Deserialize, Serialize};

use super::blend::BlendWeights;
use crate::error::{Error, Result};
use crate::nn::rng::Rng;
use crate::nn::{HashGrid, HashGridConfig, HashTape, Mlp, MlpConfig, MlpTape};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightFieldConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub hidden: usize,
    pub depth: usize,
    /// Key points each Gaussian blends.
    pub n_near: usize,
}

impl Default for WeightFieldConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            growth: 1.5,
            features_per_level: 2,
            log2_table_size: 14,
            hidden: 64,
            depth: 2,
            n_near: 4,
        }
    }
}

impl WeightFieldConfig {
    pub fn grid(&self, bbox_min: [f64; 3], bbox_max: [f64; 3]) -> HashGridConfig {
        HashGridConfig {
            levels: self.levels,
            base_resolution: self.base_resolution,
            growth: self.growth,
            features_per_level: self.features_per_level,
            log2_table_size: self.log2_table_size,
            bbox_min,
            bbox_max,
        }
    }

    pub fn mlp(&self) -> MlpConfig {
        MlpConfig {
            input: self.levels * self.features_per_level,
            hidden: self.hidden,
            depth: self.depth,
            output: 2 * self.n_near,
            skip_at: None,
        }
    }
}

/// Canonical position → hash features → small MLP → two sets of `n_near`
/// logits, softmaxed separately into translation and rotation weights.
/// The weights do not depend on time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightField<F = f32> {
    pub config: WeightFieldConfig,
    pub grid: HashGrid<F>,
    pub mlp: Mlp<F>,
}

#[derive(Clone, Debug)]
pub struct WeightTape<F> {
    grid: HashTape<F>,
    mlp: MlpTape<F>,
}

fn softmax_rows<F: Real>(
    logits: &[F],
    rows: usize,
    width: usize,
    offset: usize,
    stride: usize,
) -> Vec<F> {
    let mut out = vec![F::zero(); rows * width];
    for r in 0..rows {
        let z = &logits[r * stride + offset..r * stride + offset + width];
        let max = z.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (o, v) in out[r * width..(r + 1) * width].iter_mut().zip(z) {
            *o = (*v - max).exp();
            sum += *o;
        }
        for o in &mut out[r * width..(r + 1) * width] {
            *o /= sum;
        }
    }
    out
}

impl<F: Real> WeightField<F> {
    /// Small random hash tables and a zero output layer, so every Gaussian
    /// starts with uniform weights.
    pub fn new(
        config: WeightFieldConfig,
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        rng: &mut Rng,
    ) -> Result<Self> {
        if config.n_near == 0 {
            return Err(Error::Config("N_near must be positive".into()));
        }
        let grid = HashGrid::new(config.grid(bbox_min, bbox_max), rng)?;
        let mlp = Mlp::new(config.mlp(), true, rng);
        Ok(Self { config, grid, mlp })
    }

    pub fn from_params(
        config: WeightFieldConfig,
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        grid: Vec<F>,
        mlp: Vec<F>,
    ) -> Result<Self> {
        let grid = HashGrid::from_params(config.grid(bbox_min, bbox_max), grid)?;
        let mlp = Mlp::from_params(config.mlp(), mlp)?;
        Ok(Self { config, grid, mlp })
    }

    pub fn n_near(&self) -> usize {
        self.config.n_near
    }

    /// Weights for canonical centres `mu` (n × 3).
    pub fn forward(&self, mu: &[F]) -> Result<(BlendWeights<F>, WeightTape<F>)> {
        let rows = mu.len() / 3;
        let nn = self.config.n_near;
        let (feat, grid) = self.grid.encode(mu, rows)?;
        let (logits, mlp) = self.mlp.forward(&feat, rows)?;
        let w = BlendWeights {
            translation: softmax_rows(&logits, rows, nn, 0, 2 * nn),
            rotation: softmax_rows(&logits, rows, nn, nn, 2 * nn),
            n_near: nn,
        };
        Ok((w, WeightTape { grid, mlp }))
    }

    pub fn infer(&self, mu: &[F]) -> Result<BlendWeights<F>> {
        Ok(self.forward(mu)?.0)
    }

    /// Accumulates table and network gradients for weight gradients `d`.
    pub fn backward(
        &self,
        tape: &WeightTape<F>,
        weights: &BlendWeights<F>,
        d: &BlendWeights<F>,
        d_grid: &mut [F],
        d_mlp: &mut [F],
    ) -> Result<()> {
        let nn = self.config.n_near;
        let rows = weights.translation.len() / nn;
        let mut d_logits = vec![F::zero(); rows * 2 * nn];
        for r in 0..rows {
            for (half, (w, g)) in [
                (&weights.translation, &d.translation),
                (&weights.rotation, &d.rotation),
            ]
            .into_iter()
            .enumerate()
            {
                let w = &w[r * nn..(r + 1) * nn];
                let g = &g[r * nn..(r + 1) * nn];
                let dot = w.iter().zip(g).fold(F::zero(), |s, (a, b)| s + *a * *b);
                for j in 0..nn {
                    d_logits[r * 2 * nn + half * nn + j] = w[j] * (g[j] - dot);
                }
            }
        }
        let d_feat = self.mlp.backward(&tape.mlp, &d_logits, d_mlp)?;
        self.grid.backward(&tape.grid, &d_feat, d_grid)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    fn small() -> WeightFieldConfig {
        WeightFieldConfig {
            levels: 3,
            log2_table_size: 8,
            hidden: 8,
            n_near: 3,
            ..Default::default()
        }
    }

    #[test]
    fn starts_uniform_and_sums_to_one() {
        let f = WeightField::<f64>::new(small(), [-1.0; 3], [1.0; 3], &mut seeded(2)).unwrap();
        let w = f.infer(&[0.1, 0.2, 0.3, -0.9, 0.5, 0.0]).unwrap();
        for v in w.translation.iter().chain(&w.rotation) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(5);
        let mut f = WeightField::<f64>::new(small(), [-1.0; 3], [1.0; 3], &mut rng).unwrap();
        for v in &mut f.grid.params {
            *v *= 1e3;
        }
        for v in &mut f.mlp.params {
            *v += crate::nn::rng::uniform::<f64>(&mut rng, -0.3, 0.3);
        }
        let mu = [0.13, -0.41, 0.77, -0.52, 0.08, 0.31];
        let coef: Vec<f64> = (0..12).map(|i| ((i * 5 % 7) as f64 - 3.0) / 3.0).collect();
        let loss = |f: &WeightField<f64>| {
            let w = f.infer(&mu).unwrap();
            w.translation
                .iter()
                .chain(&w.rotation)
                .zip(&coef)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (w, tape) = f.forward(&mu).unwrap();
        let d = BlendWeights {
            translation: coef[..6].to_vec(),
            rotation: coef[6..].to_vec(),
            n_near: 3,
        };
        let mut dg = vec![0.0; f.grid.num_params()];
        let mut dm = vec![0.0; f.mlp.num_params()];
        f.backward(&tape, &w, &d, &mut dg, &mut dm).unwrap();
        let h = 1e-6;
        for idx in (0..f.mlp.num_params()).step_by(7) {
            let mut p = f.clone();
            p.mlp.params[idx] += h;
            let mut m = f.clone();
            m.mlp.params[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(
                (fd - dm[idx]).abs() < 1e-6 * (1.0 + fd.abs()),
                "mlp {idx}: {fd} vs {}",
                dm[idx]
            );
        }
        let touched: Vec<usize> = (0..dg.len()).filter(|&i| dg[i] != 0.0).take(20).collect();
        assert!(!touched.is_empty());
        for idx in touched {
            let mut p = f.clone();
            p.grid.params[idx] += h;
            let mut m = f.clone();
            m.grid.params[idx] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!(
                (fd - dg[idx]).abs() < 1e-6 * (1.0 + fd.abs()),
                "grid {idx}: {fd} vs {}",
                dg[idx]
            );
        }
    }
}
