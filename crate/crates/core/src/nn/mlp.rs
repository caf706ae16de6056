use serde::{Deserialize, Serialize};

use super::rng::{uniform, Rng};
use crate::error::{Error, Result};
use crate::real::{matmul, matmul_nt, matmul_tn, Real};

/// Shape of a ReLU network with a linear output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub output: usize,
    /// Hidden layer whose input is `[network input, previous activation]`.
    pub skip_at: Option<usize>,
}

impl MlpConfig {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        let mut prev = self.input;
        for l in 0..self.depth {
            let fan_in = if l > 0 && self.skip_at == Some(l) {
                prev + self.input
            } else {
                prev
            };
            shapes.push((fan_in, self.hidden));
            prev = self.hidden;
        }
        shapes.push((prev, self.output));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
    /// Input is the network input concatenated in front of the previous activation.
    skip: bool,
}

/// Dense network with all parameters in one flat vector (weights stored
/// `fan_in × fan_out` row-major, followed by the bias).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F = f32> {
    config: MlpConfig,
    layers: Vec<Layer>,
    pub params: Vec<F>,
}

/// Activations retained by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct MlpTape<F> {
    rows: usize,
    /// Input matrix of each layer.
    inputs: Vec<Vec<F>>,
}

impl<F: Real> Mlp<F> {
    /// Glorot-uniform weights, zero biases; the output layer is zeroed when `zero_head`.
    pub fn new(config: MlpConfig, zero_head: bool, rng: &mut Rng) -> Self {
        let mut mlp = Self::zeros(config);
        let n = mlp.layers.len();
        for (li, layer) in mlp.layers.clone().into_iter().enumerate() {
            if zero_head && li + 1 == n {
                continue;
            }
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for v in &mut mlp.params[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                *v = uniform(rng, -bound, bound);
            }
        }
        mlp
    }

    pub fn zeros(config: MlpConfig) -> Self {
        let mut layers = Vec::new();
        let mut off = 0;
        for (l, (fan_in, fan_out)) in config.layer_shapes().into_iter().enumerate() {
            let skip = l > 0 && l < config.depth && config.skip_at == Some(l);
            layers.push(Layer {
                fan_in,
                fan_out,
                w: off,
                b: off + fan_in * fan_out,
                skip,
            });
            off += fan_in * fan_out + fan_out;
        }
        Self {
            config,
            layers,
            params: vec![F::zero(); off],
        }
    }

    /// Rebuild from a parameter vector, checking its length.
    pub fn from_params(config: MlpConfig, params: Vec<F>) -> Result<Self> {
        let mut mlp = Self::zeros(config);
        if params.len() != mlp.params.len() {
            return Err(Error::Shape(format!(
                "network expects {} parameters, got {}",
                mlp.params.len(),
                params.len()
            )));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input
    }

    pub fn output_dim(&self) -> usize {
        self.config.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Weight and bias ranges of the output layer.
    pub fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let l = self.layers.last().unwrap();
        (l.w..l.b, l.b..l.b + l.fan_out)
    }

    fn check_input(&self, x: &[F], rows: usize) -> Result<()> {
        if x.len() != rows * self.config.input {
            return Err(Error::Shape(format!(
                "network input has {} values, expected {} rows × {}",
                x.len(),
                rows,
                self.config.input
            )));
        }
        Ok(())
    }

    /// Evaluate `rows` inputs stored row-major; returns `rows × output` values.
    pub fn forward(&self, x: &[F], rows: usize) -> Result<(Vec<F>, MlpTape<F>)> {
        self.check_input(x, rows)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = if layer.skip {
                concat_rows(x, self.config.input, &cur, rows)
            } else {
                cur
            };
            let mut out = Vec::with_capacity(rows * layer.fan_out);
            for _ in 0..rows {
                out.extend_from_slice(&self.params[layer.b..layer.b + layer.fan_out]);
            }
            matmul(
                rows,
                layer.fan_in,
                layer.fan_out,
                &input,
                &self.params[layer.w..layer.b],
                F::one(),
                &mut out,
            );
            if li != last {
                for v in &mut out {
                    if *v < F::zero() {
                        *v = F::zero();
                    }
                }
            }
            inputs.push(input);
            cur = out;
        }
        Ok((cur, MlpTape { rows, inputs }))
    }

    /// Forward pass without retaining a tape.
    pub fn infer(&self, x: &[F], rows: usize) -> Result<Vec<F>> {
        Ok(self.forward(x, rows)?.0)
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂input`.
    pub fn backward(&self, tape: &MlpTape<F>, d_out: &[F], grads: &mut [F]) -> Result<Vec<F>> {
        let rows = tape.rows;
        if d_out.len() != rows * self.config.output || grads.len() != self.params.len() {
            return Err(Error::Shape(
                "network backward received mismatched buffers".into(),
            ));
        }
        let mut dy = d_out.to_vec();
        let mut dx_skip = vec![F::zero(); rows * self.config.input];
        for li in (0..self.layers.len()).rev() {
            let layer = self.layers[li];
            let input = &tape.inputs[li];
            // dW += Xᵀ dY ; db += Σ_rows dY
            matmul_tn(
                layer.fan_in,
                rows,
                layer.fan_out,
                input,
                &dy,
                F::one(),
                &mut grads[layer.w..layer.b],
            );
            let gb = &mut grads[layer.b..layer.b + layer.fan_out];
            for r in 0..rows {
                for (o, g) in gb.iter_mut().enumerate() {
                    *g += dy[r * layer.fan_out + o];
                }
            }
            let mut dx = vec![F::zero(); rows * layer.fan_in];
            matmul_nt(
                rows,
                layer.fan_out,
                layer.fan_in,
                &dy,
                &self.params[layer.w..layer.b],
                F::zero(),
                &mut dx,
            );
            if li == 0 {
                for (a, b) in dx.iter_mut().zip(&dx_skip) {
                    *a += *b;
                }
                return Ok(dx);
            }
            let dprev = if layer.skip {
                let (dskip, dh) = split_rows(
                    &dx,
                    self.config.input,
                    layer.fan_in - self.config.input,
                    rows,
                );
                for (a, b) in dx_skip.iter_mut().zip(dskip) {
                    *a += b;
                }
                dh
            } else {
                dx
            };
            // ReLU of the previous layer: its output is this layer's (non-skip part of the) input.
            let prev_out = &tape.inputs[li];
            let width = layer.fan_in - if layer.skip { self.config.input } else { 0 };
            let offset = if layer.skip { self.config.input } else { 0 };
            dy = dprev;
            for r in 0..rows {
                for c in 0..width {
                    if prev_out[r * layer.fan_in + offset + c] <= F::zero() {
                        dy[r * width + c] = F::zero();
                    }
                }
            }
        }
        unreachable!("network has at least one layer")
    }
}

fn concat_rows<F: Real>(a: &[F], wa: usize, b: &[F], rows: usize) -> Vec<F> {
    let wb = b.len() / rows.max(1);
    let mut out = Vec::with_capacity(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

fn split_rows<F: Real>(x: &[F], wa: usize, wb: usize, rows: usize) -> (Vec<F>, Vec<F>) {
    let mut a = Vec::with_capacity(rows * wa);
    let mut b = Vec::with_capacity(rows * wb);
    for r in 0..rows {
        let row = &x[r * (wa + wb)..(r + 1) * (wa + wb)];
        a.extend_from_slice(&row[..wa]);
        b.extend_from_slice(&row[wa..]);
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded;

    fn cfg(
        input: usize,
        hidden: usize,
        depth: usize,
        output: usize,
        skip_at: Option<usize>,
    ) -> MlpConfig {
        MlpConfig {
            input,
            hidden,
            depth,
            output,
            skip_at,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::<f64>::zeros(cfg(3, 5, 2, 2, None));
        let y = mlp.infer(&[0.3, -1.0, 2.0, 4.0, 5.0, 6.0], 2).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut mlp = Mlp::<f64>::zeros(cfg(3, 0, 0, 3, None));
        for i in 0..3 {
            mlp.params[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.0, 2.0, 4.0, 5.5, -6.0];
        assert_eq!(mlp.infer(&x, 2).unwrap(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let mlp = Mlp::<f32>::zeros(cfg(3, 4, 1, 2, None));
        assert!(matches!(mlp.infer(&[1.0; 5], 2), Err(Error::Shape(_))));
        assert!(Mlp::<f32>::from_params(cfg(3, 4, 1, 2, None), vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_head_starts_at_zero_output() {
        let mut rng = seeded(1);
        let mlp = Mlp::<f32>::new(cfg(4, 8, 3, 2, Some(2)), true, &mut rng);
        let y = mlp.infer(&[0.5; 12], 3).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        let (w, b) = mlp.head_ranges();
        assert_eq!(b.end, mlp.num_params());
        assert_eq!(w.end, b.start);
    }

    #[test]
    fn gradients_match_finite_differences_with_skip() {
        let mut rng = seeded(3);
        let config = cfg(4, 6, 3, 3, Some(2));
        let mut mlp = Mlp::<f64>::new(config, false, &mut rng);
        for v in mlp.params.iter_mut() {
            *v += 0.05;
        }
        let x: Vec<f64> = (0..20).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.4).collect();
        let w: Vec<f64> = (0..15).map(|i| ((i * 5 % 9) as f64 - 4.0) * 0.2).collect();
        let loss = |m: &Mlp<f64>, x: &[f64]| {
            m.infer(x, 5)
                .unwrap()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (_, tape) = mlp.forward(&x, 5).unwrap();
        let mut g = vec![0.0; mlp.num_params()];
        let dx = mlp.backward(&tape, &w, &mut g).unwrap();
        let h = 1e-6;
        for k in 0..mlp.num_params() {
            let mut a = mlp.clone();
            let mut b = mlp.clone();
            a.params[k] += h;
            b.params[k] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {k}: {fd} vs {}",
                g[k]
            );
        }
        for k in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&mlp, &a) - loss(&mlp, &b)) / (2.0 * h);
            assert!((fd - dx[k]).abs() < 1e-6 * fd.abs().max(1.0), "input {k}");
        }
    }
}
