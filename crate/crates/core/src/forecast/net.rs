use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{uniform, Rng};
use crate::real::{matmul, matmul_nt, matmul_tn, Real};

/// Shape of the forecasting network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastArch {
    /// Observed frames per window.
    pub window: usize,
    /// Graph-convolution layers.
    pub layers: usize,
    pub width: usize,
    /// Neighbours per key point in the graph.
    pub k_graph: usize,
}

impl Default for ForecastArch {
    fn default() -> Self {
        Self {
            window: 5,
            layers: 3,
            width: 64,
            k_graph: 8,
        }
    }
}

/// Symmetric kNN graph over `points` (n × 3) with self-loops, row-normalised
/// (n × n, row-major). `k ≥ n − 1` gives the complete graph.
pub fn build_graph(points: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = points.len() / 3;
    if n < 2 || points.len() != 3 * n {
        return Err(Error::Config(format!(
            "a key-point graph needs at least two points, got {n}"
        )));
    }
    let mut adj = vec![0.0; n * n];
    for i in 0..n {
        adj[i * n + i] = 1.0;
        if k >= n - 1 {
            adj[i * n..(i + 1) * n].iter_mut().for_each(|v| *v = 1.0);
            continue;
        }
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                (
                    (0..3)
                        .map(|c| (points[3 * i + c] - points[3 * j + c]).powi(2))
                        .sum(),
                    j,
                )
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &d[..k] {
            adj[i * n + j] = 1.0;
            adj[j * n + i] = 1.0;
        }
    }
    for i in 0..n {
        let s: f64 = adj[i * n..(i + 1) * n].iter().sum();
        adj[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
    }
    Ok(adj)
}

#[derive(Clone, Copy, Debug)]
struct LayerIdx {
    fan_in: usize,
    theta: usize,
    bias: usize,
    mix: usize,
}

/// Graph network over key-point windows.
///
/// Each key point and frame carries its position, centred on the last
/// frame's centroid and divided by `pos_scale`, and its displacement from
/// the previous frame divided by `step_scale`. Each layer applies
/// the adjacency across key points, a shared linear map and ReLU per
/// (key point, frame), then a learned linear mix across the window. A single
/// linear decoder reads the final features together with the input features
/// and outputs each key point's displacement from its last position, in
/// units of `step_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastNet<F = f64> {
    pub arch: ForecastArch,
    /// k × k row-normalised adjacency.
    pub adjacency: Vec<F>,
    pub nodes: usize,
    pub params: Vec<F>,
    pub pos_scale: F,
    pub step_scale: F,
}

/// Input features per key point and frame.
const FEATURES: usize = 6;

/// Activations of one window kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForecastTape<F> {
    input: Vec<F>,
    /// Per layer: input H (k × W × F_in), aggregated G, pre-activation Z.
    h: Vec<Vec<F>>,
    g: Vec<Vec<F>>,
    z: Vec<Vec<F>>,
    last: Vec<F>,
}

impl<F: Real> ForecastNet<F> {
    fn layout(arch: &ForecastArch) -> (Vec<LayerIdx>, usize, usize) {
        let w = arch.window;
        let mut off = 0;
        let mut layers = Vec::with_capacity(arch.layers);
        let mut fan_in = FEATURES;
        for _ in 0..arch.layers {
            let theta = off;
            let bias = theta + fan_in * arch.width;
            let mix = bias + arch.width;
            off = mix + w * w;
            layers.push(LayerIdx {
                fan_in,
                theta,
                bias,
                mix,
            });
            fan_in = arch.width;
        }
        let dec = off;
        let dec_in = w * fan_in + FEATURES * w;
        (layers, dec, dec + dec_in * 3 + 3)
    }

    pub fn num_params_for(arch: &ForecastArch) -> usize {
        Self::layout(arch).2
    }

    /// Glorot graph weights, identity temporal mixing, zero decoder.
    pub fn new(arch: ForecastArch, keypoints: &[f64], rng: &mut Rng) -> Result<Self> {
        if arch.window == 0 {
            return Err(Error::Config("forecast window must be positive".into()));
        }
        let adjacency = build_graph(keypoints, arch.k_graph)?
            .into_iter()
            .map(F::of)
            .collect();
        let nodes = keypoints.len() / 3;
        let (layers, _, total) = Self::layout(&arch);
        let mut params = vec![F::zero(); total];
        for l in &layers {
            let bound = (6.0 / (l.fan_in + arch.width) as f64).sqrt();
            for v in &mut params[l.theta..l.bias] {
                *v = uniform(rng, -bound, bound);
            }
            for i in 0..arch.window {
                params[l.mix + i * arch.window + i] = F::one();
            }
        }
        Ok(Self {
            arch,
            adjacency,
            nodes,
            params,
            pos_scale: F::one(),
            step_scale: F::one(),
        })
    }

    /// Input normalisation from a trajectory (`steps × k × 3`): RMS centred
    /// position and RMS per-step displacement.
    pub fn fit_scales(&mut self, positions: &[F]) {
        let per = self.nodes * 3;
        let frames: Vec<&[F]> = positions.chunks_exact(per).collect();
        let (mut sp, mut np, mut sv, mut nv) = (0.0, 0usize, 0.0, 0usize);
        for (j, fr) in frames.iter().enumerate() {
            let mut centroid = [0.0; 3];
            for p in fr.chunks(3) {
                for c in 0..3 {
                    centroid[c] += p[c].as_f64() / self.nodes as f64;
                }
            }
            for (i, v) in fr.iter().enumerate() {
                sp += (v.as_f64() - centroid[i % 3]).powi(2);
                np += 1;
                if j > 0 {
                    sv += (v.as_f64() - frames[j - 1][i].as_f64()).powi(2);
                    nv += 1;
                }
            }
        }
        let rms = |s: f64, n: usize| {
            if n > 0 && s > 0.0 {
                (s / n as f64).sqrt()
            } else {
                1.0
            }
        };
        self.pos_scale = F::of(rms(sp, np));
        self.step_scale = F::of(rms(sv, nv));
    }

    pub fn from_params(
        arch: ForecastArch,
        adjacency: Vec<F>,
        nodes: usize,
        params: Vec<F>,
    ) -> Result<Self> {
        if adjacency.len() != nodes * nodes || params.len() != Self::num_params_for(&arch) {
            return Err(Error::Shape(
                "forecast network parameters do not match its shape".into(),
            ));
        }
        Ok(Self {
            arch,
            adjacency,
            nodes,
            params,
            pos_scale: F::one(),
            step_scale: F::one(),
        })
    }

    /// Values in one window (W × k × 3).
    pub fn window_len(&self) -> usize {
        self.arch.window * self.nodes * 3
    }

    /// Next positions (k × 3) for `window` (W × k × 3, oldest first).
    pub fn forward(&self, window: &[F]) -> Result<(Vec<F>, ForecastTape<F>)> {
        if window.len() != self.window_len() {
            return Err(Error::Config(format!(
                "forecast window has {} values, expected {} frames × {} key points × 3",
                window.len(),
                self.arch.window,
                self.nodes
            )));
        }
        let (k, w, fw) = (self.nodes, self.arch.window, self.arch.width);
        let (layers, dec, _) = Self::layout(&self.arch);
        let last = window[(w - 1) * k * 3..].to_vec();
        let mut centroid = [F::zero(); 3];
        for n in 0..k {
            for c in 0..3 {
                centroid[c] += last[3 * n + c];
            }
        }
        let inv = F::one() / F::of(k as f64);
        centroid.iter_mut().for_each(|c| *c *= inv);
        let (ip, iv) = (F::one() / self.pos_scale, F::one() / self.step_scale);
        // k × W × FEATURES
        let mut input = vec![F::zero(); k * w * FEATURES];
        for t in 0..w {
            for n in 0..k {
                let row = &mut input[(n * w + t) * FEATURES..(n * w + t + 1) * FEATURES];
                for c in 0..3 {
                    let x = window[(t * k + n) * 3 + c];
                    row[c] = (x - centroid[c]) * ip;
                    if t > 0 {
                        row[3 + c] = (x - window[((t - 1) * k + n) * 3 + c]) * iv;
                    }
                }
            }
        }
        let mut h = input.clone();
        let (mut hs, mut gs, mut zs) = (Vec::new(), Vec::new(), Vec::new());
        for l in &layers {
            let fi = l.fan_in;
            let mut g = vec![F::zero(); k * w * fi];
            matmul(k, k, w * fi, &self.adjacency, &h, F::zero(), &mut g);
            let mut z = vec![F::zero(); k * w * fw];
            for r in 0..k * w {
                z[r * fw..(r + 1) * fw].copy_from_slice(&self.params[l.bias..l.bias + fw]);
            }
            matmul(
                k * w,
                fi,
                fw,
                &g,
                &self.params[l.theta..l.bias],
                F::one(),
                &mut z,
            );
            let act: Vec<F> = z.iter().map(|v| v.max(F::zero())).collect();
            let mut next = vec![F::zero(); k * w * fw];
            let mix = &self.params[l.mix..l.mix + w * w];
            for n in 0..k {
                matmul(
                    w,
                    w,
                    fw,
                    mix,
                    &act[n * w * fw..(n + 1) * w * fw],
                    F::zero(),
                    &mut next[n * w * fw..(n + 1) * w * fw],
                );
            }
            hs.push(h);
            gs.push(g);
            zs.push(z);
            h = next;
        }
        let fl = if layers.is_empty() { FEATURES } else { fw };
        let dec_in = w * fl + FEATURES * w;
        let dw = &self.params[dec..dec + dec_in * 3];
        let db = &self.params[dec + dec_in * 3..dec + dec_in * 3 + 3];
        let mut out = vec![F::zero(); k * 3];
        for n in 0..k {
            for c in 0..3 {
                let mut s = db[c];
                for (i, v) in h[n * w * fl..(n + 1) * w * fl].iter().enumerate() {
                    s += *v * dw[i * 3 + c];
                }
                for (i, v) in input[n * w * FEATURES..(n + 1) * w * FEATURES]
                    .iter()
                    .enumerate()
                {
                    s += *v * dw[(w * fl + i) * 3 + c];
                }
                out[3 * n + c] = last[3 * n + c] + s * self.step_scale;
            }
        }
        hs.push(h);
        Ok((
            out,
            ForecastTape {
                input,
                h: hs,
                g: gs,
                z: zs,
                last,
            },
        ))
    }

    pub fn predict(&self, window: &[F]) -> Result<Vec<F>> {
        Ok(self.forward(window)?.0)
    }

    /// Accumulates `∂L/∂params` for output gradient `d_out` (k × 3).
    pub fn backward(&self, tape: &ForecastTape<F>, d_out: &[F], grads: &mut [F]) -> Result<()> {
        let (k, w, fw) = (self.nodes, self.arch.window, self.arch.width);
        if d_out.len() != k * 3 || grads.len() != self.params.len() {
            return Err(Error::Shape(
                "forecast gradient buffers have the wrong size".into(),
            ));
        }
        let (layers, dec, _) = Self::layout(&self.arch);
        let fl = if layers.is_empty() { FEATURES } else { fw };
        let dec_in = w * fl + FEATURES * w;
        let d_out: Vec<F> = d_out.iter().map(|&d| d * self.step_scale).collect();
        let h_last = tape.h.last().expect("input features");
        let mut dh = vec![F::zero(); k * w * fl];
        {
            let (dw_g, db_g) = grads[dec..dec + dec_in * 3 + 3].split_at_mut(dec_in * 3);
            let dw = &self.params[dec..dec + dec_in * 3];
            for n in 0..k {
                let go = &d_out[3 * n..3 * n + 3];
                for c in 0..3 {
                    db_g[c] += go[c];
                }
                for i in 0..w * fl {
                    let v = h_last[n * w * fl + i];
                    let mut acc = F::zero();
                    for c in 0..3 {
                        dw_g[i * 3 + c] += v * go[c];
                        acc += dw[i * 3 + c] * go[c];
                    }
                    dh[n * w * fl + i] = acc;
                }
                for i in 0..FEATURES * w {
                    let v = tape.input[n * w * FEATURES + i];
                    for c in 0..3 {
                        dw_g[(w * fl + i) * 3 + c] += v * go[c];
                    }
                }
            }
        }
        for (li, l) in layers.iter().enumerate().rev() {
            let fi = l.fan_in;
            let z = &tape.z[li];
            let act: Vec<F> = z.iter().map(|v| v.max(F::zero())).collect();
            let mix = &self.params[l.mix..l.mix + w * w];
            let mut d_act = vec![F::zero(); k * w * fw];
            let mut d_mix = vec![F::zero(); w * w];
            for n in 0..k {
                let dhn = &dh[n * w * fw..(n + 1) * w * fw];
                matmul_tn(
                    w,
                    w,
                    fw,
                    mix,
                    dhn,
                    F::zero(),
                    &mut d_act[n * w * fw..(n + 1) * w * fw],
                );
                matmul_nt(
                    w,
                    fw,
                    w,
                    dhn,
                    &act[n * w * fw..(n + 1) * w * fw],
                    F::one(),
                    &mut d_mix,
                );
            }
            for (g, d) in grads[l.mix..l.mix + w * w].iter_mut().zip(&d_mix) {
                *g += *d;
            }
            let dz: Vec<F> = d_act
                .iter()
                .zip(z)
                .map(|(d, z)| if *z > F::zero() { *d } else { F::zero() })
                .collect();
            for r in 0..k * w {
                for f in 0..fw {
                    grads[l.bias + f] += dz[r * fw + f];
                }
            }
            matmul_tn(
                fi,
                k * w,
                fw,
                &tape.g[li],
                &dz,
                F::one(),
                &mut grads[l.theta..l.bias],
            );
            if li == 0 {
                break;
            }
            let mut dg = vec![F::zero(); k * w * fi];
            matmul_nt(
                k * w,
                fw,
                fi,
                &dz,
                &self.params[l.theta..l.bias],
                F::zero(),
                &mut dg,
            );
            dh = vec![F::zero(); k * w * fi];
            matmul_tn(k, k, w * fi, &self.adjacency, &dg, F::zero(), &mut dh);
        }
        let _ = &tape.last;
        Ok(())
    }

    /// Autoregressive prediction: each output is appended and the window slides by one.
    /// Returns `steps × k × 3`.
    pub fn rollout(&self, seed: &[F], steps: usize) -> Result<Vec<F>> {
        let per = self.nodes * 3;
        let mut window = seed.to_vec();
        let mut out = Vec::with_capacity(steps * per);
        for _ in 0..steps {
            let next = self.predict(&window)?;
            window.drain(..per);
            window.extend_from_slice(&next);
            out.extend_from_slice(&next);
        }
        Ok(out)
    }
}
