use serde::{Deserialize, Serialize};

use super::cluster::{fps, kmeans, knn};
use crate::deform::{DeformField, DeformOutput, Motion};
use crate::error::{Error, Result};
use crate::math::{quat_normalize, quat_normalize_backward};
use crate::nn::rng::Rng;
use crate::real::Real;
use crate::splat::GaussianSet;

/// Key points in the hyper-canonical space: a canonical position and a motion feature each.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyPointSet<F = f32> {
    /// k × 3
    pub mu: Vec<F>,
    /// k × feat_dim
    pub motion: Vec<F>,
    pub feat_dim: usize,
}

impl<F: Real> KeyPointSet<F> {
    pub fn new(mu: Vec<F>, motion: Vec<F>, feat_dim: usize) -> Result<Self> {
        let k = mu.len() / 3;
        if mu.len() != 3 * k || motion.len() != k * feat_dim {
            return Err(Error::Shape(
                "key point positions and features disagree on the count".into(),
            ));
        }
        Ok(Self {
            mu,
            motion,
            feat_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.mu.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn push(&mut self, mu: &[F], motion: &[F]) {
        self.mu.extend_from_slice(&mu[..3]);
        self.motion.extend_from_slice(&motion[..self.feat_dim]);
    }
}

/// Metric on the hyper-canonical space: `‖Δμ‖² + λ_m · ‖Δm / s‖²`, where `s`
/// is the root-mean-square motion-feature norm of the scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperMetric {
    pub feature_scale: f64,
    pub lambda: f64,
}

impl HyperMetric {
    /// Scale taken from the scene's features (1 if they are all zero).
    pub fn for_scene<F: Real>(set: &GaussianSet<F>, lambda: f64) -> Self {
        let n = set.len().max(1);
        let ms: f64 = set.motion.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / n as f64;
        let s = ms.sqrt();
        Self {
            feature_scale: if s > 0.0 { s } else { 1.0 },
            lambda,
        }
    }

    /// Plain 3D distance.
    pub fn spatial() -> Self {
        Self {
            feature_scale: 1.0,
            lambda: 0.0,
        }
    }

    pub fn dim(&self, feat_dim: usize) -> usize {
        if self.lambda > 0.0 {
            3 + feat_dim
        } else {
            3
        }
    }

    /// Embeds rows so that squared Euclidean distance equals the metric.
    pub fn coords<F: Real>(&self, mu: &[F], motion: &[F], feat_dim: usize) -> Vec<f64> {
        let rows = mu.len() / 3;
        let dim = self.dim(feat_dim);
        let w = self.lambda.sqrt() / self.feature_scale;
        let mut out = Vec::with_capacity(rows * dim);
        for r in 0..rows {
            out.extend(mu[3 * r..3 * r + 3].iter().map(|v| v.as_f64()));
            if dim > 3 {
                out.extend(
                    motion[r * feat_dim..(r + 1) * feat_dim]
                        .iter()
                        .map(|v| w * v.as_f64()),
                );
            }
        }
        out
    }
}

/// k-means over the hyper coordinates of the Gaussians; each key point takes
/// the 3D centre and mean motion feature of its cluster.
pub fn init_keypoints<F: Real>(
    set: &GaussianSet<F>,
    metric: &HyperMetric,
    k_init: usize,
    rng: &mut Rng,
) -> Result<KeyPointSet<F>> {
    let n = set.len();
    if k_init == 0 || k_init > n {
        return Err(Error::Config(format!(
            "k_init = {k_init} but the scene has {n} Gaussians"
        )));
    }
    let d = set.feat_dim;
    let dim = metric.dim(d);
    let km = kmeans(&metric.coords(&set.mu, &set.motion, d), dim, k_init, rng)?;
    let mut sums = vec![0.0f64; k_init * (3 + d)];
    let mut counts = vec![0usize; k_init];
    for (i, &l) in km.labels.iter().enumerate() {
        counts[l] += 1;
        let s = &mut sums[l * (3 + d)..(l + 1) * (3 + d)];
        for j in 0..3 {
            s[j] += set.mu[3 * i + j].as_f64();
        }
        for j in 0..d {
            s[3 + j] += set.motion[i * d + j].as_f64();
        }
    }
    let mut kp = KeyPointSet {
        mu: Vec::new(),
        motion: Vec::new(),
        feat_dim: d,
    };
    for c in 0..k_init {
        let cnt = counts[c].max(1) as f64;
        let s = &sums[c * (3 + d)..(c + 1) * (3 + d)];
        let mean: Vec<F> = s.iter().map(|v| F::of(v / cnt)).collect();
        kp.push(&mean[..3], &mean[3..]);
    }
    Ok(kp)
}

/// The `n_near` nearest key points of every Gaussian under `metric`
/// (n × n_near indices, nearest first, ties by key-point index).
pub fn assign_neighbors<F: Real>(
    set: &GaussianSet<F>,
    keypoints: &KeyPointSet<F>,
    metric: &HyperMetric,
    n_near: usize,
) -> Result<Vec<usize>> {
    if n_near == 0 || n_near > keypoints.len() {
        return Err(Error::Config(format!(
            "N_near = {n_near} but there are {} key points",
            keypoints.len()
        )));
    }
    let d = set.feat_dim;
    knn(
        &metric.coords(&set.mu, &set.motion, d),
        &metric.coords(&keypoints.mu, &keypoints.motion, d),
        metric.dim(d),
        n_near,
    )
}

/// FPS over the Gaussians whose accumulated gradient norm exceeds
/// `threshold`, one new key point per 100 selected (at least one), capped
/// so the set never exceeds `n_max`. Returns the source Gaussian indices.
pub fn select_new_keypoints<F: Real>(
    set: &GaussianSet<F>,
    grad_norm: &[f64],
    threshold: f64,
    current: usize,
    n_max: usize,
) -> Result<Vec<usize>> {
    let selected: Vec<usize> = (0..set.len())
        .filter(|&i| grad_norm[i] > threshold)
        .collect();
    let room = n_max.saturating_sub(current);
    if selected.is_empty() || room == 0 {
        return Ok(Vec::new());
    }
    let count = (selected.len() / 100).max(1).min(room);
    let pts: Vec<f64> = selected
        .iter()
        .flat_map(|&i| set.mu3(i).map(|v| v.as_f64()))
        .collect();
    Ok(fps(&pts, 3, count, 0)?
        .into_iter()
        .map(|j| selected[j])
        .collect())
}

/// Appends key points at the selected Gaussians (position and motion feature copied).
pub fn adaptive_increase<F: Real>(
    set: &GaussianSet<F>,
    keypoints: &mut KeyPointSet<F>,
    grad_norm: &[f64],
    threshold: f64,
    n_max: usize,
) -> Result<usize> {
    let src = select_new_keypoints(set, grad_norm, threshold, keypoints.len(), n_max)?;
    let d = set.feat_dim;
    for &i in &src {
        keypoints.push(&set.mu[3 * i..3 * i + 3], &set.motion[i * d..(i + 1) * d]);
    }
    Ok(src.len())
}

/// Per-key-point translation T and unit rotation Q at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyPointMotion<F = f32> {
    /// k × 3
    pub t: Vec<F>,
    /// k × 4
    pub q: Vec<F>,
}

impl<F: Real> KeyPointMotion<F> {
    pub fn len(&self) -> usize {
        self.t.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Evaluation of D at the key points, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct KeyPointTape<F> {
    out: DeformOutput<F>,
}

/// `T, Q = D(γ(μᵏ), mᵏ, γ(t))` with Q renormalised.
pub fn keypoint_motion<F: Real>(
    field: &DeformField<F>,
    keypoints: &KeyPointSet<F>,
    t: f64,
) -> Result<(KeyPointMotion<F>, KeyPointTape<F>)> {
    let out = field.forward(&keypoints.mu, &keypoints.motion, t)?;
    let q = out
        .motion
        .dq
        .chunks(4)
        .flat_map(|c| quat_normalize(&[c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((
        KeyPointMotion {
            t: out.motion.dmu.clone(),
            q,
        },
        KeyPointTape { out },
    ))
}

/// Accumulates D's parameter gradient and returns `(∂L/∂μᵏ, ∂L/∂mᵏ)`.
pub fn keypoint_motion_backward<F: Real>(
    field: &DeformField<F>,
    tape: &KeyPointTape<F>,
    d_motion: &KeyPointMotion<F>,
    d_deform: &mut [F],
) -> Result<(Vec<F>, Vec<F>)> {
    let k = tape.out.motion.len();
    let mut dq = vec![F::zero(); 4 * k];
    for i in 0..k {
        let raw = &tape.out.motion.dq[4 * i..4 * i + 4];
        let g = &d_motion.q[4 * i..4 * i + 4];
        let d =
            quat_normalize_backward(&[raw[0], raw[1], raw[2], raw[3]], &[g[0], g[1], g[2], g[3]]);
        dq[4 * i..4 * i + 4].copy_from_slice(&d);
    }
    let dm = Motion {
        dmu: d_motion.t.clone(),
        dq,
        psi: vec![F::zero(); k],
    };
    let mut unused = vec![F::zero(); field.opacity.num_params()];
    field.backward(&tape.out, &dm, d_deform, &mut unused)
}
