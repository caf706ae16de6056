use super::Gaussian;
use crate::error::{Error, Result};
use crate::math::quat_normalize;
use crate::real::{sigmoid, Real};

/// Structure-of-arrays storage of a Gaussian scene, laid out so each
/// parameter class can be handed to an optimizer as one flat tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet<F = f32> {
    /// n × 3
    pub mu: Vec<F>,
    /// n × 4, w first
    pub rot: Vec<F>,
    /// n × 3
    pub log_scale: Vec<F>,
    /// n × 3
    pub color: Vec<F>,
    /// n
    pub opacity_logit: Vec<F>,
    /// n × feat_dim
    pub motion: Vec<F>,
    pub feat_dim: usize,
}

impl<F: Real> GaussianSet<F> {
    pub fn empty(feat_dim: usize) -> Self {
        Self {
            mu: Vec::new(),
            rot: Vec::new(),
            log_scale: Vec::new(),
            color: Vec::new(),
            opacity_logit: Vec::new(),
            motion: Vec::new(),
            feat_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }

    pub fn push(&mut self, g: &Gaussian<F>) {
        assert_eq!(g.motion_feat.len(), self.feat_dim, "motion feature width");
        self.mu.extend_from_slice(&g.mu);
        self.rot.extend_from_slice(&g.rot);
        self.log_scale.extend_from_slice(&g.log_scale);
        self.color.extend_from_slice(&g.color);
        self.opacity_logit.push(g.opacity_logit);
        self.motion.extend_from_slice(&g.motion_feat);
    }

    pub fn from_gaussians(feat_dim: usize, gaussians: &[Gaussian<F>]) -> Self {
        let mut set = Self::empty(feat_dim);
        for g in gaussians {
            set.push(g);
        }
        set
    }

    pub fn get(&self, i: usize) -> Gaussian<F> {
        Gaussian {
            mu: self.mu3(i),
            rot: [
                self.rot[4 * i],
                self.rot[4 * i + 1],
                self.rot[4 * i + 2],
                self.rot[4 * i + 3],
            ],
            log_scale: [
                self.log_scale[3 * i],
                self.log_scale[3 * i + 1],
                self.log_scale[3 * i + 2],
            ],
            color: [
                self.color[3 * i],
                self.color[3 * i + 1],
                self.color[3 * i + 2],
            ],
            opacity_logit: self.opacity_logit[i],
            motion_feat: self.motion_of(i).to_vec(),
        }
    }

    pub fn to_gaussians(&self) -> Vec<Gaussian<F>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn mu3(&self, i: usize) -> [F; 3] {
        [self.mu[3 * i], self.mu[3 * i + 1], self.mu[3 * i + 2]]
    }

    pub fn rot4(&self, i: usize) -> [F; 4] {
        [
            self.rot[4 * i],
            self.rot[4 * i + 1],
            self.rot[4 * i + 2],
            self.rot[4 * i + 3],
        ]
    }

    pub fn motion_of(&self, i: usize) -> &[F] {
        &self.motion[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn opacity(&self, i: usize) -> F {
        sigmoid(self.opacity_logit[i])
    }

    /// Keeps the Gaussians whose flag is set.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<F: Copy>(v: &mut Vec<F>, width: usize, keep: &[bool]) {
            let mut out = Vec::with_capacity(v.len());
            for (i, k) in keep.iter().enumerate() {
                if *k {
                    out.extend_from_slice(&v[i * width..(i + 1) * width]);
                }
            }
            *v = out;
        }
        filter(&mut self.mu, 3, keep);
        filter(&mut self.rot, 4, keep);
        filter(&mut self.log_scale, 3, keep);
        filter(&mut self.color, 3, keep);
        filter(&mut self.opacity_logit, 1, keep);
        let d = self.feat_dim;
        filter(&mut self.motion, d, keep);
    }

    /// Renormalises every rotation (identity for a zero quaternion).
    pub fn normalize_rotations(&mut self) {
        for q in self.rot.chunks_exact_mut(4) {
            let n = quat_normalize(&[q[0], q[1], q[2], q[3]]);
            q.copy_from_slice(&n);
        }
    }

    pub fn clamp_colors(&mut self) {
        for c in &mut self.color {
            *c = c.max(F::zero()).min(F::one());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.mu.len() == 3 * n
            && self.rot.len() == 4 * n
            && self.log_scale.len() == 3 * n
            && self.color.len() == 3 * n
            && self.motion.len() == self.feat_dim * n;
        if !ok {
            return Err(Error::Shape(format!(
                "Gaussian set tensors disagree on the count {n}"
            )));
        }
        let finite = [
            &self.mu,
            &self.rot,
            &self.log_scale,
            &self.color,
            &self.opacity_logit,
            &self.motion,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Shape("Gaussian set holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> GaussianSet<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::of(x.as_f64())).collect();
        GaussianSet {
            mu: c(&self.mu),
            rot: c(&self.rot),
            log_scale: c(&self.log_scale),
            color: c(&self.color),
            opacity_logit: c(&self.opacity_logit),
            motion: c(&self.motion),
            feat_dim: self.feat_dim,
        }
    }
}
