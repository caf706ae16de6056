use serde::{Deserialize, Serialize};

use super::rng::{uniform, Rng};
use crate::error::{Error, Result};
use crate::real::Real;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Multi-resolution hash encoding over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            growth: 1.5,
            features_per_level: 2,
            log2_table_size: 14,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Level {
    resolution: usize,
    entries: usize,
    offset: usize,
    dense: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid<F = f32> {
    config: HashGridConfig,
    levels: Vec<Level>,
    /// Feature tables of all levels, entry-major.
    pub params: Vec<F>,
}

/// Corner indices and trilinear weights per (point, level, corner).
#[derive(Clone, Debug)]
pub struct HashTape<F> {
    rows: usize,
    corners: Vec<usize>,
    weights: Vec<F>,
    /// Fractional cell position per (point, level).
    frac: Vec<[F; 3]>,
    /// Whether each coordinate of a point was inside the box.
    inside: Vec<[bool; 3]>,
}

impl<F: Real> HashGrid<F> {
    pub fn new(config: HashGridConfig, rng: &mut Rng) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        for v in &mut grid.params {
            *v = uniform(rng, -1e-4, 1e-4);
        }
        Ok(grid)
    }

    pub fn zeros(config: HashGridConfig) -> Result<Self> {
        if config.levels == 0 || config.features_per_level == 0 || config.log2_table_size > 30 {
            return Err(Error::Config(
                "hash grid needs at least one level and feature".into(),
            ));
        }
        if (0..3).any(|i| !(config.bbox_max[i] > config.bbox_min[i])) {
            return Err(Error::Config("hash grid bounding box is empty".into()));
        }
        let table = 1usize << config.log2_table_size;
        let mut levels = Vec::with_capacity(config.levels);
        let mut offset = 0;
        for l in 0..config.levels {
            let resolution =
                (config.base_resolution as f64 * config.growth.powi(l as i32)).floor() as usize;
            let side = resolution.max(1) + 1;
            let dense_size = side.checked_pow(3).unwrap_or(usize::MAX);
            let dense = dense_size <= table;
            let entries = if dense { dense_size } else { table };
            levels.push(Level {
                resolution: resolution.max(1),
                entries,
                offset,
                dense,
            });
            offset += entries * config.features_per_level;
        }
        Ok(Self {
            config,
            levels,
            params: vec![F::zero(); offset],
        })
    }

    pub fn from_params(config: HashGridConfig, params: Vec<F>) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        if params.len() != grid.params.len() {
            return Err(Error::Shape(format!(
                "hash grid expects {} parameters, got {}",
                grid.params.len(),
                params.len()
            )));
        }
        grid.params = params;
        Ok(grid)
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.levels * self.config.features_per_level
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn level_resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    /// Table slot of grid vertex `v` at `level`.
    pub fn vertex_index(&self, level: usize, v: [usize; 3]) -> usize {
        let lv = self.levels[level];
        if lv.dense {
            let side = lv.resolution + 1;
            v[0] + side * (v[1] + side * v[2])
        } else {
            let h = (v[0] as u32).wrapping_mul(PRIMES[0])
                ^ (v[1] as u32).wrapping_mul(PRIMES[1])
                ^ (v[2] as u32).wrapping_mul(PRIMES[2]);
            h as usize % lv.entries
        }
    }

    /// Offset of the feature vector for `slot` at `level` within `params`.
    pub fn entry_offset(&self, level: usize, slot: usize) -> usize {
        self.levels[level].offset + slot * self.config.features_per_level
    }

    /// Encode `rows` points (row-major xyz); returns `rows × output_dim` features.
    pub fn encode(&self, points: &[F], rows: usize) -> Result<(Vec<F>, HashTape<F>)> {
        if points.len() != rows * 3 {
            return Err(Error::Shape(format!(
                "hash grid got {} coordinates for {rows} points",
                points.len()
            )));
        }
        let nl = self.levels.len();
        let fpl = self.config.features_per_level;
        let mut out = vec![F::zero(); rows * nl * fpl];
        let mut corners = Vec::with_capacity(rows * nl * 8);
        let mut weights = Vec::with_capacity(rows * nl * 8);
        let mut frac = Vec::with_capacity(rows * nl);
        let mut inside = Vec::with_capacity(rows);
        for r in 0..rows {
            let mut unit = [0.0f64; 3];
            let mut ins = [true; 3];
            for i in 0..3 {
                let lo = self.config.bbox_min[i];
                let hi = self.config.bbox_max[i];
                let u = (points[r * 3 + i].as_f64() - lo) / (hi - lo);
                ins[i] = (0.0..=1.0).contains(&u);
                unit[i] = u.clamp(0.0, 1.0);
            }
            inside.push(ins);
            for (l, lv) in self.levels.iter().enumerate() {
                let mut base = [0usize; 3];
                let mut f = [F::zero(); 3];
                for i in 0..3 {
                    let p = unit[i] * lv.resolution as f64;
                    let cell = (p.floor() as usize).min(lv.resolution - 1);
                    base[i] = cell;
                    f[i] = F::of(p - cell as f64);
                }
                frac.push(f);
                let dst = &mut out[(r * nl + l) * fpl..(r * nl + l + 1) * fpl];
                for c in 0..8 {
                    let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                    let mut w = F::one();
                    for i in 0..3 {
                        w *= if bits[i] == 1 { f[i] } else { F::one() - f[i] };
                    }
                    let slot = self
                        .vertex_index(l, [base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]]);
                    let off = lv.offset + slot * fpl;
                    for (k, d) in dst.iter_mut().enumerate() {
                        *d += w * self.params[off + k];
                    }
                    corners.push(off);
                    weights.push(w);
                }
            }
        }
        Ok((
            out,
            HashTape {
                rows,
                corners,
                weights,
                frac,
                inside,
            },
        ))
    }

    /// Accumulates table gradients and returns `∂L/∂points`.
    pub fn backward(&self, tape: &HashTape<F>, d_feat: &[F], grads: &mut [F]) -> Result<Vec<F>> {
        let nl = self.levels.len();
        let fpl = self.config.features_per_level;
        if d_feat.len() != tape.rows * nl * fpl || grads.len() != self.params.len() {
            return Err(Error::Shape(
                "hash grid backward received mismatched buffers".into(),
            ));
        }
        let mut dpoints = vec![F::zero(); tape.rows * 3];
        for r in 0..tape.rows {
            for (l, lv) in self.levels.iter().enumerate() {
                let dl = &d_feat[(r * nl + l) * fpl..(r * nl + l + 1) * fpl];
                let f = tape.frac[r * nl + l];
                let mut dfrac = [F::zero(); 3];
                for c in 0..8 {
                    let idx = (r * nl + l) * 8 + c;
                    let off = tape.corners[idx];
                    let w = tape.weights[idx];
                    let mut dot = F::zero();
                    for k in 0..fpl {
                        grads[off + k] += w * dl[k];
                        dot += dl[k] * self.params[off + k];
                    }
                    let bits = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
                    for i in 0..3 {
                        let mut dw = if bits[i] == 1 { F::one() } else { -F::one() };
                        for j in 0..3 {
                            if j != i {
                                dw *= if bits[j] == 1 { f[j] } else { F::one() - f[j] };
                            }
                        }
                        dfrac[i] += dot * dw;
                    }
                }
                for i in 0..3 {
                    if tape.inside[r][i] {
                        let scale = lv.resolution as f64
                            / (self.config.bbox_max[i] - self.config.bbox_min[i]);
                        dpoints[r * 3 + i] += dfrac[i] * F::of(scale);
                    }
                }
            }
        }
        Ok(dpoints)
    }
}
