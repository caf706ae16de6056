use rayon::prelude::*;

use super::{RenderSettings, Splat2D, Splat2DGrad, ALPHA_MAX, TRANSMITTANCE_EPS};
use crate::error::{Error, Result};
use crate::imgbuf::Image;
use crate::real::Real;

/// Forward state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Rasterized<F = f32> {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub background: [F; 3],
    pub min_alpha: F,
    /// Visible splat indices, front to back (ties by index).
    pub order: Vec<u32>,
    /// Per tile, the splats whose footprint touches it, front to back.
    pub tile_lists: Vec<Vec<u32>>,
    /// Residual transmittance per pixel.
    pub final_t: Vec<F>,
    /// Number of tile-list entries visited per pixel.
    pub n_contrib: Vec<u32>,
}

impl<F: Real> Rasterized<F> {
    fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.tile_size)
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let tx = tile % self.tiles_x();
        let ty = tile / self.tiles_x();
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        let x1 = (x0 + self.tile_size).min(self.width);
        let y1 = (y0 + self.tile_size).min(self.height);
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

#[inline]
fn power<F: Real>(s: &Splat2D<F>, px: F, py: F) -> (F, F, F) {
    let dx = px - s.mu2d[0];
    let dy = py - s.mu2d[1];
    let half = F::of(0.5);
    (
        -half * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy,
        dx,
        dy,
    )
}

#[cfg(test)]
fn falloff<F: Real>(s: &Splat2D<F>, px: F, py: F) -> (F, F, F) {
    let (p, dx, dy) = power(s, px, py);
    (p.exp(), dx, dy)
}

/// Exponent below which a splat's α is certainly under `min_alpha`, so the
/// exponential can be skipped. The margin keeps the test conservative.
fn skip_below<F: Real>(splats: &[Option<Splat2D<F>>], min_alpha: f64) -> Vec<F> {
    splats
        .iter()
        .map(|s| match s {
            Some(s) => F::of((min_alpha / s.alpha_base.as_f64()).ln() - 1e-3),
            None => F::infinity(),
        })
        .collect()
}

/// Depth-sort, tile-bin and α-blend projected splats (`None` = culled).
pub fn rasterize<F: Real>(
    splats: &[Option<Splat2D<F>>],
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> (Image<F>, Rasterized<F>) {
    let ts = settings.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut order: Vec<u32> = (0..splats.len() as u32)
        .filter(|&i| splats[i as usize].is_some())
        .collect();
    order.sort_by(|&a, &b| {
        let da = splats[a as usize].as_ref().unwrap().depth;
        let db = splats[b as usize].as_ref().unwrap().depth;
        da.partial_cmp(&db)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let s = splats[i as usize].as_ref().unwrap();
        let r = s.radius.as_f64();
        let (tx0, tx1, ty0, ty1) = if r.is_finite() {
            let u = s.mu2d[0].as_f64();
            let v = s.mu2d[1].as_f64();
            let clampt = |x: f64, n: usize| ((x / ts as f64).floor().max(0.0) as usize).min(n - 1);
            (
                clampt(u - r, tiles_x),
                clampt(u + r, tiles_x),
                clampt(v - r, tiles_y),
                clampt(v + r, tiles_y),
            )
        } else {
            (0, tiles_x - 1, 0, tiles_y - 1)
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[ty * tiles_x + tx].push(i);
            }
        }
    }

    let background = settings.background.map(F::of);
    let mut state = Rasterized {
        width,
        height,
        tile_size: ts,
        background,
        min_alpha: F::of(settings.min_alpha),
        order,
        tile_lists,
        final_t: vec![F::one(); width * height],
        n_contrib: vec![0; width * height],
    };

    let alpha_max = F::of(ALPHA_MAX);
    let t_eps = F::of(TRANSMITTANCE_EPS);
    let half = F::of(0.5);
    let st = &state;
    let cut = skip_below(splats, settings.min_alpha);
    let per_tile: Vec<Vec<([F; 3], F, u32)>> = (0..st.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &st.tile_lists[tile];
            st.tile_pixels(tile)
                .map(|(x, y)| {
                    let px = F::of(x as f64) + half;
                    let py = F::of(y as f64) + half;
                    let mut t = F::one();
                    let mut c = [F::zero(); 3];
                    let mut n = 0u32;
                    for (pos, &si) in list.iter().enumerate() {
                        let s = splats[si as usize].as_ref().unwrap();
                        let (pw, _, _) = power(s, px, py);
                        if pw < cut[si as usize] {
                            continue;
                        }
                        let alpha = (s.alpha_base * pw.exp()).min(alpha_max);
                        if alpha < st.min_alpha {
                            continue;
                        }
                        let w = t * alpha;
                        for ch in 0..3 {
                            c[ch] += w * s.color[ch];
                        }
                        t *= F::one() - alpha;
                        n = pos as u32 + 1;
                        if t < t_eps {
                            break;
                        }
                    }
                    (c, t, n)
                })
                .collect()
        })
        .collect();

    let mut image = Image::new(width, height);
    for (tile, pixels) in per_tile.into_iter().enumerate() {
        let coords: Vec<(usize, usize)> = state.tile_pixels(tile).collect();
        for ((x, y), (c, t, n)) in coords.into_iter().zip(pixels) {
            let idx = y * width + x;
            state.final_t[idx] = t;
            state.n_contrib[idx] = n;
            image.set_pixel(
                x,
                y,
                [
                    c[0] + t * background[0],
                    c[1] + t * background[1],
                    c[2] + t * background[2],
                ],
            );
        }
    }
    (image, state)
}

/// Adjoint of [`rasterize`]: per-splat gradients, indexed like `splats`.
///
/// Tiles are processed in parallel into tile-local buffers which are then
/// reduced in tile order, so the result does not depend on thread count.
pub fn rasterize_backward<F: Real>(
    splats: &[Option<Splat2D<F>>],
    state: &Rasterized<F>,
    d_image: &Image<F>,
) -> Result<Vec<Splat2DGrad<F>>> {
    if d_image.width != state.width || d_image.height != state.height {
        return Err(Error::Internal(
            "image gradient resolution differs from the forward pass".into(),
        ));
    }
    if state
        .order
        .iter()
        .any(|&i| splats.get(i as usize).is_none_or(Option::is_none))
    {
        return Err(Error::Internal(
            "splat set changed between forward and backward".into(),
        ));
    }
    let alpha_max = F::of(ALPHA_MAX);
    let half = F::of(0.5);
    let bg = state.background;
    let cut = skip_below(splats, state.min_alpha.as_f64());

    let per_tile: Vec<Vec<Splat2DGrad<F>>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &state.tile_lists[tile];
            let mut local = vec![Splat2DGrad::default(); list.len()];
            for (x, y) in state.tile_pixels(tile) {
                let idx = y * state.width + x;
                let n = state.n_contrib[idx] as usize;
                if n == 0 {
                    continue;
                }
                let dpix = d_image.pixel(x, y);
                if dpix.iter().all(|v| *v == F::zero()) {
                    continue;
                }
                let px = F::of(x as f64) + half;
                let py = F::of(y as f64) + half;
                let mut t = state.final_t[idx];
                let mut behind = bg;
                for pos in (0..n).rev() {
                    let si = list[pos] as usize;
                    let s = splats[si].as_ref().unwrap();
                    let (pw, dx, dy) = power(s, px, py);
                    if pw < cut[si] {
                        continue;
                    }
                    let g = pw.exp();
                    let raw = s.alpha_base * g;
                    let alpha = raw.min(alpha_max);
                    if alpha < state.min_alpha {
                        continue;
                    }
                    let t_i = t / (F::one() - alpha);
                    let w = t_i * alpha;
                    let gl = &mut local[pos];
                    let mut d_alpha = F::zero();
                    for ch in 0..3 {
                        gl.color[ch] += w * dpix[ch];
                        d_alpha += (s.color[ch] - behind[ch]) * dpix[ch];
                    }
                    d_alpha *= t_i;
                    for ch in 0..3 {
                        behind[ch] = alpha * s.color[ch] + (F::one() - alpha) * behind[ch];
                    }
                    t = t_i;
                    if raw >= alpha_max {
                        continue;
                    }
                    gl.alpha_base += g * d_alpha;
                    let d_power = s.alpha_base * g * d_alpha;
                    gl.mu2d[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                    gl.mu2d[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                    gl.conic[0] += -half * dx * dx * d_power;
                    gl.conic[1] += -dx * dy * d_power;
                    gl.conic[2] += -half * dy * dy * d_power;
                }
            }
            local
        })
        .collect();

    let mut out = vec![Splat2DGrad::default(); splats.len()];
    for (tile, local) in per_tile.into_iter().enumerate() {
        for (&si, g) in state.tile_lists[tile].iter().zip(local) {
            let o = &mut out[si as usize];
            o.mu2d[0] += g.mu2d[0];
            o.mu2d[1] += g.mu2d[1];
            for k in 0..3 {
                o.conic[k] += g.conic[k];
                o.color[k] += g.color[k];
            }
            o.alpha_base += g.alpha_base;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_splat(u: f64, v: f64, depth: f64, color: [f64; 3], alpha: f64) -> Option<Splat2D<f64>> {
        // Very wide footprint: the falloff is ~1 over the test pixels.
        Some(Splat2D {
            mu2d: [u, v],
            cov2d: [1e8, 0.0, 1e8],
            conic: [1e-8, 0.0, 1e-8],
            depth,
            color,
            alpha_base: alpha,
            radius: 1e4,
        })
    }

    fn exact() -> RenderSettings {
        RenderSettings::exact([0.2, 0.4, 0.6])
    }

    #[test]
    fn empty_scene_is_background() {
        let (img, _) = rasterize::<f64>(&[], 5, 3, &exact());
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(img.pixel(x, y), [0.2, 0.4, 0.6]);
            }
        }
    }

    #[test]
    fn opaque_splat_gives_its_colour() {
        let s = [flat_splat(0.5, 0.5, 1.0, [0.9, 0.1, 0.3], 1.0)];
        let (img, _) = rasterize(&s, 1, 1, &RenderSettings::default());
        let p = img.pixel(0, 0);
        // α is clamped to 0.999, black background.
        for (got, want) in p.iter().zip([0.9, 0.1, 0.3]) {
            assert!((got - want).abs() < 1e-3);
        }
    }

    #[test]
    fn two_half_transparent_splats_blend_in_depth_order() {
        let c1 = [1.0, 0.0, 0.0];
        let c2 = [0.0, 1.0, 0.0];
        // Listed back-to-front on purpose; sorting must fix the order.
        let s = [
            flat_splat(0.5, 0.5, 2.0, c2, 0.5),
            flat_splat(0.5, 0.5, 1.0, c1, 0.5),
        ];
        let (img, _) = rasterize(&s, 1, 1, &exact());
        let p = img.pixel(0, 0);
        let bg = [0.2, 0.4, 0.6];
        for ch in 0..3 {
            let want = 0.5 * c1[ch] + 0.25 * c2[ch] + 0.25 * bg[ch];
            assert!((p[ch] - want).abs() < 1e-7, "{ch}: {} vs {want}", p[ch]);
        }
    }

    #[test]
    fn equal_depths_are_ordered_by_index() {
        let s = [
            flat_splat(0.5, 0.5, 1.0, [1.0, 0.0, 0.0], 0.5),
            flat_splat(0.5, 0.5, 1.0, [0.0, 0.0, 1.0], 0.5),
        ];
        let (img, st) = rasterize(&s, 1, 1, &exact());
        assert_eq!(st.order, vec![0, 1]);
        assert!(img.pixel(0, 0)[0] > img.pixel(0, 0)[2]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let s = [
            flat_splat(0.3, 0.7, 1.0, [1.0, 0.5, 0.0], 0.6),
            flat_splat(1.2, 0.2, 2.0, [0.0, 0.5, 1.0], 0.4),
        ];
        let (_, st) = rasterize(&s, 2, 2, &exact());
        let g = rasterize_backward(&s, &st, &Image::new(2, 2)).unwrap();
        assert!(g.iter().all(|g| *g == Splat2DGrad::default()));
    }

    #[test]
    fn early_termination_stops_blending() {
        let s: Vec<_> = (0..10)
            .map(|i| flat_splat(0.5, 0.5, 1.0 + i as f64, [1.0; 3], 0.8))
            .collect();
        let (_, st) = rasterize(&s, 1, 1, &exact());
        // 0.2^5 = 3.2e-4 is above the threshold, 0.2^6 is below.
        assert_eq!(st.n_contrib[0], 6);
        assert!(st.final_t[0] < TRANSMITTANCE_EPS);
    }

    fn random_scene(
        seed: &[(f64, f64, f64, f64, f64, f64, f64, f64)],
    ) -> Vec<Option<Splat2D<f64>>> {
        seed.iter()
            .map(|&(u, v, d, sx, sy, r, a, c)| {
                let cov = [sx * sx, r * sx * sy, sy * sy];
                let dil = [cov[0] + 0.3, cov[1], cov[2] + 0.3];
                let det = dil[0] * dil[2] - dil[1] * dil[1];
                Some(Splat2D {
                    mu2d: [u, v],
                    cov2d: cov,
                    conic: [dil[2] / det, -dil[1] / det, dil[0] / det],
                    depth: d,
                    color: [c, 1.0 - c, 0.5 * c],
                    alpha_base: a,
                    radius: 3.0 * sx.max(sy) + 2.0,
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn energy_bound_and_transmittance_telescoping(
            seed in prop::collection::vec((0.0..12.0f64, 0.0..12.0f64, 0.5..5.0f64, 0.5..4.0f64, 0.5..4.0f64, -0.9..0.9f64, 0.0..1.0f64, 0.0..1.0f64), 0..20)
        ) {
            let splats = random_scene(&seed);
            let settings = RenderSettings::with_background([0.3, 0.3, 0.3]);
            let (img, st) = rasterize(&splats, 12, 12, &settings);
            let max_c = seed.iter().map(|s| s.7.max(1.0 - s.7)).fold(0.3f64, f64::max);
            for v in &img.data {
                prop_assert!(*v >= 0.0 && *v <= max_c + 1e-6);
            }
            // Σ Tᵢαᵢ + T_final = 1, re-evaluated from the stored pixel state.
            for y in 0..12 {
                for x in 0..12 {
                    let idx = y * 12 + x;
                    let tile = ((y / 16)) + x / 16;
                    let list = &st.tile_lists[tile];
                    let mut t = 1.0;
                    let mut acc = 0.0;
                    for &si in &list[..st.n_contrib[idx] as usize] {
                        let s = splats[si as usize].as_ref().unwrap();
                        let (g, _, _) = falloff(s, x as f64 + 0.5, y as f64 + 0.5);
                        let a = (s.alpha_base * g).min(ALPHA_MAX);
                        if a < settings.min_alpha { continue; }
                        acc += t * a;
                        t *= 1.0 - a;
                    }
                    prop_assert!((t - st.final_t[idx]).abs() < 1e-12);
                    prop_assert!((acc + st.final_t[idx] - 1.0).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn rendering_is_bit_reproducible(
            seed in prop::collection::vec((0.0..20.0f64, 0.0..20.0f64, 0.5..5.0f64, 0.5..4.0f64, 0.5..4.0f64, -0.9..0.9f64, 0.0..1.0f64, 0.0..1.0f64), 1..20)
        ) {
            let splats: Vec<Option<Splat2D<f32>>> = random_scene(&seed).into_iter().map(|s| s.map(|s| Splat2D {
                mu2d: s.mu2d.map(|v| v as f32), cov2d: s.cov2d.map(|v| v as f32), conic: s.conic.map(|v| v as f32),
                depth: s.depth as f32, color: s.color.map(|v| v as f32), alpha_base: s.alpha_base as f32, radius: s.radius as f32,
            })).collect();
            let settings = RenderSettings { tile_size: 8, ..RenderSettings::default() };
            let (a, sa) = rasterize(&splats, 20, 20, &settings);
            let (b, _) = rasterize(&splats, 20, 20, &settings);
            prop_assert_eq!(&a.data, &b.data);
            let d = Image { width: 20, height: 20, data: (0..1200).map(|i| ((i * 37 % 11) as f32) / 11.0 - 0.5).collect() };
            let ga = rasterize_backward(&splats, &sa, &d).unwrap();
            let gb = rasterize_backward(&splats, &sa, &d).unwrap();
            prop_assert_eq!(ga, gb);
        }
    }
}
