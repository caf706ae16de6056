//! Image metrics and the differentiable training loss.
//!
//! Two SSIM flavours live here. [`ssim`] is the evaluation metric: Rec. 709
//! luma, 11×11 Gaussian window (σ = 1.5), averaged over window positions that
//! lie fully inside the image. [`image_loss`] uses per-channel SSIM with
//! zero-padded "same" filtering so every pixel receives a gradient.

use crate::error::{Error, Result};
use crate::imgbuf::Image;
use crate::real::Real;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Weight of the `1 − SSIM` term in the training loss.
pub const DSSIM_WEIGHT: f64 = 0.2;

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

fn check_shapes<A, B>(a: &Image<A>, b: &Image<B>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "image sizes differ: {}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse<F: Real>(a: &Image<F>, b: &Image<F>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.data.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(s / a.data.len() as f64)
}

/// Peak signal-to-noise ratio for images in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr<F: Real>(a: &Image<F>, b: &Image<F>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m))
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

/// Normalised 1D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable correlation of a single-channel plane. With `same`, the output
/// has the input size and samples outside are zero; otherwise only fully
/// covered positions are produced.
fn filter2d(
    plane: &[f64],
    w: usize,
    h: usize,
    taps: &[f64],
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let r = (k / 2) as isize;
    let (ow, oh) = if same { (w, h) } else { (w + 1 - k, h + 1 - k) };
    let shift = if same { -r } else { 0 };
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                let sx = x as isize + shift + t as isize;
                if sx >= 0 && (sx as usize) < w {
                    s += tap * plane[y * w + sx as usize];
                }
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (t, tap) in taps.iter().enumerate() {
                let sy = y as isize + shift + t as isize;
                if sy >= 0 && (sy as usize) < h {
                    s += tap * tmp[sy as usize * ow + x];
                }
            }
            out[y * ow + x] = s;
        }
    }
    (out, ow, oh)
}

/// Local SSIM statistics of two planes.
struct SsimMap {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    s: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_map(x: &[f64], y: &[f64], w: usize, h: usize, taps: &[f64], same: bool) -> SsimMap {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mu_x, ..) = filter2d(x, w, h, taps, same);
    let (mu_y, ..) = filter2d(y, w, h, taps, same);
    let (exx, ..) = filter2d(&xx, w, h, taps, same);
    let (eyy, ..) = filter2d(&yy, w, h, taps, same);
    let (exy, ..) = filter2d(&xy, w, h, taps, same);
    let n = mu_x.len();
    let mut map = SsimMap {
        s: Vec::with_capacity(n),
        a1: Vec::with_capacity(n),
        a2: Vec::with_capacity(n),
        b1: Vec::with_capacity(n),
        b2: Vec::with_capacity(n),
        mu_x,
        mu_y,
    };
    for i in 0..n {
        let (mx, my) = (map.mu_x[i], map.mu_y[i]);
        let sxx = exx[i] - mx * mx;
        let syy = eyy[i] - my * my;
        let sxy = exy[i] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * sxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = sxx + syy + c2;
        map.s.push(a1 * a2 / (b1 * b2));
        map.a1.push(a1);
        map.a2.push(a2);
        map.b1.push(b1);
        map.b2.push(b2);
    }
    map
}

fn luma<F: Real>(img: &Image<F>) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0].as_f64() + LUMA[1] * p[1].as_f64() + LUMA[2] * p[2].as_f64())
        .collect()
}

/// Structural similarity of the luma channels.
pub fn ssim<F: Real>(a: &Image<F>, b: &Image<F>) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {}×{}",
            a.width, a.height
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let map = ssim_map(&luma(a), &luma(b), a.width, a.height, &taps, false);
    Ok(map.s.iter().sum::<f64>() / map.s.len() as f64)
}

/// Per-channel SSIM with zero-padded filtering, averaged over all pixels and
/// channels, plus its gradient with respect to `x`.
pub fn ssim_same_with_grad<F: Real>(x: &Image<F>, y: &Image<F>) -> Result<(f64, Vec<f64>)> {
    check_shapes(x, y)?;
    let (w, h) = (x.width, x.height);
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; w * h * 3];
    for c in 0..3 {
        let xp: Vec<f64> = x
            .data
            .iter()
            .skip(c)
            .step_by(3)
            .map(|v| v.as_f64())
            .collect();
        let yp: Vec<f64> = y
            .data
            .iter()
            .skip(c)
            .step_by(3)
            .map(|v| v.as_f64())
            .collect();
        let map = ssim_map(&xp, &yp, w, h, &taps, true);
        total += map.s.iter().sum::<f64>();
        // Adjoints with respect to the filtered moments E[x], E[x²], E[xy].
        let mut d_mu = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let (mx, my) = (map.mu_x[i], map.mu_y[i]);
            let denom = map.b1[i] * map.b2[i];
            let ds_dmx = 2.0 * my * map.a2[i] / denom - map.s[i] * 2.0 * mx / map.b1[i];
            let ds_dsxx = -map.s[i] / map.b2[i];
            let ds_dsxy = 2.0 * map.a1[i] / denom;
            d_mu[i] = (ds_dmx - 2.0 * mx * ds_dsxx - my * ds_dsxy) / n;
            d_exx[i] = ds_dsxx / n;
            d_exy[i] = ds_dsxy / n;
        }
        // The zero-padded filter is self-adjoint because the taps are symmetric.
        let (g_mu, ..) = filter2d(&d_mu, w, h, &taps, true);
        let (g_xx, ..) = filter2d(&d_exx, w, h, &taps, true);
        let (g_xy, ..) = filter2d(&d_exy, w, h, &taps, true);
        for i in 0..w * h {
            grad[i * 3 + c] = g_mu[i] + 2.0 * xp[i] * g_xx[i] + yp[i] * g_xy[i];
        }
    }
    Ok((total / n, grad))
}

/// Training loss `mean|x − y| + 0.2 · (1 − SSIM)` and its gradient with respect to `x`.
pub fn image_loss<F: Real>(x: &Image<F>, y: &Image<F>) -> Result<(f64, Image<F>)> {
    let (s, gs) = ssim_same_with_grad(x, y)?;
    let n = x.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = Image::new(x.width, x.height);
    for i in 0..x.data.len() {
        let d = x.data[i].as_f64() - y.data[i].as_f64();
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data[i] = F::of(sign / n - DSSIM_WEIGHT * gs[i]);
    }
    Ok((l1 / n + DSSIM_WEIGHT * (1.0 - s), grad))
}
