use crate::frame::FrameSample;
use crate::nn::rng::{uniform, Rng};

/// Per-channel difference from the background above which a pixel counts as foreground.
const FOREGROUND_EPS: f64 = 0.04;

/// Uniform samples from the box that project onto foreground pixels in at
/// least `min_fraction` of the frames that see them. Falls back to plain
/// uniform samples if the carved volume is too small to fill `count` after
/// `200 · count` draws.
pub fn silhouette_points(
    frames: &[FrameSample<f32>],
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    background: [f64; 3],
    count: usize,
    min_fraction: f64,
    rng: &mut Rng,
) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(count);
    let mut draws = 0usize;
    while out.len() < count {
        let p = [0, 1, 2].map(|k| uniform::<f64>(rng, bbox_min[k], bbox_max[k]));
        draws += 1;
        if draws > 200 * count
            || frames.is_empty()
            || foreground_fraction(frames, p, background) >= min_fraction
        {
            out.push(p);
        }
    }
    out
}

fn foreground_fraction(frames: &[FrameSample<f32>], p: [f64; 3], bg: [f64; 3]) -> f64 {
    let mut seen = 0usize;
    let mut hit = 0usize;
    for f in frames {
        let c = &f.camera;
        let w = &c.world_to_cam;
        let q = [0, 1, 2].map(|i| w[i][0] * p[0] + w[i][1] * p[1] + w[i][2] * p[2] + w[i][3]);
        if q[2] <= c.near {
            continue;
        }
        let u = c.focal[0] * q[0] / q[2] + c.principal[0];
        let v = c.focal[1] * q[1] / q[2] + c.principal[1];
        if u < 0.0 || v < 0.0 || u >= c.width as f64 || v >= c.height as f64 {
            continue;
        }
        seen += 1;
        let px = f.image.pixel(u as usize, v as usize);
        if (0..3).any(|k| (px[k] as f64 - bg[k]).abs() > FOREGROUND_EPS) {
            hit += 1;
        }
    }
    if seen == 0 {
        0.0
    } else {
        hit as f64 / seen as f64
    }
}
