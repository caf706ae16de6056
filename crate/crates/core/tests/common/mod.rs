//! Shared helpers for integration tests: finite-difference checks and the
//! randomized gradient suites.

#![allow(dead_code)]

use splatcast::math::Quat;
use splatcast::nn::rng::{normal, seeded, uniform, Rng};
use splatcast::nn::{
    positional_encoding, positional_encoding_backward, HashGrid, HashGridConfig, Mlp, MlpConfig,
};
use splatcast::splat::{
    render_gaussians, render_gaussians_backward, Camera, Gaussian, RenderSettings,
};
use splatcast::Image;

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + h;
            let a = f(&p);
            p[i] = v - h;
            let b = f(&p);
            p[i] = v;
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-300 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// One finite-difference comparison.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub rel_err: f64,
}

fn random_quat(rng: &mut Rng) -> Quat<f64> {
    [normal(rng), normal(rng), normal(rng), normal(rng)]
}

const GAUSSIAN_PARAMS: usize = 14;

fn pack(gs: &[Gaussian<f64>]) -> Vec<f64> {
    gs.iter()
        .flat_map(|g| {
            let mut v = Vec::with_capacity(GAUSSIAN_PARAMS);
            v.extend(g.mu);
            v.extend(g.rot);
            v.extend(g.log_scale);
            v.extend(g.color);
            v.push(g.opacity_logit);
            v
        })
        .collect()
}

fn unpack(x: &[f64]) -> Vec<Gaussian<f64>> {
    x.chunks(GAUSSIAN_PARAMS)
        .map(|p| Gaussian {
            mu: [p[0], p[1], p[2]],
            rot: [p[3], p[4], p[5], p[6]],
            log_scale: [p[7], p[8], p[9]],
            color: [p[10], p[11], p[12]],
            opacity_logit: p[13],
            motion_feat: Vec::new(),
        })
        .collect()
}

/// Random scene of 1–20 Gaussians in front of a 16×16 camera, loss = Σ w·pixel.
/// Returns one check per parameter class.
pub fn render_instance(seed: u64) -> Vec<Check> {
    let mut rng = seeded(seed);
    let n = 1 + (seed as usize * 7) % 20;
    let gs: Vec<Gaussian<f64>> = (0..n)
        .map(|_| Gaussian {
            mu: [
                uniform(&mut rng, -0.5, 0.5),
                uniform(&mut rng, -0.5, 0.5),
                uniform(&mut rng, -0.5, 0.5),
            ],
            rot: random_quat(&mut rng),
            log_scale: [0, 1, 2].map(|_| uniform(&mut rng, (0.08f64).ln(), (0.3f64).ln())),
            color: [0, 1, 2].map(|_| uniform(&mut rng, 0.0, 1.0)),
            opacity_logit: uniform(&mut rng, -3.0, 0.0),
            motion_feat: Vec::new(),
        })
        .collect();
    let eye = [
        uniform(&mut rng, -1.0, 1.0),
        uniform(&mut rng, -1.0, 1.0),
        3.0,
    ];
    let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 0.9, 16, 16).expect("camera");
    let bg = [
        uniform(&mut rng, 0.0, 0.3),
        uniform(&mut rng, 0.0, 0.3),
        uniform(&mut rng, 0.0, 0.3),
    ];
    let settings = RenderSettings::exact(bg);
    let w: Vec<f64> = (0..16 * 16 * 3)
        .map(|_| uniform(&mut rng, -1.0, 1.0))
        .collect();
    let loss = |x: &[f64]| -> f64 {
        let img = render_gaussians(&unpack(x), &cam, &settings).image;
        img.data.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let fwd = render_gaussians(&gs, &cam, &settings);
    let d_image = Image {
        width: 16,
        height: 16,
        data: w.clone(),
    };
    let (grads, _) = render_gaussians_backward(&gs, &cam, &fwd, &d_image).expect("backward");
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| {
            let mut v = Vec::with_capacity(GAUSSIAN_PARAMS);
            v.extend(g.mu);
            v.extend(g.rot);
            v.extend(g.log_scale);
            v.extend(g.color);
            v.push(g.opacity_logit);
            v
        })
        .collect();
    let numeric = numeric_grad(loss, &pack(&gs), FD_STEP);
    let classes: [(&str, std::ops::Range<usize>); 5] = [
        ("mu", 0..3),
        ("rotation", 3..7),
        ("log_scale", 7..10),
        ("color", 10..13),
        ("opacity", 13..14),
    ];
    classes
        .iter()
        .map(|(name, r)| {
            let pick = |v: &[f64]| -> Vec<f64> {
                v.chunks(GAUSSIAN_PARAMS)
                    .flat_map(|c| c[r.clone()].to_vec())
                    .collect()
            };
            Check {
                name: format!("render[{seed}] n={n} {name}"),
                rel_err: rel_err(&pick(&analytic), &pick(&numeric)),
            }
        })
        .collect()
}

/// Random network instance; returns parameter and input checks.
/// Kinds cycle through a plain MLP, an MLP with a skip connection,
/// positional encoding into an MLP and a hash grid into an MLP.
pub fn network_instance(seed: u64) -> Vec<Check> {
    let mut rng = seeded(1000 + seed);
    let kind = seed % 4;
    let rows = 3 + (seed as usize % 3);
    let depth = 1 + (seed as usize % 3);
    let hidden = 4 + (seed as usize % 5);
    match kind {
        0 | 1 => {
            let input = 2 + (seed as usize % 4);
            let cfg = MlpConfig {
                input,
                hidden,
                depth: depth.max(2),
                output: 1 + (seed as usize % 3),
                skip_at: (kind == 1).then_some(1),
            };
            let net = Mlp::<f64>::new(cfg.clone(), false, &mut rng);
            let x: Vec<f64> = (0..rows * input)
                .map(|_| uniform(&mut rng, -1.0, 1.0))
                .collect();
            let w: Vec<f64> = (0..rows * cfg.output)
                .map(|_| uniform(&mut rng, -1.0, 1.0))
                .collect();
            mlp_checks(&format!("mlp[{seed}]"), &net, &x, rows, &w)
        }
        2 => {
            let levels = 2 + (seed as usize % 3);
            let dim = 2;
            let enc = 2 * levels * dim;
            let cfg = MlpConfig {
                input: enc,
                hidden,
                depth,
                output: 2,
                skip_at: None,
            };
            let net = Mlp::<f64>::new(cfg, false, &mut rng);
            let x: Vec<f64> = (0..rows * dim)
                .map(|_| uniform(&mut rng, -1.0, 1.0))
                .collect();
            let w: Vec<f64> = (0..rows * 2)
                .map(|_| uniform(&mut rng, -1.0, 1.0))
                .collect();
            let encode = |x: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; rows * enc];
                for r in 0..rows {
                    positional_encoding(
                        &x[r * dim..(r + 1) * dim],
                        levels,
                        &mut out[r * enc..(r + 1) * enc],
                    );
                }
                out
            };
            let f = |x: &[f64]| -> f64 {
                let y = net.infer(&encode(x), rows).unwrap();
                y.iter().zip(&w).map(|(a, b)| a * b).sum()
            };
            let (_, tape) = net.forward(&encode(&x), rows).unwrap();
            let mut g = vec![0.0; net.params.len()];
            let d_enc = net.backward(&tape, &w, &mut g).unwrap();
            let mut dx = vec![0.0; x.len()];
            for r in 0..rows {
                positional_encoding_backward(
                    &x[r * dim..(r + 1) * dim],
                    levels,
                    &d_enc[r * enc..(r + 1) * enc],
                    &mut dx[r * dim..(r + 1) * dim],
                );
            }
            vec![Check {
                name: format!("posenc+mlp[{seed}] input"),
                rel_err: rel_err(&dx, &numeric_grad(f, &x, FD_STEP)),
            }]
        }
        _ => {
            let cfg = HashGridConfig {
                levels: 2 + (seed as usize % 3),
                base_resolution: 3,
                growth: 1.7,
                features_per_level: 2,
                log2_table_size: 6,
                bbox_min: [-1.0; 3],
                bbox_max: [1.0; 3],
            };
            let grid = HashGrid::<f64>::new(cfg, &mut rng).unwrap();
            // Table entries start tiny; widen them so the MLP sees varied features.
            let mut grid = grid;
            for v in &mut grid.params {
                *v = uniform(&mut rng, -1.0, 1.0);
            }
            let fd = grid.output_dim();
            let mcfg = MlpConfig {
                input: fd,
                hidden,
                depth,
                output: 1,
                skip_at: None,
            };
            let net = Mlp::<f64>::new(mcfg, false, &mut rng);
            let x: Vec<f64> = (0..rows * 3)
                .map(|_| uniform(&mut rng, -0.9, 0.9))
                .collect();
            let w: Vec<f64> = (0..rows).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let eval = |table: &[f64], x: &[f64]| -> f64 {
                let g = HashGrid::from_params(grid.config().clone(), table.to_vec()).unwrap();
                let (feat, _) = g.encode(x, rows).unwrap();
                net.infer(&feat, rows)
                    .unwrap()
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let (feat, htape) = grid.encode(&x, rows).unwrap();
            let (_, mtape) = net.forward(&feat, rows).unwrap();
            let mut gm = vec![0.0; net.params.len()];
            let d_feat = net.backward(&mtape, &w, &mut gm).unwrap();
            let mut gt = vec![0.0; grid.params.len()];
            let dx = grid.backward(&htape, &d_feat, &mut gt).unwrap();
            vec![
                Check {
                    name: format!("hashgrid+mlp[{seed}] table"),
                    rel_err: rel_err(&gt, &numeric_grad(|p| eval(p, &x), &grid.params, FD_STEP)),
                },
                Check {
                    name: format!("hashgrid+mlp[{seed}] input"),
                    rel_err: rel_err(&dx, &numeric_grad(|p| eval(&grid.params, p), &x, FD_STEP)),
                },
            ]
        }
    }
}

fn mlp_checks(name: &str, net: &Mlp<f64>, x: &[f64], rows: usize, w: &[f64]) -> Vec<Check> {
    let (_, tape) = net.forward(x, rows).unwrap();
    let mut g = vec![0.0; net.params.len()];
    let dx = net.backward(&tape, w, &mut g).unwrap();
    let with_params = |p: &[f64]| -> f64 {
        let n = Mlp::from_params(net.config().clone(), p.to_vec()).unwrap();
        n.infer(x, rows)
            .unwrap()
            .iter()
            .zip(w)
            .map(|(a, b)| a * b)
            .sum()
    };
    let with_input = |xi: &[f64]| -> f64 {
        net.infer(xi, rows)
            .unwrap()
            .iter()
            .zip(w)
            .map(|(a, b)| a * b)
            .sum()
    };
    vec![
        Check {
            name: format!("{name} params"),
            rel_err: rel_err(&g, &numeric_grad(with_params, &net.params, FD_STEP)),
        },
        Check {
            name: format!("{name} input"),
            rel_err: rel_err(&dx, &numeric_grad(with_input, x, FD_STEP)),
        },
    ]
}
