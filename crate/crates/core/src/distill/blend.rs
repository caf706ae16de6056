use super::keypoints::KeyPointMotion;
use crate::deform::Motion;
use crate::error::{Error, Result};
use crate::math::{quat_normalize, quat_normalize_backward};
use crate::real::Real;

/// Normalised per-Gaussian weights over its neighbour list (n × n_near each).
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights<F = f32> {
    pub translation: Vec<F>,
    pub rotation: Vec<F>,
    pub n_near: usize,
}

/// Quantities of [`blend_deform`] needed by its adjoint.
#[derive(Clone, Debug)]
pub struct BlendTape<F> {
    /// ±1 per (Gaussian, neighbour): hemisphere of Q relative to the first neighbour.
    signs: Vec<F>,
    /// Unnormalised blended rotation, n × 4.
    raw_q: Vec<F>,
}

fn quat<F: Real>(v: &[F]) -> [F; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// `Δμᵢ = Σ wᵀ·T`, `Δqᵢ = normalize(Σ w^Q·(±Q))` over each Gaussian's
/// neighbours, with every Q flipped into the hemisphere of the first
/// neighbour's; ψ is passed through.
pub fn blend_deform<F: Real>(
    neighbors: &[usize],
    weights: &BlendWeights<F>,
    kp: &KeyPointMotion<F>,
    psi: &[F],
) -> Result<(Motion<F>, BlendTape<F>)> {
    let nn = weights.n_near;
    let n = psi.len();
    if neighbors.len() != n * nn
        || weights.translation.len() != n * nn
        || weights.rotation.len() != n * nn
    {
        return Err(Error::Shape(
            "neighbour lists, weights and ψ disagree on the Gaussian count".into(),
        ));
    }
    if let Some(&bad) = neighbors.iter().find(|&&k| k >= kp.len()) {
        return Err(Error::Shape(format!(
            "neighbour index {bad} but only {} key points",
            kp.len()
        )));
    }
    let mut m = Motion {
        dmu: vec![F::zero(); 3 * n],
        dq: vec![F::zero(); 4 * n],
        psi: psi.to_vec(),
    };
    let mut signs = vec![F::one(); n * nn];
    let mut raw_q = vec![F::zero(); 4 * n];
    for i in 0..n {
        let first = quat(&kp.q[4 * neighbors[i * nn]..]);
        let mut acc = [F::zero(); 4];
        for j in 0..nn {
            let k = neighbors[i * nn + j];
            let wt = weights.translation[i * nn + j];
            for c in 0..3 {
                m.dmu[3 * i + c] += wt * kp.t[3 * k + c];
            }
            let q = quat(&kp.q[4 * k..]);
            let dot = (0..4).fold(F::zero(), |s, c| s + q[c] * first[c]);
            let s = if dot < F::zero() { -F::one() } else { F::one() };
            signs[i * nn + j] = s;
            let wq = weights.rotation[i * nn + j] * s;
            for c in 0..4 {
                acc[c] += wq * q[c];
            }
        }
        raw_q[4 * i..4 * i + 4].copy_from_slice(&acc);
        m.dq[4 * i..4 * i + 4].copy_from_slice(&quat_normalize(&acc));
    }
    Ok((m, BlendTape { signs, raw_q }))
}

/// Adjoint of [`blend_deform`]: gradients for both weight sets and the key-point motion.
pub fn blend_deform_backward<F: Real>(
    neighbors: &[usize],
    weights: &BlendWeights<F>,
    kp: &KeyPointMotion<F>,
    tape: &BlendTape<F>,
    d_motion: &Motion<F>,
) -> (BlendWeights<F>, KeyPointMotion<F>) {
    let nn = weights.n_near;
    let n = neighbors.len() / nn.max(1);
    let mut dw = BlendWeights {
        translation: vec![F::zero(); n * nn],
        rotation: vec![F::zero(); n * nn],
        n_near: nn,
    };
    let mut dk = KeyPointMotion {
        t: vec![F::zero(); kp.t.len()],
        q: vec![F::zero(); kp.q.len()],
    };
    for i in 0..n {
        let d_raw =
            quat_normalize_backward(&quat(&tape.raw_q[4 * i..]), &quat(&d_motion.dq[4 * i..]));
        for j in 0..nn {
            let k = neighbors[i * nn + j];
            let wt = weights.translation[i * nn + j];
            let mut g = F::zero();
            for c in 0..3 {
                let dd = d_motion.dmu[3 * i + c];
                g += dd * kp.t[3 * k + c];
                dk.t[3 * k + c] += wt * dd;
            }
            dw.translation[i * nn + j] = g;
            let s = tape.signs[i * nn + j];
            let wq = weights.rotation[i * nn + j] * s;
            let mut gq = F::zero();
            for c in 0..4 {
                gq += d_raw[c] * kp.q[4 * k + c];
                dk.q[4 * k + c] += wq * d_raw[c];
            }
            dw.rotation[i * nn + j] = gq * s;
        }
    }
    (dw, dk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_from_axis_angle;

    fn kp2() -> KeyPointMotion<f64> {
        let a = quat_from_axis_angle(&[0.0, 0.0, 1.0], 0.4);
        let b = quat_from_axis_angle(&[1.0, 0.0, 0.0], -0.7);
        KeyPointMotion {
            t: vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.25],
            q: [a, b.map(|v| -v)].concat(),
        }
    }

    #[test]
    fn one_hot_weights_copy_the_key_point() {
        let kp = kp2();
        let w = BlendWeights {
            translation: vec![0.0, 1.0],
            rotation: vec![0.0, 1.0],
            n_near: 2,
        };
        let (m, _) = blend_deform(&[0, 1], &w, &kp, &[0.7]).unwrap();
        assert_eq!(&m.dmu, &kp.t[3..6]);
        for c in 0..4 {
            // Flipped into the first neighbour's hemisphere, which is the same rotation.
            assert!((m.dq[c].abs() - kp.q[4 + c].abs()).abs() < 1e-12);
        }
        assert_eq!(m.psi, vec![0.7]);
    }

    #[test]
    fn shared_motion_is_independent_of_weights() {
        let q = quat_from_axis_angle::<f64>(&[0.0, 1.0, 0.0], 0.9);
        let kp = KeyPointMotion {
            t: vec![0.3, -0.1, 0.2, 0.3, -0.1, 0.2],
            q: [q, q].concat(),
        };
        let w = BlendWeights {
            translation: vec![0.2, 0.8],
            rotation: vec![0.9, 0.1],
            n_near: 2,
        };
        let (m, _) = blend_deform(&[1, 0], &w, &kp, &[1.0]).unwrap();
        for c in 0..3 {
            assert!((m.dmu[c] - kp.t[c]).abs() < 1e-12);
        }
        for c in 0..4 {
            assert!((m.dq[c] - q[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn antipodal_copies_do_not_cancel() {
        let q = quat_from_axis_angle::<f64>(&[0.0, 1.0, 0.0], 0.9);
        let kp = KeyPointMotion {
            t: vec![0.0; 6],
            q: [q, q.map(|v| -v)].concat(),
        };
        let w = BlendWeights {
            translation: vec![0.5, 0.5],
            rotation: vec![0.5, 0.5],
            n_near: 2,
        };
        let (m, _) = blend_deform(&[0, 1], &w, &kp, &[1.0]).unwrap();
        for c in 0..4 {
            assert!((m.dq[c] - q[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let kp = kp2();
        let nbr = [0, 1, 1, 0];
        let w = BlendWeights {
            translation: vec![0.3, 0.7, 0.6, 0.4],
            rotation: vec![0.45, 0.55, 0.2, 0.8],
            n_near: 2,
        };
        let psi = [1.0, 1.0];
        let coef: Vec<f64> = (0..14).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let loss = |w: &BlendWeights<f64>, kp: &KeyPointMotion<f64>| {
            let (m, _) = blend_deform(&nbr, w, kp, &psi).unwrap();
            m.dmu
                .iter()
                .chain(&m.dq)
                .zip(&coef)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (m, tape) = blend_deform(&nbr, &w, &kp, &psi).unwrap();
        let d = Motion {
            dmu: coef[..6].to_vec(),
            dq: coef[6..].to_vec(),
            psi: vec![0.0; 2],
        };
        let _ = m;
        let (dw, dk) = blend_deform_backward(&nbr, &w, &kp, &tape, &d);
        let h = 1e-6;
        for idx in 0..4 {
            for rot in [false, true] {
                let mut wp = w.clone();
                let mut wm = w.clone();
                let (p, q) = if rot {
                    (&mut wp.rotation, &mut wm.rotation)
                } else {
                    (&mut wp.translation, &mut wm.translation)
                };
                p[idx] += h;
                q[idx] -= h;
                let fd = (loss(&wp, &kp) - loss(&wm, &kp)) / (2.0 * h);
                let an = if rot {
                    dw.rotation[idx]
                } else {
                    dw.translation[idx]
                };
                assert!(
                    (fd - an).abs() < 1e-7,
                    "weight {idx} rot={rot}: {fd} vs {an}"
                );
            }
        }
        for idx in 0..8 {
            let mut kp_p = kp.clone();
            let mut kp_m = kp.clone();
            kp_p.q[idx] += h;
            kp_m.q[idx] -= h;
            let fd = (loss(&w, &kp_p) - loss(&w, &kp_m)) / (2.0 * h);
            assert!(
                (fd - dk.q[idx]).abs() < 1e-7,
                "q {idx}: {fd} vs {}",
                dk.q[idx]
            );
        }
        for idx in 0..6 {
            let mut kp_p = kp.clone();
            let mut kp_m = kp.clone();
            kp_p.t[idx] += h;
            kp_m.t[idx] -= h;
            let fd = (loss(&w, &kp_p) - loss(&w, &kp_m)) / (2.0 * h);
            assert!((fd - dk.t[idx]).abs() < 1e-7);
        }
    }
}
