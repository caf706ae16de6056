use crate::math::{quat_to_mat, quat_to_mat_backward, Mat3, Quat, Vec3};
use crate::real::Real;

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn compose_covariance<F: Real>(rot: &Quat<F>, log_scale: &Vec3<F>) -> Mat3<F> {
    let r = quat_to_mat(rot);
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = r[i][0] * r[j][0] * s[0] * s[0]
                + r[i][1] * r[j][1] * s[1] * s[1]
                + r[i][2] * r[j][2] * s[2] * s[2];
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Adjoint of [`compose_covariance`]. `d_cov` is the gradient with respect
/// to the full (symmetric) matrix, each entry treated independently.
pub fn compose_covariance_backward<F: Real>(
    rot: &Quat<F>,
    log_scale: &Vec3<F>,
    d_cov: &Mat3<F>,
) -> (Quat<F>, Vec3<F>) {
    let r = quat_to_mat(rot);
    let s = [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()];
    // Σ = M Mᵀ with M = R S, so dM = (dΣ + dΣᵀ) M.
    let mut m = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * s[j];
        }
    }
    let mut sym = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sym[i][j] = d_cov[i][j] + d_cov[j][i];
        }
    }
    let mut dm = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            dm[i][j] = sym[i][0] * m[0][j] + sym[i][1] * m[1][j] + sym[i][2] * m[2][j];
        }
    }
    let mut dr = [[F::zero(); 3]; 3];
    let mut dls = [F::zero(); 3];
    for i in 0..3 {
        for j in 0..3 {
            dr[i][j] = dm[i][j] * s[j];
            dls[j] += dm[i][j] * r[i][j] * s[j];
        }
    }
    (quat_to_mat_backward(rot, &dr), dls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_axis_angle, quat_identity, quat_mul};

    fn rotation_oracle(q: &Quat<f64>, s: &Vec3<f64>) -> Mat3<f64> {
        // R·S·Sᵀ·Rᵀ evaluated as explicit matrix products.
        let r = quat_to_mat(q);
        let sm = [
            [s[0].exp(), 0.0, 0.0],
            [0.0, s[1].exp(), 0.0],
            [0.0, 0.0, s[2].exp()],
        ];
        let rs = crate::math::mat_mul(&r, &sm);
        crate::math::mat_mul(&rs, &crate::math::mat_transpose(&rs))
    }

    #[test]
    fn identity_and_axis_scaling() {
        let id = compose_covariance(&[1.0f64, 0.0, 0.0, 0.0], &[0.0; 3]);
        assert_eq!(id, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let c = compose_covariance(&[1.0f64, 0.0, 0.0, 0.0], &[2f64.ln(), 0.0, 0.0]);
        assert!(
            (c[0][0] - 4.0).abs() < 1e-12
                && (c[1][1] - 1.0).abs() < 1e-15
                && (c[2][2] - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn rotated_scaling_matches_matrix_oracle() {
        let q = quat_from_axis_angle(&[0.0f64, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let ls = [2f64.ln(), 0.0, 0.0];
        let c = compose_covariance(&q, &ls);
        let o = rotation_oracle(&q, &ls);
        let expected = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - o[i][j]).abs() < 1e-12);
                assert!((c[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_rotation_composition_is_exact() {
        let q = crate::math::quat_normalize(&[0.31f64, -0.72, 0.18, 0.59]);
        let ls = [0.2, -0.7, 0.05];
        let a = compose_covariance(&q, &ls);
        let b = compose_covariance(&quat_mul(&q, &quat_identity()), &ls);
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let q = [0.6f64, -0.3, 0.5, 0.2];
        let ls = [0.1, -0.4, 0.3];
        let g = [[0.3, -0.2, 0.7], [0.1, 0.9, -0.5], [0.4, 0.2, -0.6]];
        let loss = |q: &Quat<f64>, ls: &Vec3<f64>| {
            let c = compose_covariance(q, ls);
            (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| c[i][j] * g[i][j])
                .sum::<f64>()
        };
        let (dq, dls) = compose_covariance_backward(&q, &ls, &g);
        let h = 1e-6;
        for k in 0..4 {
            let (mut a, mut b) = (q, q);
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&a, &ls) - loss(&b, &ls)) / (2.0 * h);
            assert!((fd - dq[k]).abs() < 1e-7, "rot {k}");
        }
        for k in 0..3 {
            let (mut a, mut b) = (ls, ls);
            a[k] += h;
            b[k] -= h;
            let fd = (loss(&q, &a) - loss(&q, &b)) / (2.0 * h);
            assert!((fd - dls[k]).abs() < 1e-7, "scale {k}");
        }
    }
}
