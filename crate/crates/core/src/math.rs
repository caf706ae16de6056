//! Small fixed-size linear algebra: 3-vectors, 3×3 matrices and w-first
//! quaternions, each with the adjoints the training code needs.

use crate::real::Real;

pub type Vec3<F> = [F; 3];
pub type Quat<F> = [F; 4];
pub type Mat3<F> = [[F; 3]; 3];

#[inline]
pub fn dot3<F: Real>(a: &Vec3<F>, b: &Vec3<F>) -> F {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub3<F: Real>(a: &Vec3<F>, b: &Vec3<F>) -> Vec3<F> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3<F: Real>(a: &Vec3<F>, b: &Vec3<F>) -> Vec3<F> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn norm3<F: Real>(a: &Vec3<F>) -> F {
    dot3(a, a).sqrt()
}

pub fn mat_identity<F: Real>() -> Mat3<F> {
    let (o, z) = (F::one(), F::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat_mul<F: Real>(a: &Mat3<F>, b: &Mat3<F>) -> Mat3<F> {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_transpose<F: Real>(a: &Mat3<F>) -> Mat3<F> {
    let mut out = *a;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j][i] = *v;
        }
    }
    out
}

pub fn mat_vec<F: Real>(a: &Mat3<F>, v: &Vec3<F>) -> Vec3<F> {
    [dot3(&a[0], v), dot3(&a[1], v), dot3(&a[2], v)]
}

pub fn mat_t_vec<F: Real>(a: &Mat3<F>, v: &Vec3<F>) -> Vec3<F> {
    let mut out = [F::zero(); 3];
    for i in 0..3 {
        for j in 0..3 {
            out[j] += a[i][j] * v[i];
        }
    }
    out
}

pub fn mat_add<F: Real>(a: &Mat3<F>, b: &Mat3<F>) -> Mat3<F> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += b[i][j];
        }
    }
    out
}

/// Hamilton product `a ⊗ b` for w-first quaternions.
#[inline]
pub fn quat_mul<F: Real>(a: &Quat<F>, b: &Quat<F>) -> Quat<F> {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Adjoint of [`quat_mul`]: returns `(∂L/∂a, ∂L/∂b)` given `∂L/∂(a ⊗ b)`.
pub fn quat_mul_backward<F: Real>(a: &Quat<F>, b: &Quat<F>, g: &Quat<F>) -> (Quat<F>, Quat<F>) {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    let [gw, gx, gy, gz] = *g;
    let da = [
        gw * bw + gx * bx + gy * by + gz * bz,
        -gw * bx + gx * bw - gy * bz + gz * by,
        -gw * by + gx * bz + gy * bw - gz * bx,
        -gw * bz - gx * by + gy * bx + gz * bw,
    ];
    let db = [
        gw * aw + gx * ax + gy * ay + gz * az,
        -gw * ax + gx * aw + gy * az - gz * ay,
        -gw * ay - gx * az + gy * aw + gz * ax,
        -gw * az + gx * ay - gy * ax + gz * aw,
    ];
    (da, db)
}

#[inline]
pub fn quat_norm<F: Real>(q: &Quat<F>) -> F {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Unit quaternion; the zero quaternion maps to identity.
pub fn quat_normalize<F: Real>(q: &Quat<F>) -> Quat<F> {
    let n = quat_norm(q);
    if n <= F::min_positive_value() {
        return quat_identity();
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Adjoint of normalisation: `(I − q̂q̂ᵀ) g / ‖q‖`.
pub fn quat_normalize_backward<F: Real>(q: &Quat<F>, g: &Quat<F>) -> Quat<F> {
    let n = quat_norm(q);
    if n <= F::min_positive_value() {
        return [F::zero(); 4];
    }
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let proj = u[0] * g[0] + u[1] * g[1] + u[2] * g[2] + u[3] * g[3];
    [
        (g[0] - proj * u[0]) / n,
        (g[1] - proj * u[1]) / n,
        (g[2] - proj * u[2]) / n,
        (g[3] - proj * u[3]) / n,
    ]
}

#[inline]
pub fn quat_identity<F: Real>() -> Quat<F> {
    [F::one(), F::zero(), F::zero(), F::zero()]
}

pub fn quat_from_axis_angle<F: Real>(axis: &Vec3<F>, angle: F) -> Quat<F> {
    let n = norm3(axis);
    let h = angle * F::of(0.5);
    let s = h.sin() / n;
    [h.cos(), axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Rotation matrix of a (unit) quaternion, using the polynomial form.
pub fn quat_to_mat<F: Real>(q: &Quat<F>) -> Mat3<F> {
    let [w, x, y, z] = *q;
    let two = F::of(2.0);
    let one = F::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Adjoint of [`quat_to_mat`] (derivative of the polynomial form).
pub fn quat_to_mat_backward<F: Real>(q: &Quat<F>, g: &Mat3<F>) -> Quat<F> {
    let [w, x, y, z] = *q;
    let two = F::of(2.0);
    let dw = -z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1];
    let dx = y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2]
        + z * g[2][0]
        + w * g[2][1]
        - two * x * g[2][2];
    let dy = -two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
        - w * g[2][0]
        + z * g[2][1]
        - two * y * g[2][2];
    let dz = -two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1]
        + y * g[1][2]
        + x * g[2][0]
        + y * g[2][1];
    [two * dw, two * dx, two * dy, two * dz]
}

/// Rotate a vector by a unit quaternion.
pub fn quat_rotate<F: Real>(q: &Quat<F>, v: &Vec3<F>) -> Vec3<F> {
    mat_vec(&quat_to_mat(q), v)
}

/// Inverse of a rigid 4×4 transform stored row-major.
pub fn rigid_inverse(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    for i in 0..3 {
        out[i][3] = -(0..3).map(|j| m[j][i] * m[j][3]).sum::<f64>();
    }
    out[3][3] = 1.0;
    out
}

/// General 4×4 inverse by cofactors; `None` when singular.
pub fn mat4_inverse(m: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let a: Vec<f64> = m.iter().flatten().copied().collect();
    let mut inv = [0.0f64; 16];
    inv[0] = a[5] * a[10] * a[15] - a[5] * a[11] * a[14] - a[9] * a[6] * a[15]
        + a[9] * a[7] * a[14]
        + a[13] * a[6] * a[11]
        - a[13] * a[7] * a[10];
    inv[4] = -a[4] * a[10] * a[15] + a[4] * a[11] * a[14] + a[8] * a[6] * a[15]
        - a[8] * a[7] * a[14]
        - a[12] * a[6] * a[11]
        + a[12] * a[7] * a[10];
    inv[8] = a[4] * a[9] * a[15] - a[4] * a[11] * a[13] - a[8] * a[5] * a[15]
        + a[8] * a[7] * a[13]
        + a[12] * a[5] * a[11]
        - a[12] * a[7] * a[9];
    inv[12] = -a[4] * a[9] * a[14] + a[4] * a[10] * a[13] + a[8] * a[5] * a[14]
        - a[8] * a[6] * a[13]
        - a[12] * a[5] * a[10]
        + a[12] * a[6] * a[9];
    inv[1] = -a[1] * a[10] * a[15] + a[1] * a[11] * a[14] + a[9] * a[2] * a[15]
        - a[9] * a[3] * a[14]
        - a[13] * a[2] * a[11]
        + a[13] * a[3] * a[10];
    inv[5] = a[0] * a[10] * a[15] - a[0] * a[11] * a[14] - a[8] * a[2] * a[15]
        + a[8] * a[3] * a[14]
        + a[12] * a[2] * a[11]
        - a[12] * a[3] * a[10];
    inv[9] = -a[0] * a[9] * a[15] + a[0] * a[11] * a[13] + a[8] * a[1] * a[15]
        - a[8] * a[3] * a[13]
        - a[12] * a[1] * a[11]
        + a[12] * a[3] * a[9];
    inv[13] = a[0] * a[9] * a[14] - a[0] * a[10] * a[13] - a[8] * a[1] * a[14]
        + a[8] * a[2] * a[13]
        + a[12] * a[1] * a[10]
        - a[12] * a[2] * a[9];
    inv[2] = a[1] * a[6] * a[15] - a[1] * a[7] * a[14] - a[5] * a[2] * a[15]
        + a[5] * a[3] * a[14]
        + a[13] * a[2] * a[7]
        - a[13] * a[3] * a[6];
    inv[6] = -a[0] * a[6] * a[15] + a[0] * a[7] * a[14] + a[4] * a[2] * a[15]
        - a[4] * a[3] * a[14]
        - a[12] * a[2] * a[7]
        + a[12] * a[3] * a[6];
    inv[10] = a[0] * a[5] * a[15] - a[0] * a[7] * a[13] - a[4] * a[1] * a[15]
        + a[4] * a[3] * a[13]
        + a[12] * a[1] * a[7]
        - a[12] * a[3] * a[5];
    inv[14] = -a[0] * a[5] * a[14] + a[0] * a[6] * a[13] + a[4] * a[1] * a[14]
        - a[4] * a[2] * a[13]
        - a[12] * a[1] * a[6]
        + a[12] * a[2] * a[5];
    inv[3] = -a[1] * a[6] * a[11] + a[1] * a[7] * a[10] + a[5] * a[2] * a[11]
        - a[5] * a[3] * a[10]
        - a[9] * a[2] * a[7]
        + a[9] * a[3] * a[6];
    inv[7] = a[0] * a[6] * a[11] - a[0] * a[7] * a[10] - a[4] * a[2] * a[11]
        + a[4] * a[3] * a[10]
        + a[8] * a[2] * a[7]
        - a[8] * a[3] * a[6];
    inv[11] = -a[0] * a[5] * a[11] + a[0] * a[7] * a[9] + a[4] * a[1] * a[11]
        - a[4] * a[3] * a[9]
        - a[8] * a[1] * a[7]
        + a[8] * a[3] * a[5];
    inv[15] = a[0] * a[5] * a[10] - a[0] * a[6] * a[9] - a[4] * a[1] * a[10]
        + a[4] * a[2] * a[9]
        + a[8] * a[1] * a[6]
        - a[8] * a[2] * a[5];
    let det = a[0] * inv[0] + a[1] * inv[4] + a[2] * inv[8] + a[3] * inv[12];
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    if !det.is_finite() || det.abs() < 1e-12 * scale.powi(4) {
        return None;
    }
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = inv[i * 4 + j] / det;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_quat<Fun: Fn(&Quat<f64>) -> f64>(f: Fun, q: &Quat<f64>) -> Quat<f64> {
        let h = 1e-6;
        let mut out = [0.0; 4];
        for k in 0..4 {
            let mut qp = *q;
            let mut qm = *q;
            qp[k] += h;
            qm[k] -= h;
            out[k] = (f(&qp) - f(&qm)) / (2.0 * h);
        }
        out
    }

    #[test]
    fn quat_mul_matches_rotation_composition() {
        let a = quat_normalize(&[0.3f64, -0.2, 0.9, 0.1]);
        let b = quat_normalize(&[-0.5, 0.4, 0.1, 0.7]);
        let ab = quat_to_mat(&quat_mul(&a, &b));
        let expected = mat_mul(&quat_to_mat(&a), &quat_to_mat(&b));
        for i in 0..3 {
            for j in 0..3 {
                assert!((ab[i][j] - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quaternion_adjoints_match_finite_differences() {
        let a = [0.3, -0.2, 0.9, 0.1];
        let b = [-0.5, 0.4, 0.1, 0.7];
        let g = [0.7, -1.1, 0.25, 0.4];
        let (da, db) = quat_mul_backward(&a, &b, &g);
        let fa = fd_quat(
            |q| {
                let r = quat_mul(q, &b);
                (0..4).map(|i| r[i] * g[i]).sum()
            },
            &a,
        );
        let fb = fd_quat(
            |q| {
                let r = quat_mul(&a, q);
                (0..4).map(|i| r[i] * g[i]).sum()
            },
            &b,
        );
        for k in 0..4 {
            assert!((da[k] - fa[k]).abs() < 1e-8);
            assert!((db[k] - fb[k]).abs() < 1e-8);
        }

        let dn = quat_normalize_backward(&a, &g);
        let fnorm = fd_quat(
            |q| {
                let r = quat_normalize(q);
                (0..4).map(|i| r[i] * g[i]).sum()
            },
            &a,
        );
        for k in 0..4 {
            assert!((dn[k] - fnorm[k]).abs() < 1e-8);
        }

        let gm = [[0.3, -0.7, 1.2], [0.5, 0.1, -0.4], [-0.9, 0.6, 0.2]];
        let dm = quat_to_mat_backward(&a, &gm);
        let fm = fd_quat(
            |q| {
                let r = quat_to_mat(q);
                (0..3)
                    .flat_map(|i| (0..3).map(move |j| (i, j)))
                    .map(|(i, j)| r[i][j] * gm[i][j])
                    .sum()
            },
            &a,
        );
        for k in 0..4 {
            assert!((dm[k] - fm[k]).abs() < 1e-8, "{k}: {} vs {}", dm[k], fm[k]);
        }
    }

    #[test]
    fn inverses() {
        let r = quat_to_mat(&quat_normalize(&[0.4, 0.1, -0.3, 0.8]));
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
        }
        m[0][3] = 1.0;
        m[1][3] = -2.0;
        m[2][3] = 0.5;
        m[3][3] = 1.0;
        let a = rigid_inverse(&m);
        let b = mat4_inverse(&m).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-12);
            }
        }
        let mut singular = m;
        singular[2] = singular[1];
        assert!(mat4_inverse(&singular).is_none());
    }
}
