use super::{
    compose_covariance, compose_covariance_backward, Camera, Splat2D, Splat3D, Splat3DGrad,
    COV2D_DILATION,
};
use crate::math::{mat_mul, mat_t_vec, mat_transpose, mat_vec, Mat3, Vec3};
use crate::real::Real;

/// Gradient of a loss with respect to one [`Splat2D`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Splat2DGrad<F = f32> {
    pub mu2d: [F; 2],
    /// With respect to the conic parameters `(a, b, c)` of
    /// `a·dx² + 2b·dx·dy + c·dy²`.
    pub conic: [F; 3],
    pub alpha_base: F,
    pub color: [F; 3],
}

struct Frame<F> {
    rot: Mat3<F>,
    p: Vec3<F>,
    fx: F,
    fy: F,
}

fn to_camera<F: Real>(mu: &Vec3<F>, camera: &Camera) -> Frame<F> {
    let r64 = camera.rotation();
    let t64 = camera.translation();
    let mut rot = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rot[i][j] = F::of(r64[i][j]);
        }
    }
    let rm = mat_vec(&rot, mu);
    let p = [
        rm[0] + F::of(t64[0]),
        rm[1] + F::of(t64[1]),
        rm[2] + F::of(t64[2]),
    ];
    Frame {
        rot,
        p,
        fx: F::of(camera.focal[0]),
        fy: F::of(camera.focal[1]),
    }
}

/// Jacobian of the pinhole projection at camera-space point `p`, rows 0 and 1.
fn jacobian<F: Real>(p: &Vec3<F>, fx: F, fy: F) -> [[F; 3]; 2] {
    let [x, y, z] = *p;
    let iz = F::one() / z;
    [
        [fx * iz, F::zero(), -fx * x * iz * iz],
        [F::zero(), fy * iz, -fy * y * iz * iz],
    ]
}

/// Project `g` into `camera`. Returns `None` when the centre is outside the
/// `(near, far)` depth range or the footprint misses the image.
pub fn project<F: Real>(g: &Splat3D<F>, camera: &Camera, cutoff_sigma: f64) -> Option<Splat2D<F>> {
    let fr = to_camera(&g.mu, camera);
    let [x, y, z] = fr.p;
    let zf = z.as_f64();
    if !(zf > camera.near && zf < camera.far) {
        return None;
    }
    let mu2d = [
        fr.fx * x / z + F::of(camera.principal[0]),
        fr.fy * y / z + F::of(camera.principal[1]),
    ];
    let sigma = compose_covariance(&g.rot, &g.log_scale);
    let sigma_cam = mat_mul(&mat_mul(&fr.rot, &sigma), &mat_transpose(&fr.rot));
    let j = jacobian(&fr.p, fr.fx, fr.fy);
    let mut cov = [[F::zero(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = F::zero();
            for k in 0..3 {
                for l in 0..3 {
                    acc += j[a][k] * sigma_cam[k][l] * j[b][l];
                }
            }
            cov[a][b] = acc;
        }
    }
    let cov2d = [cov[0][0], F::of(0.5) * (cov[0][1] + cov[1][0]), cov[1][1]];
    let d = F::of(COV2D_DILATION);
    let (a, b, c) = (cov2d[0] + d, cov2d[1], cov2d[2] + d);
    let det = a * c - b * b;
    if !(det > F::zero()) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = F::of(0.5) * (a + c);
    let lambda_max = mid + (mid * mid - det).max(F::zero()).sqrt();
    let radius = if cutoff_sigma.is_finite() {
        F::of(cutoff_sigma) * lambda_max.sqrt()
    } else {
        F::infinity()
    };
    if radius.is_finite() {
        let (w, h) = (F::of(camera.width as f64), F::of(camera.height as f64));
        if mu2d[0] + radius < F::zero()
            || mu2d[0] - radius > w
            || mu2d[1] + radius < F::zero()
            || mu2d[1] - radius > h
        {
            return None;
        }
    }
    Some(Splat2D {
        mu2d,
        cov2d,
        conic,
        depth: z,
        color: g.color,
        alpha_base: g.opacity,
        radius,
    })
}

/// Adjoint of [`project`] for a splat that was not culled.
pub fn project_backward<F: Real>(
    g: &Splat3D<F>,
    s: &Splat2D<F>,
    camera: &Camera,
    d: &Splat2DGrad<F>,
) -> Splat3DGrad<F> {
    let fr = to_camera(&g.mu, camera);
    let [x, y, z] = fr.p;
    let (fx, fy) = (fr.fx, fr.fy);
    let sigma = compose_covariance(&g.rot, &g.log_scale);
    let sigma_cam = mat_mul(&mat_mul(&fr.rot, &sigma), &mat_transpose(&fr.rot));
    let j = jacobian(&fr.p, fx, fy);

    // Conic gradient as a symmetric matrix, then d(K⁻¹) = −K dK K.
    let half = F::of(0.5);
    let k = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
    let gk = [
        [d.conic[0], half * d.conic[1]],
        [half * d.conic[1], d.conic[2]],
    ];
    let mut kg = [[F::zero(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            kg[a][b] = k[a][0] * gk[0][b] + k[a][1] * gk[1][b];
        }
    }
    let mut gcov = [[F::zero(); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            gcov[a][b] = -(kg[a][0] * k[0][b] + kg[a][1] * k[1][b]);
        }
    }

    // cov2d = J Σc Jᵀ
    let mut d_sigma_cam = [[F::zero(); 3]; 3];
    for kk in 0..3 {
        for l in 0..3 {
            let mut acc = F::zero();
            for a in 0..2 {
                for b in 0..2 {
                    acc += j[a][kk] * gcov[a][b] * j[b][l];
                }
            }
            d_sigma_cam[kk][l] = acc;
        }
    }
    let mut dj = [[F::zero(); 3]; 2];
    for a in 0..2 {
        for kk in 0..3 {
            let mut acc = F::zero();
            for b in 0..2 {
                for l in 0..3 {
                    acc += (gcov[a][b] + gcov[b][a]) * j[b][l] * sigma_cam[l][kk];
                }
            }
            dj[a][kk] = acc;
        }
    }
    let d_sigma = mat_mul(&mat_mul(&mat_transpose(&fr.rot), &d_sigma_cam), &fr.rot);
    let (d_rot, d_log_scale) = compose_covariance_backward(&g.rot, &g.log_scale, &d_sigma);

    let iz = F::one() / z;
    let iz2 = iz * iz;
    let two = F::of(2.0);
    let mut dp = [F::zero(); 3];
    // Jacobian entries: J00 = fx/z, J02 = −fx x/z², J11 = fy/z, J12 = −fy y/z².
    dp[0] += -fx * iz2 * dj[0][2];
    dp[1] += -fy * iz2 * dj[1][2];
    dp[2] += -fx * iz2 * dj[0][0] + two * fx * x * iz2 * iz * dj[0][2] - fy * iz2 * dj[1][1]
        + two * fy * y * iz2 * iz * dj[1][2];
    // μ′ = (fx x/z + cx, fy y/z + cy)
    dp[0] += fx * iz * d.mu2d[0];
    dp[1] += fy * iz * d.mu2d[1];
    dp[2] += -fx * x * iz2 * d.mu2d[0] - fy * y * iz2 * d.mu2d[1];

    Splat3DGrad {
        mu: mat_t_vec(&fr.rot, &dp),
        rot: d_rot,
        log_scale: d_log_scale,
        color: d.color,
        opacity: d.alpha_base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_camera(f: f64, w: usize, h: usize) -> Camera {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Camera::new(
            m,
            [f, f],
            [w as f64 / 2.0, h as f64 / 2.0],
            w,
            h,
            0.1,
            100.0,
        )
        .unwrap()
    }

    fn splat(mu: Vec3<f64>, log_scale: f64) -> Splat3D<f64> {
        Splat3D {
            mu,
            rot: [1.0, 0.0, 0.0, 0.0],
            log_scale: [log_scale; 3],
            color: [1.0; 3],
            opacity: 0.5,
        }
    }

    #[test]
    fn on_axis_unit_covariance() {
        // Σ = I at camera-space (0,0,1) with unit focal lengths.
        let cam = identity_camera(1.0, 8, 8);
        let s = project(&splat([0.0, 0.0, 1.0], 0.0), &cam, 3.0).unwrap();
        assert_eq!(s.mu2d, [4.0, 4.0]);
        assert!(
            (s.cov2d[0] - 1.0).abs() < 1e-15
                && s.cov2d[1].abs() < 1e-15
                && (s.cov2d[2] - 1.0).abs() < 1e-15
        );
    }

    #[test]
    fn isotropic_scaling_with_depth() {
        // Σ = c·I at depth z ⇒ Σ′ = c f²/z² I₂ (symbolic Jacobian at x = y = 0).
        let (f, z, c) = (20.0, 2.5, 0.09f64);
        let cam = identity_camera(f, 64, 64);
        let s = project(&splat([0.0, 0.0, z], 0.5 * c.ln()), &cam, 3.0).unwrap();
        let expected = c * f * f / (z * z);
        assert!((s.cov2d[0] - expected).abs() < 1e-12);
        assert!((s.cov2d[2] - expected).abs() < 1e-12);
        assert!(s.cov2d[1].abs() < 1e-12);
    }

    #[test]
    fn near_plane_is_culled() {
        let cam = identity_camera(10.0, 16, 16);
        assert!(project(&splat([0.0, 0.0, 0.1], -2.0), &cam, 3.0).is_none());
        assert!(project(&splat([0.0, 0.0, 0.1 + 1e-9], -2.0), &cam, 3.0).is_some());
        assert!(project(&splat([0.0, 0.0, 100.0], -2.0), &cam, 3.0).is_none());
    }

    #[test]
    fn off_screen_footprint_is_culled() {
        let cam = identity_camera(10.0, 16, 16);
        assert!(project(&splat([5.0, 0.0, 1.0], -3.0), &cam, 3.0).is_none());
        // The same splat survives when the footprint is unbounded.
        assert!(project(&splat([5.0, 0.0, 1.0], -3.0), &cam, f64::INFINITY).is_some());
    }

    #[test]
    fn dilated_covariance_eigenvalues_respect_the_floor() {
        let cam = identity_camera(30.0, 32, 32);
        let mut g = splat([0.1, -0.2, 2.0], -6.0);
        g.log_scale = [-6.0, 0.3, -8.0];
        g.rot = crate::math::quat_normalize(&[0.3, 0.5, -0.1, 0.8]);
        let s = project(&g, &cam, 3.0).unwrap();
        let [a, b, c] = s.dilated_cov();
        let mid = 0.5 * (a + c);
        let lmin = mid - (mid * mid - (a * c - b * b)).sqrt();
        assert!(lmin >= COV2D_DILATION - 1e-9);
    }
}
