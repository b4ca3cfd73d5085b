//! Axis-angle helpers on SO(3).

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn hat(v: [f64; 3]) -> Mat3 {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn transpose(a: &Mat3) -> Mat3 {
    [0, 1, 2].map(|i| [a[0][i], a[1][i], a[2][i]])
}

pub fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn combine(a: f64, b: f64, v: [f64; 3]) -> Mat3 {
    let k = hat(v);
    let k2 = mat_mul(&k, &k);
    let mut m = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    m
}

/// Rodrigues' formula.
pub fn exp_so3(v: [f64; 3]) -> Mat3 {
    let phi2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let phi = phi2.sqrt();
    let (a, b) = if phi < 1e-6 {
        (1.0 - phi2 / 6.0, 0.5 - phi2 / 24.0)
    } else {
        (phi.sin() / phi, (1.0 - phi.cos()) / phi2)
    };
    combine(a, b, v)
}

/// Left Jacobian: `exp(v + δ) ≈ exp(J_l(v) δ) · exp(v)`.
pub fn left_jacobian(v: [f64; 3]) -> Mat3 {
    let phi2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let phi = phi2.sqrt();
    let (a, b) = if phi < 1e-6 {
        (0.5 - phi2 / 24.0, 1.0 / 6.0 - phi2 / 120.0)
    } else {
        ((1.0 - phi.cos()) / phi2, (phi - phi.sin()) / (phi2 * phi))
    };
    combine(a, b, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn exp_is_a_rotation(v in prop::array::uniform3(-3.0f64..3.0)) {
            let r = exp_so3(v);
            let rtr = mat_mul(&transpose(&r), &r);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((rtr[i][j] - IDENTITY[i][j]).abs() < 1e-12);
                }
            }
            prop_assert!((det(&r) - 1.0).abs() < 1e-12);
            // axis is fixed
            let rv = mat_vec(&r, &v);
            for a in 0..3 {
                prop_assert!((rv[a] - v[a]).abs() < 1e-12);
            }
        }

        #[test]
        fn left_jacobian_matches_differences(v in prop::array::uniform3(-2.5f64..2.5), d in prop::array::uniform3(-1.0f64..1.0)) {
            let h = 1e-6;
            let r = exp_so3(v);
            let rp = exp_so3([v[0] + h * d[0], v[1] + h * d[1], v[2] + h * d[2]]);
            let rm = exp_so3([v[0] - h * d[0], v[1] - h * d[1], v[2] - h * d[2]]);
            // (dR/dh) Rᵀ = hat(J_l d)
            let mut dr = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    dr[i][j] = (rp[i][j] - rm[i][j]) / (2.0 * h);
                }
            }
            let w = mat_mul(&dr, &transpose(&r));
            let expect = hat(mat_vec(&left_jacobian(v), &d));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((w[i][j] - expect[i][j]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let a = exp_so3([1e-7, 0.0, 0.0]);
        let b = exp_so3([1.0000001e-6, 0.0, 0.0]);
        assert!((a[1][2] + 1e-7).abs() < 1e-15);
        assert!((b[1][2] + 1.0000001e-6).abs() < 1e-15);
        let j = left_jacobian([0.0; 3]);
        assert_eq!(j, IDENTITY);
    }
}
