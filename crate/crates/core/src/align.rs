//! Closed-form rotation alignment in SO(m).

use nalgebra::DMatrix;

/// The `U` in SO(m) maximising `tr(U^T K)` for a row-major `m x m` matrix `K`,
/// together with the maximum value.
///
/// With `K = W S V^T`, `U = W diag(1, .., 1, det(W V^T)) V^T`. When the
/// determinant has to be corrected, the axis of least singular value is the
/// one flipped.
pub fn polar_rotation(k: &[f64], m: usize) -> (Vec<f64>, f64) {
    assert_eq!(k.len(), m * m, "cross matrix must be m x m");
    if m == 1 {
        return (vec![1.0], k[0]);
    }
    let mat = DMatrix::from_row_slice(m, m, k);
    let svd = mat.svd(true, true);
    let w = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let sv = svd.singular_values;
    // nalgebra does not promise an order; flip the least singular direction
    let mut least = 0;
    for i in 1..m {
        if sv[i] < sv[least] {
            least = i;
        }
    }
    let det = (&w * &vt).determinant();
    let mut diag = DMatrix::<f64>::identity(m, m);
    let mut value: f64 = sv.iter().sum();
    if det < 0.0 {
        diag[(least, least)] = -1.0;
        value -= 2.0 * sv[least];
    }
    let u = w * diag * vt;
    let mut out = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            out[a * m + b] = u[(a, b)];
        }
    }
    (out, value)
}

/// Row-major `U^T A U`.
pub fn conjugate(u: &[f64], a: &[f64], m: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            tmp[i * m + j] = (0..m).map(|k| a[i * m + k] * u[k * m + j]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = (0..m).map(|k| u[k * m + i] * tmp[k * m + j]).sum();
        }
    }
    out
}

/// Row-major `U^T v`.
pub fn apply_transpose(u: &[f64], v: &[f64], out: &mut [f64]) {
    let m = v.len();
    for a in 0..m {
        out[a] = (0..m).map(|b| u[b * m + a] * v[b]).sum();
    }
}

/// Row-major `U v`.
pub fn apply(u: &[f64], v: &[f64], out: &mut [f64]) {
    let m = v.len();
    for a in 0..m {
        out[a] = (0..m).map(|b| u[a * m + b] * v[b]).sum();
    }
}

/// The rotation by `theta` in the `(i, j)` plane of R^m, row-major.
pub fn plane_rotation(m: usize, i: usize, j: usize, theta: f64) -> Vec<f64> {
    let mut u = vec![0.0; m * m];
    for a in 0..m {
        u[a * m + a] = 1.0;
    }
    let (s, c) = theta.sin_cos();
    u[i * m + i] = c;
    u[j * m + j] = c;
    u[i * m + j] = -s;
    u[j * m + i] = s;
    u
}

/// Largest deviation of `U^T U` from the identity.
pub fn orthogonality_defect(u: &[f64], m: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..m {
        for b in 0..m {
            let g: f64 = (0..m).map(|k| u[k * m + a] * u[k * m + b]).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g - want).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(u: &[f64], m: usize) -> f64 {
        DMatrix::from_row_slice(m, m, u).determinant()
    }

    #[test]
    fn recovers_a_rotation() {
        let r = plane_rotation(3, 0, 2, 0.7);
        let (u, v) = polar_rotation(&r, 3);
        for (a, b) in u.iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_corrected() {
        let k = [1.0, 0.0, 0.0, -0.5];
        let (u, v) = polar_rotation(&k, 2);
        assert!((det(&u, 2) - 1.0).abs() < 1e-12);
        assert!(orthogonality_defect(&u, 2) < 1e-12);
        // best rotation keeps the dominant axis
        assert!((v - 0.5).abs() < 1e-12);
        assert!((u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_angle_scan_in_2d() {
        let k = [0.3, -1.2, 0.8, 0.1];
        let (_, v) = polar_rotation(&k, 2);
        let best = (0..100_000)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 100_000.0;
                let u = plane_rotation(2, 0, 1, t);
                (0..4).map(|j| u[j] * k[j]).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(v >= best - 1e-12);
        assert!(v - best < 1e-8);
    }

    #[test]
    fn conjugation_round_trip() {
        let u = plane_rotation(3, 1, 2, -0.4);
        let a = [0.0, 1.0, -2.0, -1.0, 0.0, 0.5, 2.0, -0.5, 0.0];
        let b = conjugate(&u, &a, 3);
        let ut: Vec<f64> = (0..9).map(|i| u[(i % 3) * 3 + i / 3]).collect();
        let back = conjugate(&ut, &b, 3);
        for (x, y) in a.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
