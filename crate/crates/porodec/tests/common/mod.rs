//! Helpers shared by the integration suites: dense reference solvers that are
//! independent of the sparse kit, and random well-posed system generators.
#![allow(dead_code)]

use porodec::femkit::PoroParams;
use porodec::models::{TimeLoad, TwoFieldSystem};
use porodec::sparsekit::SparseMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense LU solve with partial pivoting. O(n^3), for oracle use only.
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    assert_eq!(a.len(), n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-300, "singular oracle matrix");
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            if m == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi rotation method.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Random dense SPD matrix B^T B + shift * I with entries of B in [-1, 1].
pub fn random_dense_spd(rng: &mut ChaCha8Rng, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut s = if i == j { shift } else { 0.0 };
            for (bi, bj) in b.iter().map(|r| (r[i], r[j])) {
                s += bi * bj;
            }
            a[i][j] = s;
        }
    }
    a
}

/// Random consistent two-field system with dense SPD blocks and a coupling
/// scaled small enough to keep the decoupled iteration contractive.
pub fn random_two_field(rng: &mut ChaCha8Rng, max_dim: usize) -> TwoFieldSystem {
    let nu = rng.gen_range(2..=max_dim);
    let np = rng.gen_range(1..=max_dim);
    let k_a = SparseMatrix::from_dense(&random_dense_spd(rng, nu, 1.0));
    let k_b = SparseMatrix::from_dense(&random_dense_spd(rng, np, 0.5));
    let m_c = SparseMatrix::from_dense(&random_dense_spd(rng, np, 0.5));
    let scale = 0.05 / ((nu * np) as f64).sqrt();
    let d_rows: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..nu).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let d = SparseMatrix::from_dense(&d_rows);
    let f = TimeLoad::constant((0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let g = TimeLoad::separable(
        (0..np).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        f64::sin,
        f64::cos,
    );
    let p0 = (0..np).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let params = PoroParams {
        lambda: 0.0,
        mu: 1.0,
        kappa_over_nu: vec![1.0],
        inv_m: 1.0,
        alpha: vec![1.0],
        beta: vec![vec![0.0]],
    };
    TwoFieldSystem::with_consistent_u0(k_a, k_b, m_c, d, f, g, p0, params, None)
        .expect("random SPD blocks give a consistent system")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
