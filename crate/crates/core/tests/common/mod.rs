//! Dense oracles shared by the integration tests.
#![allow(dead_code)]

use joule_fem::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn to_nalgebra(a: &SparseMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        for (j, v) in a.row(i) {
            m[(i, j)] += v;
        }
    }
    m
}

/// Sparse symmetric matrix with random off-diagonal pattern, made positive
/// definite by strict diagonal dominance.
pub fn random_spd(rng: &mut impl Rng, n: usize) -> SparseMatrix {
    let density = (4.0 / n as f64).min(1.0);
    let mut rows = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..i {
            if rng.gen_bool(density) {
                let v = rng.gen_range(-1.0..1.0);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
    }
    for i in 0..n {
        let off: f64 = rows[i].iter().map(|v| v.abs()).sum();
        rows[i][i] = off + rng.gen_range(0.05..2.0);
    }
    SparseMatrix::from_dense(&rows)
}

pub fn dense_solve(a: &SparseMatrix, b: &[f64]) -> Vec<f64> {
    let m = to_nalgebra(a);
    let x = m
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("nonsingular oracle matrix");
    x.iter().copied().collect()
}

/// Solution of `A x = b` with `x_C = g` prescribed, from the reduced system
/// `A_FF x_F = b_F - A_FC g`.
pub fn reduced_solve(a: &SparseMatrix, b: &[f64], constraints: &[(usize, f64)]) -> Vec<f64> {
    let n = a.nrows();
    let m = to_nalgebra(a);
    let mut fixed = vec![None; n];
    for &(i, v) in constraints {
        fixed[i] = Some(v);
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut x: Vec<f64> = fixed.iter().map(|v| v.unwrap_or(0.0)).collect();
    if free.is_empty() {
        return x;
    }
    let aff = DMatrix::from_fn(free.len(), free.len(), |r, c| m[(free[r], free[c])]);
    let rhs = DVector::from_fn(free.len(), |r, _| {
        let i = free[r];
        let mut s = b[i];
        for (j, g) in fixed.iter().enumerate() {
            if let Some(g) = g {
                s -= m[(i, j)] * g;
            }
        }
        s
    });
    let xf = aff.lu().solve(&rhs).expect("nonsingular reduced block");
    for (r, &i) in free.iter().enumerate() {
        x[i] = xf[r];
    }
    x
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
