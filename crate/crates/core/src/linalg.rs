//! Small dense helpers for the n <= 3 matrices that appear in metric evaluation.

use nalgebra::{DMatrix, DVector};

pub const MAX_DIM: usize = 3;

pub type Mat = [[f64; MAX_DIM]; MAX_DIM];

pub const ZERO: Mat = [[0.0; MAX_DIM]; MAX_DIM];

pub fn identity(n: usize) -> Mat {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = 1.0;
    }
    m
}

/// Lower Cholesky factor, or `None` if `a` is not positive definite.
pub fn cholesky(n: usize, a: &Mat) -> Option<Mat> {
    let mut l = ZERO;
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

pub fn inverse_spd(n: usize, a: &Mat) -> Option<Mat> {
    let l = cholesky(n, a)?;
    // invert L, then A^{-1} = L^{-T} L^{-1}
    let mut li = ZERO;
    for i in 0..n {
        li[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * li[k][j];
            }
            li[i][j] = s / l[i][i];
        }
    }
    let mut inv = ZERO;
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += li[k][i] * li[k][j];
            }
            inv[i][j] = s;
            inv[j][i] = s;
        }
    }
    Some(inv)
}

pub fn det(n: usize, a: &Mat) -> f64 {
    match n {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        3 => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
        _ => to_dmatrix(n, a).determinant(),
    }
}

pub fn condition_number(n: usize, a: &Mat) -> f64 {
    let sv = to_dmatrix(n, a).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn to_dmatrix(n: usize, a: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| a[i][j])
}

pub fn mat_vec(n: usize, a: &Mat, v: &[f64]) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for i in 0..n {
        out[i] = (0..n).map(|j| a[i][j] * v[j]).sum();
    }
    out
}

pub fn quad_form(n: usize, a: &Mat, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i][j] * u[i] * v[j];
        }
    }
    s
}

/// Solve a small general system with partial pivoting (used by Newton iterations).
pub fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    a.lu().solve(&b)
}
