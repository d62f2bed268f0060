//! Slice-level dense kernels on column-major lower Cholesky factors.
//! Only the lower triangle of a factor is read.

use nalgebra::DMatrix;

/// Lower Cholesky factor written over the lower triangle of `a`; the
/// strict upper triangle is left untouched. Returns `false` if a pivot is
/// not positive beyond round-off of the original diagonal entry.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let s = a.as_mut_slice();
    for j in 0..n {
        let (left, right) = s.split_at_mut(j * n);
        let col_j = &mut right[..n];
        let floor = 4.0 * f64::EPSILON * col_j[j].abs();
        for k in 0..j {
            let col_k = &left[k * n..(k + 1) * n];
            let f = col_k[j];
            if f != 0.0 {
                for (x, y) in col_j[j..].iter_mut().zip(&col_k[j..]) {
                    *x -= f * y;
                }
            }
        }
        let d = col_j[j];
        if !(d > floor && d.is_finite()) {
            return false;
        }
        let d = d.sqrt();
        col_j[j] = d;
        let inv = 1.0 / d;
        for x in col_j[j + 1..].iter_mut() {
            *x *= inv;
        }
    }
    true
}

/// `b <- L^{-1} b`.
pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let s = l.as_slice();
    for k in 0..n {
        let col = &s[k * n..(k + 1) * n];
        let xk = b[k] / col[k];
        b[k] = xk;
        if xk != 0.0 {
            for (bi, li) in b[k + 1..].iter_mut().zip(&col[k + 1..]) {
                *bi -= xk * li;
            }
        }
    }
}

/// `b <- L^{-T} b`.
pub(crate) fn solve_upper_transposed(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let s = l.as_slice();
    for k in (0..n).rev() {
        let col = &s[k * n..(k + 1) * n];
        let dot: f64 = col[k + 1..].iter().zip(&b[k + 1..]).map(|(a, c)| a * c).sum();
        b[k] = (b[k] - dot) / col[k];
    }
}

/// `b <- (L L^T)^{-1} b`.
pub(crate) fn solve_spd(l: &DMatrix<f64>, b: &mut [f64]) {
    solve_lower(l, b);
    solve_upper_transposed(l, b);
}

/// `(L L^T)^{-1}`, symmetric.
pub(crate) fn spd_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let s = l.as_slice();
    // w = L^{-1}, lower triangular
    let mut w = DMatrix::<f64>::zeros(n, n);
    {
        let ws = w.as_mut_slice();
        for j in 0..n {
            let col = &mut ws[j * n..(j + 1) * n];
            col[j] = 1.0;
            for k in j..n {
                let lk = &s[k * n..(k + 1) * n];
                let xk = col[k] / lk[k];
                col[k] = xk;
                if xk != 0.0 {
                    for (ci, li) in col[k + 1..].iter_mut().zip(&lk[k + 1..]) {
                        *ci -= xk * li;
                    }
                }
            }
        }
    }
    let ws = w.as_slice();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let wj = &ws[j * n..(j + 1) * n];
        for i in j..n {
            let wi = &ws[i * n..(i + 1) * n];
            let v: f64 = wi[i..].iter().zip(&wj[i..]).map(|(a, b)| a * b).sum();
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
