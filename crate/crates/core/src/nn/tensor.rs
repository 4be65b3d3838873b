//! Row-major dense kernels. Every output element accumulates over the inner
//! dimension in the same order regardless of its row, so permuting input rows
//! permutes output rows bit-for-bit.

/// `a (n x k) * b (k x m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `out (k x m) += a^T (k x n) * g (n x m)`.
pub fn matmul_tn_acc(a: &[f64], g: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aik * gv;
            }
        }
    }
}

/// `g (n x m) * w^T` where `w` is `k x m`; result is `n x k`.
pub fn matmul_nt(g: &[f64], w: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for kk in 0..k {
            let wrow = &w[kk * m..(kk + 1) * m];
            out[i * k + kk] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
        }
    }
    out
}

pub fn add_bias(x: &mut [f64], b: &[f64]) {
    let m = b.len();
    for row in x.chunks_exact_mut(m) {
        for (v, &bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

pub fn col_sum_acc(g: &[f64], out: &mut [f64]) {
    let m = out.len();
    for row in g.chunks_exact(m) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Sum after sorting, so the result does not depend on term order.
pub fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}
