//! Linear solves for the Newton step.
//!
//! Dense Gaussian elimination with partial pivoting for small systems and a
//! right-looking sparse LU with minimum-degree ordering for larger ones.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular {
    /// Elimination step at which no usable pivot was found.
    pub step: usize,
}

const PIVOT_TOL: f64 = 1e-14;

/// Square matrix in coordinate form. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, val));
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for &(r, c, v) in &self.entries {
            a[r * self.n + c] += v;
        }
        a
    }

    /// `A x` without assembling.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }
}

/// Solve `A x = b` for row-major dense `a` (consumed).
pub fn dense_solve(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>, Singular> {
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (piv, pmax) = (k..n)
            .map(|i| (i, a[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pmax > PIVOT_TOL * scale) {
            return Err(Singular { step: k });
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        let d = a[k * n + k];
        for i in (k + 1)..n {
            let l = a[i * n + k] / d;
            if l == 0.0 {
                continue;
            }
            a[i * n + k] = 0.0;
            for j in (k + 1)..n {
                a[i * n + j] -= l * a[k * n + j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in (k + 1)..n {
            s -= a[k * n + j] * x[j];
        }
        x[k] = s / a[k * n + k];
    }
    Ok(x)
}

/// Greedy minimum-degree ordering on the pattern of `A + A^T`.
pub fn minimum_degree_order(t: &Triplets) -> Vec<usize> {
    use std::collections::BTreeSet;
    let n = t.n;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(r, c, _) in &t.entries {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !eliminated[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("at least one node remains");
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
    }
    order
}

/// Sparse LU factors of `P A P^T` for a symmetric permutation `P`.
///
/// Pivots follow the fill-reducing order; there is no numerical pivoting, so
/// a tiny pivot is reported as [`Singular`] and the caller is expected to
/// fall back to [`dense_solve`].
#[derive(Debug, Clone)]
pub struct SparseLu {
    n: usize,
    /// `perm[k]` = original index eliminated at step k.
    perm: Vec<usize>,
    /// Strictly lower factor, per column: (row, multiplier).
    lower: Vec<Vec<(usize, f64)>>,
    /// Upper factor, per row: diagonal first, then (col, value) with col > row.
    upper: Vec<Vec<(usize, f64)>>,
}

impl SparseLu {
    pub fn factor(t: &Triplets) -> Result<Self, Singular> {
        let n = t.n;
        let perm = minimum_degree_order(t);
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(r, c, v) in &t.entries {
            let (pr, pc) = (inv[r], inv[c]);
            let e = rows[pr].entry(pc).or_insert_with(|| {
                col_rows[pc].push(pr);
                0.0
            });
            *e += v;
        }
        let scale = rows
            .iter()
            .flat_map(|r| r.values())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);

        let mut lower = vec![Vec::new(); n];
        let mut upper = vec![Vec::new(); n];
        for k in 0..n {
            let pivot_row = std::mem::take(&mut rows[k]);
            let d = pivot_row.get(&k).copied().unwrap_or(0.0);
            if !(d.abs() > PIVOT_TOL * scale) {
                return Err(Singular { step: k });
            }
            let tail: Vec<(usize, f64)> = pivot_row.range(k + 1..).map(|(&c, &v)| (c, v)).collect();
            let mut targets = std::mem::take(&mut col_rows[k]);
            targets.sort_unstable();
            targets.dedup();
            for i in targets.into_iter().filter(|&i| i > k) {
                let Some(aik) = rows[i].remove(&k) else {
                    continue;
                };
                let l = aik / d;
                lower[k].push((i, l));
                for &(j, u) in &tail {
                    let e = rows[i].entry(j).or_insert_with(|| {
                        col_rows[j].push(i);
                        0.0
                    });
                    *e -= l * u;
                }
            }
            let mut u = Vec::with_capacity(tail.len() + 1);
            u.push((k, d));
            u.extend(tail);
            upper[k] = u;
        }
        Ok(Self {
            n,
            perm,
            lower,
            upper,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            let yk = y[k];
            if yk != 0.0 {
                for &(i, l) in &self.lower[k] {
                    y[i] -= l * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let row = &self.upper[k];
            let mut s = y[k];
            for &(j, u) in &row[1..] {
                s -= u * y[j];
            }
            y[k] = s / row[0].1;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Non-zeros in both factors (diagonal counted once).
    pub fn fill(&self) -> usize {
        self.lower.iter().map(Vec::len).sum::<usize>() + self.upper.iter().map(Vec::len).sum::<usize>()
    }
}

/// Solve with the sparse factorisation, falling back to dense elimination if a
/// static pivot breaks down.
pub fn sparse_solve(t: &Triplets, b: &[f64]) -> Result<Vec<f64>, Singular> {
    match SparseLu::factor(t) {
        Ok(lu) => Ok(lu.solve(b)),
        Err(_) => dense_solve(t.n, t.to_dense(), b.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn residual(t: &Triplets, x: &[f64], b: &[f64]) -> f64 {
        t.mul_vec(x)
            .iter()
            .zip(b)
            .fold(0.0_f64, |m, (ax, bi)| m.max((ax - bi).abs()))
    }

    fn random_sparse(n: usize, seed: u64) -> Triplets {
        let mut g = SplitMix64::new(seed);
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 4.0 + g.next_f64());
            for _ in 0..2 {
                let j = g.below(n as u64) as usize;
                t.push(i, j, g.uniform(-1.0, 1.0));
                t.push(j, i, g.uniform(-1.0, 1.0));
            }
        }
        t
    }

    #[test]
    fn dense_small() {
        let x = dense_solve(2, vec![0.0, 1.0, 2.0, 0.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
    }

    #[test]
    fn dense_singular() {
        assert_eq!(
            dense_solve(2, vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 1.0]),
            Err(Singular { step: 1 })
        );
    }

    #[test]
    fn sparse_matches_dense() {
        for seed in 0..5 {
            let t = random_sparse(60, seed);
            let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
            let xs = SparseLu::factor(&t).unwrap().solve(&b);
            let xd = dense_solve(60, t.to_dense(), b.clone()).unwrap();
            assert!(residual(&t, &xs, &b) < 1e-12);
            for (a, d) in xs.iter().zip(&xd) {
                assert!((a - d).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ordering_is_a_permutation() {
        let t = random_sparse(40, 9);
        let mut o = minimum_degree_order(&t);
        o.sort_unstable();
        assert_eq!(o, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn zero_static_pivot_falls_back() {
        // [[0, 1], [1, 0]] has no usable diagonal pivot.
        let mut t = Triplets::new(2);
        t.push(0, 1, 1.0);
        t.push(1, 0, 1.0);
        assert!(SparseLu::factor(&t).is_err());
        assert_eq!(sparse_solve(&t, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn path_graph_has_no_fill() {
        let n = 50;
        let mut t = Triplets::new(n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -1.0);
            }
        }
        let lu = SparseLu::factor(&t).unwrap();
        assert_eq!(lu.fill(), 3 * n - 2);
    }
}
