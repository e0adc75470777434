//! Sparse LDLᵀ for symmetric quasi-definite matrices.
//!
//! The sparsity pattern is analysed once (minimum-degree ordering, elimination
//! tree, column counts); numeric factorizations reuse it. No pivoting is
//! performed, so the matrix must be quasi-definite after regularization.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

const NONE: usize = usize::MAX;

/// Symbolic analysis of an `n × n` symmetric pattern.
#[derive(Debug, Clone)]
pub struct Symbolic {
    n: usize,
    /// perm[new] = old
    perm: Vec<usize>,
    /// inv[old] = new
    inv: Vec<usize>,
    /// CSC of the permuted upper triangle.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    etree: Vec<usize>,
    l_ptr: Vec<usize>,
}

/// Slot of an `(i, j)` entry inside the permuted upper-triangular values array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot(pub usize);

impl Symbolic {
    /// `entries` lists (row, col) positions in original numbering; either
    /// triangle may be given and duplicates are merged. The diagonal is always
    /// included.
    pub fn analyse(n: usize, entries: &[(usize, usize)]) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(i, j) in entries {
            if i != j {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        let perm = minimum_degree(adj.clone());
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut cols: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (j, col) in cols.iter_mut().enumerate() {
            col.insert(j);
        }
        for &(i, j) in entries {
            let (a, b) = (inv[i], inv[j]);
            let (r, c) = if a <= b { (a, b) } else { (b, a) };
            cols[c].insert(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &cols {
            row_idx.extend(col.iter().copied());
            col_ptr.push(row_idx.len());
        }

        // elimination tree and column counts of L
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &row_idx[col_ptr[j]..col_ptr[j + 1]] {
                let mut i = i0;
                while i != j && work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                    if i == NONE {
                        break;
                    }
                }
            }
        }
        let mut l_ptr = Vec::with_capacity(n + 1);
        l_ptr.push(0);
        for k in 0..n {
            l_ptr.push(l_ptr[k] + lnz[k]);
        }
        Self {
            n,
            perm,
            inv,
            col_ptr,
            row_idx,
            etree,
            l_ptr,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    /// Position of original entry `(i, j)` in the values array.
    pub fn slot(&self, i: usize, j: usize) -> Slot {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a <= b { (a, b) } else { (b, a) };
        let rows = &self.row_idx[self.col_ptr[c]..self.col_ptr[c + 1]];
        let k = rows
            .binary_search(&r)
            .expect("entry not present in the analysed pattern");
        Slot(self.col_ptr[c] + k)
    }

    pub fn factor(&self, values: &[f64]) -> Result<Factor, FactorError> {
        self.factor_signed(values, None)
    }

    /// Numeric factorization with dynamic regularization: when `signs` gives
    /// the expected sign of each pivot (original numbering), pivots that are
    /// tiny or of the wrong sign are replaced by `sign · delta`.
    pub fn factor_signed(&self, values: &[f64], signs: Option<(&[i8], f64, f64)>) -> Result<Factor, FactorError> {
        let n = self.n;
        let mut l_idx = vec![0usize; self.l_ptr[n]];
        let mut l_val = vec![0.0; self.l_ptr[n]];
        let mut d = vec![0.0; n];
        let mut d_inv = vec![0.0; n];
        let mut next = self.l_ptr[..n].to_vec();
        let mut y_val = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];

        for k in 0..n {
            let mut nnz_y = 0;
            d[k] = 0.0;
            for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                let b = self.row_idx[p];
                if b == k {
                    d[k] = values[p];
                    continue;
                }
                y_val[b] = values[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut ne = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[ne] = nx;
                        ne += 1;
                        nx = self.etree[nx];
                    }
                    while ne > 0 {
                        ne -= 1;
                        y_idx[nnz_y] = elim[ne];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let slot = next[c];
                let yc = y_val[c];
                for j in self.l_ptr[c]..slot {
                    y_val[l_idx[j]] -= l_val[j] * yc;
                }
                l_idx[slot] = k;
                l_val[slot] = yc * d_inv[c];
                d[k] -= yc * l_val[slot];
                next[c] += 1;
                y_val[c] = 0.0;
                y_used[c] = false;
            }
            if let Some((sg, eps, delta)) = signs {
                let sign = f64::from(sg[self.perm[k]]);
                if d[k] * sign <= eps {
                    d[k] = sign * delta;
                }
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(FactorError::ZeroPivot(self.perm[k]));
            }
            d_inv[k] = 1.0 / d[k];
        }
        Ok(Factor {
            l_idx,
            l_val,
            d,
            d_inv,
        })
    }

    /// Solves `K x = b` in place using a numeric factor of this pattern.
    pub fn solve(&self, factor: &Factor, b: &mut [f64], work: &mut Vec<f64>) {
        let n = self.n;
        work.clear();
        work.extend(self.perm.iter().map(|&old| b[old]));
        for i in 0..n {
            let xi = work[i];
            for j in self.l_ptr[i]..self.l_ptr[i + 1] {
                work[factor.l_idx[j]] -= factor.l_val[j] * xi;
            }
        }
        for (x, di) in work.iter_mut().zip(&factor.d_inv) {
            *x *= di;
        }
        for i in (0..n).rev() {
            let mut xi = work[i];
            for j in self.l_ptr[i]..self.l_ptr[i + 1] {
                xi -= factor.l_val[j] * work[factor.l_idx[j]];
            }
            work[i] = xi;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = work[new];
        }
    }
}

#[derive(Debug, Clone)]
pub struct Factor {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
}

impl Factor {
    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&x| x > 0.0).count();
        (pos, self.d.len() - pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FactorError {
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
}

/// Greedy minimum-degree ordering on an explicit elimination graph. Ties go
/// to the lowest index.
fn minimum_degree(mut adj: Vec<BTreeSet<usize>>) -> Vec<usize> {
    let n = adj.len();
    let mut alive = vec![true; n];
    let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&(deg, v)) = by_degree.iter().next() {
        by_degree.remove(&(deg, v));
        alive[v] = false;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        for &u in &nbrs {
            by_degree.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (k, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[k + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        for &u in &nbrs {
            by_degree.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        // Gaussian elimination with partial pivoting, test-only reference
        let mut m = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
                .unwrap();
            for c in 0..n {
                m.swap(k * n + c, p * n + c);
            }
            x.swap(k, p);
            for i in k + 1..n {
                let f = m[i * n + k] / m[k * n + k];
                for c in k..n {
                    m[i * n + c] -= f * m[k * n + c];
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in k + 1..n {
                s -= m[k * n + c] * x[c];
            }
            x[k] = s / m[k * n + k];
        }
        x
    }

    #[test]
    fn quasi_definite_solve_matches_dense() {
        // [H A'; A -δI] with H = tridiagonal SPD, A = 2x5
        let np = 5;
        let nd = 2;
        let n = np + nd;
        let mut dense = vec![0.0; n * n];
        let mut entries = Vec::new();
        let set = |i: usize, j: usize, v: f64, dense: &mut Vec<f64>, e: &mut Vec<(usize, usize)>| {
            dense[i * n + j] = v;
            dense[j * n + i] = v;
            e.push((i, j));
        };
        for i in 0..np {
            set(i, i, 4.0 + i as f64, &mut dense, &mut entries);
            if i + 1 < np {
                set(i, i + 1, -1.0, &mut dense, &mut entries);
            }
        }
        set(np, 0, 1.0, &mut dense, &mut entries);
        set(np, 3, 2.0, &mut dense, &mut entries);
        set(np + 1, 1, -1.0, &mut dense, &mut entries);
        set(np + 1, 4, 0.5, &mut dense, &mut entries);
        set(np, np, -1e-3, &mut dense, &mut entries);
        set(np + 1, np + 1, -1e-3, &mut dense, &mut entries);

        let sym = Symbolic::analyse(n, &entries);
        let mut values = vec![0.0; sym.nnz()];
        for i in 0..n {
            for j in i..n {
                if dense[i * n + j] != 0.0 {
                    values[sym.slot(i, j).0] = dense[i * n + j];
                }
            }
        }
        let f = sym.factor(&values).unwrap();
        assert_eq!(f.inertia(), (np, nd));
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let mut x = b.clone();
        sym.solve(&f, &mut x, &mut Vec::new());
        let expect = dense_solve(n, &dense, &b);
        for (a, e) in x.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }

    #[test]
    fn ordering_is_a_permutation() {
        let adj = vec![
            BTreeSet::from([1, 2, 3]),
            BTreeSet::from([0]),
            BTreeSet::from([0]),
            BTreeSet::from([0]),
        ];
        let mut order = minimum_degree(adj);
        // the hub goes last-ish; leaves first
        assert_eq!(order[0], 1);
        order.sort();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }
}
