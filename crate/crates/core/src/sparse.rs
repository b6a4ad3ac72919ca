//! Compressed sparse row matrices with the nine-point pattern of bilinear
//! elements, ILU(0) preconditioning and Krylov solvers.

use crate::error::{Error, Result};
use crate::geometry::Grid;

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    diag: Vec<usize>,
}

impl CsrMatrix {
    /// Zero matrix with the sparsity of bilinear elements on `grid`: every
    /// node couples to the nodes of the cells around it.
    pub fn nine_point(grid: &Grid) -> Self {
        let nx = grid.nx();
        let ny = grid.ny();
        let n = grid.n_nodes();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(9 * n);
        let mut diag = Vec::with_capacity(n);
        row_ptr.push(0);
        for j in 0..=ny {
            for i in 0..=nx {
                for jj in j.saturating_sub(1)..=(j + 1).min(ny) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(nx) {
                        if ii == i && jj == j {
                            diag.push(col_idx.len());
                        }
                        col_idx.push(grid.node(ii, jj));
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
            diag,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in triplets {
            rows[r].push((c, v));
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut diag = Vec::with_capacity(n);
        for (r, mut row) in rows.into_iter().enumerate() {
            if !row.iter().any(|&(c, _)| c == r) {
                row.push((r, 0.0));
            }
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    if c == r {
                        diag.push(col_idx.len());
                    }
                    col_idx.push(c);
                    values.push(v);
                    last = c;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            diag,
        }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn position(&self, row: usize, col: usize) -> usize {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        lo + self.col_idx[lo..hi]
            .iter()
            .position(|&c| c == col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) outside the sparsity pattern"))
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let p = self.position(row, col);
        self.values[p] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi]
            .iter()
            .position(|&c| c == col)
            .map_or(0.0, |p| self.values[lo + p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.diag.iter().map(|&p| self.values[p]).collect()
    }

    /// Replaces the rows and columns of `fixed` nodes by the identity.
    pub fn constrain(&mut self, fixed: &[bool]) {
        for r in 0..self.n {
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[p];
                if fixed[r] || fixed[c] {
                    self.values[p] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            y[r] = s;
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).all(|p| {
                let c = self.col_idx[p];
                (self.values[p] - self.get(c, r)).abs() <= tol * self.values[p].abs().max(1.0)
            })
        })
    }
}

/// Incomplete LU factorization without fill-in.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        // column -> position scratch for row i
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in lo..hi {
                pos[lu.col_idx[p]] = p;
            }
            for p in lo..hi {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let dk = lu.values[lu.diag[k]];
                if dk == 0.0 {
                    return Err(Error::LinearSolver(format!("zero pivot in ILU(0) at row {k}")));
                }
                let lik = lu.values[p] / dk;
                lu.values[p] = lik;
                for q in lu.diag[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.col_idx[q];
                    if pos[j] != usize::MAX {
                        lu.values[pos[j]] -= lik * lu.values[q];
                    }
                }
            }
            for p in lo..hi {
                pos[lu.col_idx[p]] = usize::MAX;
            }
            if lu.values[lu.diag[i]] == 0.0 {
                return Err(Error::LinearSolver(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Self { lu })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = r[i];
            for p in lu.row_ptr[i]..lu.diag[i] {
                s -= lu.values[p] * z[lu.col_idx[p]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for p in lu.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.values[p] * z[lu.col_idx[p]];
            }
            z[i] = s / lu.values[lu.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients; `x` holds the initial guess.
pub fn pcg(a: &CsrMatrix, pre: &Ilu0, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveStats> {
    let n = a.n;
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm(&r) / bn;
        if rel <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: rel });
        }
        a.matvec(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            return Err(Error::LinearSolver(format!("CG breakdown (pᵀAp = {pq:e}) at iteration {it}")));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        pre.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bn;
    Err(Error::LinearSolver(format!(
        "CG did not reach {tol:e} in {max_iter} iterations (residual {rel:e})"
    )))
}

/// Right-preconditioned BiCGStab for nonsymmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    pre: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = a.n;
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iter {
        let rel = norm(&r) / bn;
        if rel <= tol {
            return Ok(SolveStats { iterations: it, relative_residual: rel });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(Error::LinearSolver(format!("BiCGStab breakdown at iteration {it}")));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut y);
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bn <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats { iterations: it + 1, relative_residual: norm(&s) / bn });
        }
        pre.apply(&s, &mut z);
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let rel = norm(&r) / bn;
    Err(Error::LinearSolver(format!(
        "BiCGStab did not reach {tol:e} in {max_iter} iterations (residual {rel:e})"
    )))
}

/// Solves `a x = b` with ILU(0) preconditioning: CG for symmetric systems,
/// BiCGStab otherwise or when CG breaks down.
pub fn solve(a: &CsrMatrix, b: &[f64], x: &mut [f64], symmetric: bool, tol: f64) -> Result<SolveStats> {
    let pre = Ilu0::new(a)?;
    let max_iter = 20 * (a.n as f64).sqrt() as usize + 200;
    if symmetric {
        let x0 = x.to_vec();
        match pcg(a, &pre, b, x, tol, max_iter) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::warn!("{e}; retrying with BiCGStab");
                x.copy_from_slice(&x0);
            }
        }
    }
    bicgstab(a, &pre, b, x, tol, 4 * max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;

    fn laplacian(grid: &Grid, shift: f64, skew: f64) -> CsrMatrix {
        let mut a = CsrMatrix::nine_point(grid);
        for k in 0..grid.n_nodes() {
            let (i, j) = grid.node_ij(k);
            a.add(k, k, 4.0 + shift);
            if i > 0 {
                a.add(k, grid.node(i - 1, j), -1.0 - skew);
            }
            if i < grid.nx() {
                a.add(k, grid.node(i + 1, j), -1.0 + skew);
            }
            if j > 0 {
                a.add(k, grid.node(i, j - 1), -1.0);
            }
            if j < grid.ny() {
                a.add(k, grid.node(i, j + 1), -1.0);
            }
        }
        a
    }

    #[test]
    fn cg_and_bicgstab_solve_model_problems() {
        let grid = Grid::uniform(&Domain::default(), 24).unwrap();
        let n = grid.n_nodes();
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        for (skew, sym) in [(0.0, true), (0.3, false)] {
            let a = laplacian(&grid, 0.1, skew);
            assert_eq!(a.is_symmetric(1e-14), sym);
            let mut b = vec![0.0; n];
            a.matvec(&xs, &mut b);
            let mut x = vec![0.0; n];
            let stats = solve(&a, &b, &mut x, sym, 1e-12).unwrap();
            assert!(stats.relative_residual <= 1e-12);
            let err = x.iter().zip(&xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn constrain_keeps_symmetry() {
        let grid = Grid::uniform(&Domain::default(), 8).unwrap();
        let mut a = laplacian(&grid, 0.0, 0.0);
        let fixed: Vec<bool> = (0..grid.n_nodes()).map(|k| grid.is_boundary(k)).collect();
        a.constrain(&fixed);
        assert!(a.is_symmetric(0.0));
        let k = grid.boundary_nodes()[3];
        assert_eq!(a.get(k, k), 1.0);
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let n = 6;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, &t);
        let pre = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let mut z = vec![0.0; n];
        pre.apply(&b, &mut z);
        let mut az = vec![0.0; n];
        a.matvec(&z, &mut az);
        for (u, v) in az.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
