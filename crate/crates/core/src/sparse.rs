//! Symmetric sparse matrices (CSR) and a Jacobi-preconditioned conjugate
//! gradient. Sized for the cotangent systems of the heat method: a few
//! thousand rows, handful of entries per row.

use crate::{Error, Result};

/// Compressed sparse row matrix. Built from triplets; duplicate entries
/// are summed during assembly.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        for &(i, j, _) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) out of range for n={n}");
        }
        let mut counts = vec![0usize; n + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut cursor = counts.clone();
        for &(i, j, v) in triplets {
            cols[cursor[i]] = j;
            vals[cursor[i]] = v;
            cursor[i] += 1;
        }
        // sort each row by column and merge duplicates in place
        let mut row_ptr = vec![0usize; n + 1];
        let mut write = 0usize;
        for i in 0..n {
            let (lo, hi) = (counts[i], counts[i + 1]);
            let mut row: Vec<(usize, f64)> =
                cols[lo..hi].iter().copied().zip(vals[lo..hi].iter().copied()).collect();
            row.sort_unstable_by_key(|&(c, _)| c);
            let row_start = write;
            for (c, v) in row {
                if write > row_start && cols[write - 1] == c {
                    vals[write - 1] += v;
                } else {
                    cols[write] = c;
                    vals[write] = v;
                    write += 1;
                }
            }
            row_ptr[i + 1] = write;
        }
        cols.truncate(write);
        vals.truncate(write);
        SparseMatrix { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[lo..hi].binary_search(&j) {
            Ok(pos) => self.vals[lo + pos],
            Err(_) => 0.0,
        }
    }

    /// Largest |a_ij - a_ji| over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                worst = worst.max((self.vals[e] - self.get(self.cols[e], i)).abs());
            }
        }
        worst
    }
}

/// Anything CG can iterate on: square, symmetric positive definite.
pub trait LinearOp {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOp for SparseMatrix {
    fn size(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[e] * x[self.cols[e]];
            }
            *out = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

/// Symmetric elimination view: rows and columns in `pinned` are replaced
/// by the identity, which fixes x_i = b_i there without reassembling.
pub struct PinnedOp<'a> {
    matrix: &'a SparseMatrix,
    pinned: &'a [bool],
}

impl<'a> PinnedOp<'a> {
    pub fn new(matrix: &'a SparseMatrix, pinned: &'a [bool]) -> Self {
        assert_eq!(matrix.n(), pinned.len());
        PinnedOp { matrix, pinned }
    }
}

impl LinearOp for PinnedOp<'_> {
    fn size(&self) -> usize {
        self.matrix.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.matrix;
        for i in 0..m.n {
            if self.pinned[i] {
                y[i] = x[i];
                continue;
            }
            let mut acc = 0.0;
            for e in m.row_ptr[i]..m.row_ptr[i + 1] {
                let j = m.cols[e];
                if !self.pinned[j] {
                    acc += m.vals[e] * x[j];
                }
            }
            y[i] = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.matrix.n)
            .map(|i| if self.pinned[i] { 1.0 } else { self.matrix.get(i, i) })
            .collect()
    }
}

/// A symmetric system ready to solve.
pub struct SparseLinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl SparseLinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.n() != rhs.len() {
            return Err(Error::ShapeMismatch {
                op: "sparse system",
                lhs: vec![matrix.n(), matrix.n()],
                rhs: vec![rhs.len()],
            });
        }
        Ok(SparseLinearSystem { matrix, rhs })
    }

    pub fn solve(&self, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        solve_cg(&self.matrix, &self.rhs, tol, max_iters)
    }
}

/// Conjugate gradient with Jacobi preconditioning. Converges when
/// ||r|| <= tol * ||b||; errors out with the reached residual otherwise.
pub fn solve_cg(op: &impl LinearOp, b: &[f64], tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = op.size();
    assert_eq!(b.len(), n);
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let inv_diag: Vec<f64> = op
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > f64::MIN_POSITIVE { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();

    for _ in 0..max_iters {
        op.apply(&p, &mut q);
        let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        if pq <= 0.0 {
            return Err(Error::Numerical(format!(
                "conjugate gradient breakdown: p'Ap = {pq:.3e} (matrix not positive definite)"
            )));
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tol * b_norm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::Numerical(format!(
        "conjugate gradient did not converge in {max_iters} iterations; \
         relative residual {:.3e}",
        r_norm / b_norm
    )))
}
