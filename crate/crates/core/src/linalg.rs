//! Compressed sparse row storage, preconditioned conjugate gradients and
//! symmetric Dirichlet elimination.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidStructure(String),
    #[error("node {0} is constrained more than once")]
    DuplicateConstraint(usize),
    #[error("constraint index {index} out of range for {size} unknowns")]
    ConstraintOutOfRange { index: usize, size: usize },
    #[error("right-hand side or initial guess contains non-finite values")]
    NonFinite,
    #[error("conjugate gradients did not reach tolerance in {} iterations (relative residual {:.3e})", .report.iterations, .report.final_relative_residual)]
    MaxIterExceeded { best: Vec<f64>, report: SolveReport },
    #[error("conjugate gradients broke down at iteration {iteration}: curvature p^T A p = {curvature:e} (matrix not SPD?)")]
    Breakdown { iteration: usize, curvature: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Wraps raw CSR arrays after checking the structural invariants.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        let bad = |m: &str| Err(LinalgError::InvalidStructure(m.to_string()));
        if row_offsets.len() != nrows + 1 || row_offsets[0] != 0 {
            return bad("row_offsets must have nrows + 1 entries starting at 0");
        }
        if *row_offsets.last().unwrap() != col_indices.len() || col_indices.len() != values.len() {
            return bad("last row offset must equal the number of stored entries");
        }
        for r in 0..nrows {
            if row_offsets[r] > row_offsets[r + 1] {
                return bad("row_offsets must be nondecreasing");
            }
            let cols = &col_indices[row_offsets[r]..row_offsets[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices must be strictly increasing within a row");
            }
            if cols.last().is_some_and(|&c| c >= ncols) {
                return bad("column index out of range");
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(
                r < nrows && c < ncols,
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(rows.len(), ncols, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column/value pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Position of entry (i, j) in the value array, if stored.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_offsets[i];
        self.col_indices[start..self.row_offsets[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.ncols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.ncols,
                found: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let range = self.row_offsets[i]..self.row_offsets[i + 1];
            *yi = self.col_indices[range.clone()]
                .iter()
                .zip(&self.values[range])
                .map(|(&j, &v)| v * x[j])
                .sum();
        }
    }

    /// `alpha * self + beta * other` for matrices of equal shape.
    pub fn add_scaled(
        &self,
        alpha: f64,
        other: &SparseMatrix,
        beta: f64,
    ) -> Result<Self, LinalgError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.nrows * self.ncols,
                found: other.nrows * other.ncols,
            });
        }
        if self.row_offsets == other.row_offsets && self.col_indices == other.col_indices {
            let mut out = self.clone();
            for (v, w) in out.values.iter_mut().zip(&other.values) {
                *v = alpha * *v + beta * w;
            }
            return Ok(out);
        }
        let triplets: Vec<_> = (0..self.nrows)
            .flat_map(|i| {
                self.row(i)
                    .map(move |(j, v)| (i, j, alpha * v))
                    .chain(other.row(i).map(move |(j, v)| (i, j, beta * v)))
            })
            .collect();
        Ok(Self::from_triplets(self.nrows, self.ncols, &triplets))
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64, LinalgError> {
        Ok(dot(x, &self.spmv(x)?))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// `None` means `10 * n`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: None,
            precond: Preconditioner::Jacobi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// system. Stops once `||b - Ax||_2 <= rel_tol * ||b||_2`, measured on the
/// recursively updated residual and confirmed with a true residual.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, SolveReport), LinalgError> {
    let n = a.nrows;
    if a.nrows != a.ncols {
        return Err(LinalgError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    for v in [b, x0] {
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    if b.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                final_relative_residual: 0.0,
            },
        ));
    }
    let target = opts.rel_tol * b_norm;

    let inv_diag: Vec<f64> = match opts.precond {
        Preconditioner::None => vec![1.0; n],
        Preconditioner::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    };

    let mut x = x0.to_vec();
    let mut ax = vec![0.0; n];
    a.spmv_into(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r);
    let mut iterations = 0;

    loop {
        if res <= target {
            // Guard against drift between the recursive and true residual.
            a.spmv_into(&x, &mut ax);
            let true_res = b
                .iter()
                .zip(&ax)
                .map(|(bi, ai)| (bi - ai).powi(2))
                .sum::<f64>()
                .sqrt();
            if true_res <= target {
                return Ok((
                    x,
                    SolveReport {
                        iterations,
                        final_relative_residual: true_res / b_norm,
                    },
                ));
            }
            for i in 0..n {
                r[i] = b[i] - ax[i];
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            res = true_res;
        }
        if iterations >= max_iter {
            return Err(LinalgError::MaxIterExceeded {
                best: x,
                report: SolveReport {
                    iterations,
                    final_relative_residual: res / b_norm,
                },
            });
        }
        a.spmv_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(LinalgError::Breakdown {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm2(&r);
        iterations += 1;
    }
}

/// Symmetric elimination of Dirichlet constraints `(index, value)`.
///
/// Each constrained column is moved to the right-hand side of the free
/// rows, then the constrained row and column are zeroed with a unit
/// diagonal and the right-hand side set to the prescribed value.
pub fn apply_dirichlet(
    a: &SparseMatrix,
    b: &[f64],
    constraints: &[(usize, f64)],
) -> Result<(SparseMatrix, Vec<f64>), LinalgError> {
    let n = a.nrows;
    if a.nrows != a.ncols {
        return Err(LinalgError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for &(i, v) in constraints {
        if i >= n {
            return Err(LinalgError::ConstraintOutOfRange { index: i, size: n });
        }
        if fixed[i].replace(v).is_some() {
            return Err(LinalgError::DuplicateConstraint(i));
        }
    }

    let mut rhs = b.to_vec();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(a.nnz() + constraints.len());
    let mut values = Vec::with_capacity(a.nnz() + constraints.len());
    row_offsets.push(0);
    for i in 0..n {
        match fixed[i] {
            Some(v) => {
                // Keep the stored pattern (as explicit zeros) plus the diagonal.
                let mut diag_written = false;
                for (j, _) in a.row(i) {
                    if !diag_written && j > i {
                        col_indices.push(i);
                        values.push(1.0);
                        diag_written = true;
                    }
                    col_indices.push(j);
                    values.push(if j == i { 1.0 } else { 0.0 });
                    diag_written |= j == i;
                }
                if !diag_written {
                    col_indices.push(i);
                    values.push(1.0);
                }
                rhs[i] = v;
            }
            None => {
                for (j, aij) in a.row(i) {
                    col_indices.push(j);
                    match fixed[j] {
                        Some(v) => {
                            rhs[i] -= aij * v;
                            values.push(0.0);
                        }
                        None => values.push(aij),
                    }
                }
            }
        }
        row_offsets.push(col_indices.len());
    }
    let matrix = SparseMatrix {
        nrows: n,
        ncols: n,
        row_offsets,
        col_indices,
        values,
    };
    Ok((matrix, rhs))
}
