//! Compressed sparse row matrices and the handful of operations the
//! solvers and preconditioners need: construction from triplets,
//! matrix-vector products, transposes, and sparse products for Galerkin
//! coarse operators.
//!
//! Values are immutable after construction, so matrices can be shared
//! freely across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::DenseMatrix;

/// Cap on `nrows * ncols` for dense expansion; keeps test oracles honest
/// about scale.
pub const DENSE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("triplet index ({i}, {j}) out of range for a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dense expansion of {nrows}x{ncols} exceeds cap of {cap} entries")]
    DenseCapExceeded {
        nrows: usize,
        ncols: usize,
        cap: usize,
    },
}

/// Sparse matrix in compressed sparse row format.
///
/// Invariants: `row_offsets` is nondecreasing with `row_offsets[0] == 0`
/// and `row_offsets[nrows] == values.len()`; column indices are strictly
/// increasing within each row. Explicit zeros are retained (the AMG
/// strength graph cares about structure, not just values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CsrRepr", into = "CsrRepr")]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Wire format: `{nrows, ncols, triplets: [[i, j, v], ...]}`.
#[derive(Serialize, Deserialize)]
struct CsrRepr {
    nrows: usize,
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl From<CsrMatrix> for CsrRepr {
    fn from(m: CsrMatrix) -> CsrRepr {
        CsrRepr {
            nrows: m.nrows,
            ncols: m.ncols,
            triplets: m.triplets(),
        }
    }
}

impl TryFrom<CsrRepr> for CsrMatrix {
    type Error = SparseError;
    fn try_from(r: CsrRepr) -> Result<CsrMatrix, SparseError> {
        CsrMatrix::from_triplets(r.nrows, r.ncols, &r.triplets)
    }
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicate positions are
    /// summed; explicit zeros are kept as structural entries.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<CsrMatrix, SparseError> {
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(SparseError::IndexOutOfRange { i, j, nrows, ncols });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(i, j, v) in &sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(j);
                values.push(v);
                last = Some((i, j));
            }
            row_offsets[i + 1] = col_indices.len();
        }
        // rows with no entries inherit the previous offset
        for i in 1..=nrows {
            if row_offsets[i] < row_offsets[i - 1] {
                row_offsets[i] = row_offsets[i - 1];
            }
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
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

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored entry at (i, j), or 0 when the position is not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Diagonal entries as a vector (0 for missing positions).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.ncols {
            return Err(SparseError::DimensionMismatch(format!(
                "spmv: matrix is {}x{}, vector has {} entries",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// y = A x with caller-provided output storage; lengths must match.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = A^T x.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.nrows {
            return Err(SparseError::DimensionMismatch(format!(
                "spmv_transpose: matrix is {}x{}, vector has {} entries",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let xi = x[i];
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
            .expect("transpose indices are in range by construction")
    }

    /// Sparse product C = A B.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<CsrMatrix, SparseError> {
        if self.ncols != other.nrows {
            return Err(SparseError::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut triplets = Vec::new();
        let mut acc: Vec<f64> = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k);
                for (&j, &b) in bcols.iter().zip(bvals) {
                    if acc[j] == 0.0 && !touched.contains(&j) {
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                triplets.push((i, j, acc[j]));
                acc[j] = 0.0;
            }
            touched.clear();
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, &triplets)
    }

    pub fn to_dense(&self) -> Result<DenseMatrix, SparseError> {
        let entries = self.nrows.checked_mul(self.ncols).unwrap_or(usize::MAX);
        if entries > DENSE_CAP {
            return Err(SparseError::DenseCapExceeded {
                nrows: self.nrows,
                ncols: self.ncols,
                cap: DENSE_CAP,
            });
        }
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.set(i, j, v);
            }
        }
        Ok(d)
    }

    /// Stored entries in row-major order as (i, j, value) triplets.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.push((i, j, v));
            }
        }
        out
    }

    /// Entrywise symmetry check over the stored pattern.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        if t.row_offsets != self.row_offsets || t.col_indices != self.col_indices {
            return false;
        }
        self.values
            .iter()
            .zip(&t.values)
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

pub fn dense_to_triplets(d: &DenseMatrix) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..d.nrows {
        for j in 0..d.ncols {
            let v = d.get(i, j);
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}
