//! Compressed sparse row matrices.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// CSR matrix with sorted, duplicate-free column indices in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CsrMatrix {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Entries that sum to exactly zero are kept, so the sparsity pattern
    /// reflects every coordinate that was supplied.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Argument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        // Stable sort keeps duplicate summation order equal to input order.
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let triplets = (0..m.rows()).flat_map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(move |(c, &v)| (r, c, v))
        });
        Self::from_triplets(m.rows(), m.cols(), triplets.collect::<Vec<_>>())
            .expect("dense coordinates are in range")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern with new values (used by sparse dropout).
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        CsrMatrix {
            values,
            ..self.clone()
        }
    }

    /// Multiplies stored entries, in storage order, by successive factors
    /// from `scale`, dropping those whose factor is zero.
    pub(crate) fn scale_entries(&self, mut scale: impl FnMut() -> f64) -> Self {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                let f = scale();
                if f != 0.0 {
                    indices.push(c);
                    values.push(v * f);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (idx, vals) = self.row(r);
            idx.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> CsrMatrix {
        Self::from_triplets(self.cols, self.rows, self.iter().map(|(r, c, v)| (c, r, v)))
            .expect("transposed coordinates are in range")
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// Dense product `self * rhs`.
    pub fn mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows() {
            return Err(Error::Argument(format!(
                "sparse product shape mismatch: {:?} x {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols());
        self.mul_dense_into(rhs, &mut out);
        Ok(out)
    }

    /// `out += self * rhs`.
    pub(crate) fn mul_dense_into(&self, rhs: &Matrix, out: &mut Matrix) {
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let dst = out.row_mut(r);
            for (&c, &v) in idx.iter().zip(vals) {
                for (d, s) in dst.iter_mut().zip(rhs.row(c)) {
                    *d += v * s;
                }
            }
        }
    }

    /// `out += selfᵀ * rhs` without materializing the transpose.
    pub(crate) fn tr_mul_dense_into(&self, rhs: &Matrix, out: &mut Matrix) {
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let src = rhs.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                for (d, s) in out.row_mut(c).iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
    }

    /// Scales every row to unit sum; all-zero rows are left untouched.
    pub fn row_normalized(&self) -> CsrMatrix {
        let mut values = self.values.clone();
        for r in 0..self.rows {
            let span = self.indptr[r]..self.indptr[r + 1];
            let total: f64 = values[span.clone()].iter().sum();
            if total != 0.0 {
                values[span].iter_mut().for_each(|v| *v /= total);
            }
        }
        self.with_values(values)
    }
}
