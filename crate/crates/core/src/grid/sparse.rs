use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

/// Compressed sparse row matrix with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in input order.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, Complex64)>,
    ) -> Self {
        let mut t: Vec<(usize, usize, Complex64)> = triplets.into_iter().collect();
        // stable sort keeps the summation order of duplicates deterministic
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Same sparsity pattern with each entry replaced by `f(row, col, value)`.
    pub fn map_entries(&self, f: impl Fn(usize, usize, Complex64) -> Complex64 + Sync) -> Self {
        let values = (0..self.nrows)
            .into_par_iter()
            .flat_map_iter(|r| {
                let range = self.row_ptr[r]..self.row_ptr[r + 1];
                let f = &f;
                range.map(move |k| f(r, self.col_idx[k], self.values[k]))
            })
            .collect();
        Self {
            values,
            ..self.clone()
        }
    }

    /// `y = A·x`, rows in parallel; each row sums in column order.
    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .into_par_iter()
            .with_min_len(1024)
            .map(|r| {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.values[k] * x[self.col_idx[k]];
                }
                acc
            })
            .collect()
    }

    fn transposed_with(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let triplets = (0..self.nrows).flat_map(|r| {
            let range = self.row_ptr[r]..self.row_ptr[r + 1];
            range.map(move |k| (r, k))
        });
        let t: Vec<(usize, usize, Complex64)> = triplets
            .map(|(r, k)| (self.col_idx[k], r, f(self.values[k])))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, t)
    }

    /// `A^H`
    pub fn conj_transpose(&self) -> Self {
        self.transposed_with(|v| v.conj())
    }

    /// `A^T` (bilinear transpose)
    pub fn transpose(&self) -> Self {
        self.transposed_with(|v| v)
    }

    /// `self · other`
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut triplets = Vec::new();
        for r in 0..self.nrows {
            for (mid, a) in self.row(r) {
                for (c, b) in other.row(mid) {
                    triplets.push((r, c, a * b));
                }
            }
        }
        Self::from_triplets(self.nrows, other.ncols, triplets)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.nrows, self.ncols, Complex64::new(0.0, 0.0));
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Keeps only rows with `keep(row)`, renumbered in order.
    pub fn select_rows(&self, keep: impl Fn(usize) -> bool) -> (Self, Vec<usize>) {
        let rows: Vec<usize> = (0..self.nrows).filter(|&r| keep(r)).collect();
        let mut triplets = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                triplets.push((new_r, c, v));
            }
        }
        (Self::from_triplets(rows.len(), self.ncols, triplets), rows)
    }

    /// Keeps only columns in `cols` (renumbered in the given order); entries in
    /// other columns must be absent or are dropped.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.ncols];
        for (new_c, &c) in cols.iter().enumerate() {
            map[c] = new_c;
        }
        let mut triplets = Vec::new();
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                if map[c] != usize::MAX {
                    triplets.push((r, map[c], v));
                }
            }
        }
        Self::from_triplets(self.nrows, cols.len(), triplets)
    }
}
