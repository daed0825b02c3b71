//! Compressed sparse column storage, a triplet builder and a direct LU
//! solver backed by `faer`.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Col;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("sparse LU failed: {0}")]
    Factorization(String),
    #[error("linear solve produced non-finite values (numerically singular matrix)")]
    NonFinite,
}

/// Unsorted `(row, col, value)` entries; duplicates are summed on
/// compression.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Copies all entries of `block`, shifted by the given offsets.
    pub fn add_block(&mut self, block: &SparseMatrix, row_offset: usize, col_offset: usize, scale: f64) {
        for (r, c, v) in block.iter() {
            self.push(r + row_offset, c + col_offset, scale * v);
        }
    }

    /// Like [`Triplets::add_block`] with the block transposed.
    pub fn add_block_transposed(&mut self, block: &SparseMatrix, row_offset: usize, col_offset: usize, scale: f64) {
        for (r, c, v) in block.iter() {
            self.push(c + row_offset, r + col_offset, scale * v);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_matrix(mut self) -> SparseMatrix {
        // stable, so mirrored entries are summed in the same order and
        // symmetric assemblies stay exactly symmetric
        self.entries.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_ptr = vec![0usize; self.ncols + 1];
        let mut row_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..self.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Column-compressed matrix with sorted, unique row indices per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    /// Slot of a stored entry in [`SparseMatrix::values_mut`].
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Stored values in column-major order; the pattern is fixed.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        (0..self.ncols)
            .map(|c| {
                (self.col_ptr[c]..self.col_ptr[c + 1])
                    .map(|k| self.values[k] * x[self.row_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// `xᵀ A z`.
    pub fn bilinear(&self, x: &[f64], z: &[f64]) -> f64 {
        self.mul_vec(z).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest absolute entry of `A − Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            d[r][c] += v;
        }
        d
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(self.nrows, self.ncols, &self.col_ptr, None, &self.row_idx),
            &self.values,
        )
    }

    fn same_pattern(&self, other_ptr: &[usize], other_idx: &[usize]) -> bool {
        self.col_ptr == other_ptr && self.row_idx == other_idx
    }
}

/// Sparse LU with partial pivoting. The fill-reducing symbolic analysis is
/// cached and reused while the sparsity pattern stays the same.
#[derive(Default)]
pub struct DirectSolver {
    cached: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
}

impl DirectSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        assert_eq!(a.nrows, a.ncols, "LU needs a square matrix");
        assert_eq!(rhs.len(), a.nrows);
        let mat = a.as_faer();
        let reuse = matches!(&self.cached, Some((p, i, _)) if a.same_pattern(p, i));
        if !reuse {
            let symbolic = SymbolicLu::try_new(mat.symbolic())
                .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
            self.cached = Some((a.col_ptr.clone(), a.row_idx.clone(), symbolic));
        }
        let symbolic = self.cached.as_ref().map(|(_, _, s)| s.clone()).unwrap();
        let lu = Lu::try_new_with_symbolic(symbolic, mat)
            .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
        let mut x = Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
        lu.solve_in_place(&mut x);
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[i]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        Ok(out)
    }
}
