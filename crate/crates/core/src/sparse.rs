//! Compressed sparse row storage for generators and stochastic maps, plus the
//! plain-text triplet format (`dim nnz` header, then `row col value` lines).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{FgbaError, Result};

/// Square sparse matrix in CSR form. Duplicate triplets are summed and exact
/// zeros dropped, so two matrices with equal entries compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// A CTMC generator: nonnegative off-diagonals, zero column sums.
pub type SparseGenerator = SparseMatrix;

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        SparseMatrix {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SparseMatrix {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(FgbaError::domain(format!("entry ({r}, {c}) outside a {dim}x{dim} matrix")));
            }
            if !v.is_finite() {
                return Err(FgbaError::domain(format!("non-finite entry at ({r}, {c})")));
            }
            *acc.entry((r, c)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(acc.len());
        let mut values = Vec::with_capacity(acc.len());
        for ((r, c), v) in acc {
            if v == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(FgbaError::dims(m.nrows(), m.ncols(), "square matrix"));
        }
        let n = m.nrows();
        let trip = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|(r, c)| (r, c, m[(r, c)]));
        SparseMatrix::from_triplets(n, trip)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let span = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[span.clone()].binary_search(&col) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// y = self · x
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(FgbaError::dims(self.dim, x.len(), "matrix-vector product"));
        }
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.dim != other.dim {
            return Err(FgbaError::dims(self.dim, other.dim, "matrix sum"));
        }
        SparseMatrix::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    pub fn scaled(&self, factor: f64) -> SparseMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Compensated (Neumaier) column sums, so the result reflects the stored
    /// entries rather than the summation order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.dim];
        let mut comp = vec![0.0f64; self.dim];
        for (_, c, v) in self.triplets() {
            let t = sums[c] + v;
            if sums[c].abs() >= v.abs() {
                comp[c] += (sums[c] - t) + v;
            } else {
                comp[c] += (v - t) + sums[c];
            }
            sums[c] = t;
        }
        sums.iter().zip(&comp).map(|(s, c)| s + c).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Largest |column sum|.
    pub fn max_column_sum_error(&self) -> f64 {
        self.column_sums().iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Smallest off-diagonal entry, or 0 when there are none.
    pub fn min_off_diagonal(&self) -> f64 {
        self.triplets()
            .filter(|(r, c, _)| r != c)
            .fold(0.0f64, |m, (_, _, v)| m.min(v))
    }

    /// Fails unless off-diagonals are nonnegative and columns sum to zero
    /// within `tol`.
    pub fn check_generator(&self, tol: f64) -> Result<()> {
        for (r, c, v) in self.triplets() {
            if r != c && v < 0.0 {
                return Err(FgbaError::domain(format!("negative off-diagonal {v:e} at ({r}, {c})")));
            }
        }
        for (column, sum) in self.column_sums().into_iter().enumerate() {
            if sum.abs() > tol {
                return Err(FgbaError::NotAGenerator { column, sum });
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Max |a_ij - b_ij|.
    pub fn max_abs_diff(&self, other: &SparseMatrix) -> Result<f64> {
        if self.dim != other.dim {
            return Err(FgbaError::dims(self.dim, other.dim, "matrix comparison"));
        }
        let diff = SparseMatrix::from_triplets(
            self.dim,
            self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, -v))),
        )?;
        Ok(diff.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// Writes the triplet text format. Values use the shortest exponent form
    /// that round-trips.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.dim, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{r} {c} {v:e}")?;
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<SparseMatrix> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty(),
            Err(_) => true,
        });
        let (_, header) = lines.next().ok_or(FgbaError::Parse {
            line: 1,
            message: "missing `dim nnz` header".into(),
        })?;
        let header = header?;
        let mut it = header.split_whitespace();
        let parse_usize = |tok: Option<&str>, line: usize, what: &str| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| FgbaError::Parse {
                line,
                message: format!("expected integer {what}"),
            })
        };
        let dim = parse_usize(it.next(), 1, "dim")?;
        let nnz = parse_usize(it.next(), 1, "nnz")?;
        let mut trip = Vec::with_capacity(nnz);
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let mut tok = line.split_whitespace();
            let r = parse_usize(tok.next(), lineno, "row")?;
            let c = parse_usize(tok.next(), lineno, "col")?;
            let v: f64 = tok.next().and_then(|t| t.parse().ok()).ok_or_else(|| FgbaError::Parse {
                line: lineno,
                message: "expected floating-point value".into(),
            })?;
            trip.push((r, c, v));
        }
        if trip.len() != nnz {
            return Err(FgbaError::Parse {
                line: 1,
                message: format!("header declares {nnz} entries, found {}", trip.len()),
            });
        }
        SparseMatrix::from_triplets(dim, trip)
    }
}
