use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Compressed sparse row matrix used as a constant left operand in
/// [`Tape::spmm`](crate::Tape::spmm).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    /// Builds from per-row `(column, value)` lists. Entries keep the given order.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, T)>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for &(c, v) in row {
                if c >= cols {
                    return Err(invalid(
                        "SparseMatrix::from_rows",
                        format!("column {c} out of range for {cols} columns"),
                    ));
                }
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// `D̃⁻¹ (A + I)` for a graph given as neighbor lists (self loops are added here).
    pub fn mean_aggregation(neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        let rows: Vec<Vec<(usize, T)>> = neighbors
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let mut cols: Vec<usize> = nbrs.iter().copied().filter(|&j| j != i).collect();
                cols.push(i);
                cols.sort_unstable();
                cols.dedup();
                let w = T::one() / T::lit(cols.len() as f64);
                cols.into_iter().map(|c| (c, w)).collect()
            })
            .collect();
        Self::from_rows(n, &rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out[i * self.cols + j] = out[i * self.cols + j] + v;
            }
        }
        out
    }
}
