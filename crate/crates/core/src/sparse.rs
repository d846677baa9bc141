//! Compressed sparse row storage for adjacency and diffusion operators.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from `(row, col, value)` triplets. Repeated coordinates
    /// are summed; explicit zeros are dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        let mut m = Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        };
        m.prune(|v| v != 0.0);
        m
    }

    /// Keeps entries whose magnitude is at least `threshold` (all nonzeros when 0).
    pub fn from_dense(dense: ArrayView2<'_, f64>, threshold: f64) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in dense.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 && v.abs() >= threshold {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Csr {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    fn prune(&mut self, keep: impl Fn(f64) -> bool) {
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.n_rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if keep(self.values[k]) {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr.push(indices.len());
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.triplets() {
            out[[i, j]] = v;
        }
        out
    }

    pub fn transpose(&self) -> Csr {
        let t: Vec<(usize, usize, f64)> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.n_cols, self.n_rows, &t)
    }

    /// Largest absolute difference between the matrix and its transpose.
    pub fn asymmetry(&self) -> f64 {
        if self.n_rows != self.n_cols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// `D^{-1/2} M D^{-1/2}` using row sums as degrees; zero-degree rows map to zero.
    pub fn sym_normalized(&self) -> Csr {
        let inv_sqrt: Vec<f64> = self
            .row_sums()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut out = self.clone();
        for i in 0..self.n_rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] *= inv_sqrt[i] * inv_sqrt[self.indices[k]];
            }
        }
        out.prune(|v| v != 0.0);
        out
    }

    /// `self + I` for square matrices.
    pub fn with_self_loops(&self, weight: f64) -> Csr {
        let mut t: Vec<(usize, usize, f64)> = self.triplets().collect();
        t.extend((0..self.n_rows).map(|i| (i, i, weight)));
        Csr::from_triplets(self.n_rows, self.n_cols, &t)
    }

    /// Sparse-dense product `self · x`.
    pub fn matmul(&self, x: ArrayView2<'_, f64>, exec: Exec) -> Result<Array2<f64>> {
        if x.nrows() != self.n_cols {
            return Err(Error::Shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                x.nrows(),
                x.ncols()
            )));
        }
        let d = x.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, d));
        if d == 0 {
            return Ok(out);
        }
        let buf = out
            .as_slice_mut()
            .expect("freshly allocated arrays are contiguous");
        exec.for_each_row_chunk(buf, d, |i, row| {
            for (j, v) in self.row(i) {
                let src = x.row(j);
                for (o, s) in row.iter_mut().zip(src.iter()) {
                    *o += v * s;
                }
            }
        });
        Ok(out)
    }
}
