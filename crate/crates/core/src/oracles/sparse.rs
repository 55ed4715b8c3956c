//! Row-compressed sparse complex matrices for the dense oracles.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Square sparse matrix stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct Sparse {
    dim: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl Sparse {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Vec::new(); dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, C64::new(1.0, 0.0))
    }

    pub fn scaled_identity(dim: usize, c: C64) -> Self {
        let rows = (0..dim)
            .map(|i| if c == C64::new(0.0, 0.0) { vec![] } else { vec![(i, c)] })
            .collect();
        Self { dim, rows }
    }

    /// Sum duplicate entries and drop exact zeros.
    pub fn from_triplets(dim: usize, entries: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut maps: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); dim];
        for (r, c, v) in entries {
            *maps[r].entry(c).or_insert(C64::new(0.0, 0.0)) += v;
        }
        let rows = maps
            .into_iter()
            .map(|m| m.into_iter().filter(|(_, v)| *v != C64::new(0.0, 0.0)).collect())
            .collect();
        Self { dim, rows }
    }

    pub fn from_dense(m: &Array2<C64>) -> Self {
        Self::from_triplets(m.nrows(), m.indexed_iter().map(|((r, c), v)| (r, c, *v)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.triplets() {
            out[[r, c]] += v;
        }
        out
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, k, v)| (r, k, v * c)))
    }

    pub fn add(&self, other: &Sparse) -> Self {
        assert_eq!(self.dim, other.dim, "sparse dimensions differ");
        Self::from_triplets(self.dim, self.triplets().chain(other.triplets()))
    }

    /// `self · other`.
    pub fn mul(&self, other: &Sparse) -> Self {
        assert_eq!(self.dim, other.dim, "sparse dimensions differ");
        let entries = self
            .triplets()
            .flat_map(|(r, k, v)| other.rows[k].iter().map(move |&(c, w)| (r, c, v * w)));
        Self::from_triplets(self.dim, entries)
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v)))
    }

    /// `self · m`.
    pub fn left_mul(&self, m: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, m.ncols()));
        for (r, k, v) in self.triplets() {
            let src = m.row(k);
            let mut dst = out.row_mut(r);
            dst.zip_mut_with(&src, |o, x| *o += v * x);
        }
        out
    }

    /// `m · self`.
    pub fn right_mul(&self, m: &Array2<C64>) -> Array2<C64> {
        let mut out = Array2::zeros((m.nrows(), self.dim));
        for (src, mut dst) in m.rows().into_iter().zip(out.rows_mut()) {
            for (k, row) in self.rows.iter().enumerate() {
                let x = src[k];
                for &(c, v) in row {
                    dst[c] += x * v;
                }
            }
        }
        out
    }

    /// `Tr(self · m)`.
    pub fn trace_with(&self, m: &Array2<C64>) -> C64 {
        self.triplets().map(|(r, c, v)| v * m[[c, r]]).sum()
    }

    /// `self · v`.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, x)| x * v[c]).sum())
            .collect()
    }
}
