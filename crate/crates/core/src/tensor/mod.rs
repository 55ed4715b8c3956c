//! Dense complex tensors with labeled indices.
//!
//! Data is stored row-major: the first label varies slowest. Contractions are
//! carried out by permuting both operands into matrices and calling a BLAS
//! matrix product.

pub mod linalg;

use std::collections::HashSet;

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub use linalg::{matrix_exponential, TruncatedSvd};

/// Truncation parameters for singular value decompositions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationLimits {
    /// Maximal discarded squared singular value weight, relative to the total.
    pub cutoff: f64,
    /// Maximal number of kept singular values.
    pub maxdim: usize,
}

impl TruncationLimits {
    pub fn new(cutoff: f64, maxdim: usize) -> Result<Self> {
        if !(cutoff >= 0.0) || !cutoff.is_finite() {
            return Err(Error::invalid(format!(
                "cutoff must be a finite non-negative number, got {cutoff}"
            )));
        }
        if maxdim == 0 {
            return Err(Error::invalid("maxdim must be at least 1"));
        }
        Ok(Self { cutoff, maxdim })
    }

    /// No truncation beyond exactly vanishing singular values.
    pub fn exact() -> Self {
        Self {
            cutoff: 0.0,
            maxdim: usize::MAX,
        }
    }
}

impl Default for TruncationLimits {
    fn default() -> Self {
        Self {
            cutoff: 1e-14,
            maxdim: 256,
        }
    }
}

/// A dense complex tensor whose axes carry unique string labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    labels: Vec<String>,
    data: ArrayD<C64>,
}

impl Tensor {
    pub fn new<S: Into<String>>(labels: Vec<S>, data: ArrayD<C64>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != data.ndim() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a tensor of rank {}",
                labels.len(),
                data.ndim()
            )));
        }
        let unique: HashSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::invalid(format!("duplicate labels in {labels:?}")));
        }
        if data.shape().contains(&0) {
            return Err(Error::invalid("tensor extents must be positive"));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { labels, data })
    }

    /// Build a tensor from row-major values.
    pub fn from_vec<S: Into<String>>(labels: Vec<S>, dims: &[usize], values: Vec<C64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} values for dims {dims:?}",
                values.len()
            )));
        }
        let data = ArrayD::from_shape_vec(IxDyn(dims), values).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Self::new(labels, data)
    }

    pub fn from_matrix<S: Into<String>>(row: S, col: S, m: Array2<C64>) -> Result<Self> {
        Self::new(vec![row, col], m.into_dyn())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn data(&self) -> &ArrayD<C64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<C64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.labels.len()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims()[self.position(label)?])
    }

    pub fn relabel(mut self, from: &str, to: &str) -> Result<Self> {
        let p = self.position(from)?;
        if from != to && self.labels.iter().any(|l| l == to) {
            return Err(Error::invalid(format!("label `{to}` already present")));
        }
        self.labels[p] = to.to_string();
        Ok(self)
    }

    /// Reorder axes to follow `order`, which must be a permutation of the labels.
    pub fn permute(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.rank() {
            return Err(Error::DimensionMismatch(format!(
                "permutation {order:?} of a rank-{} tensor",
                self.rank()
            )));
        }
        let axes = order.iter().map(|l| self.position(l)).collect::<Result<Vec<_>>>()?;
        let data = self
            .data
            .clone()
            .permuted_axes(IxDyn(&axes))
            .as_standard_layout()
            .into_owned();
        Self::new(order.to_vec(), data)
    }

    /// Matricize with `rows` (in the given order) as the row multi-index and the
    /// remaining labels (in storage order) as columns.
    pub fn to_matrix(&self, rows: &[&str]) -> Result<(Array2<C64>, Vec<String>)> {
        for l in rows {
            self.position(l)?;
        }
        let cols: Vec<&str> = self
            .labels
            .iter()
            .map(String::as_str)
            .filter(|l| !rows.contains(l))
            .collect();
        let mut order = rows.to_vec();
        order.extend(cols.iter().copied());
        let p = self.permute(&order)?;
        let nr: usize = rows.iter().map(|l| self.dim_of(l).unwrap()).product();
        let nc: usize = cols.iter().map(|l| self.dim_of(l).unwrap()).product();
        let m = p
            .data
            .into_shape_with_order((nr, nc))
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok((m, cols.into_iter().map(String::from).collect()))
    }

    pub fn conj(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            data: self.data.mapv(|x| x.conj()),
        }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            labels: self.labels.clone(),
            data: self.data.mapv(|x| x * factor),
        }
    }

    /// Elementwise sum of two tensors with the same label set (in any order).
    pub fn add(&self, other: &Tensor) -> Result<Self> {
        let order: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        let other = other.permute(&order)?;
        if other.dims() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "adding tensors of dims {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(Self {
            labels: self.labels.clone(),
            data: &self.data + &other.data,
        })
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Contract `a` and `b` over the given `(label in a, label in b)` pairs.
///
/// The result carries the unpaired labels of `a` followed by those of `b`.
pub fn contract(a: &Tensor, b: &Tensor, pairs: &[(&str, &str)]) -> Result<Tensor> {
    let mut seen_a = HashSet::new();
    let mut seen_b = HashSet::new();
    for (la, lb) in pairs {
        let da = a.dim_of(la)?;
        let db = b.dim_of(lb)?;
        if da != db {
            return Err(Error::DimensionMismatch(format!(
                "contracting `{la}` (extent {da}) with `{lb}` (extent {db})"
            )));
        }
        if !seen_a.insert(*la) || !seen_b.insert(*lb) {
            return Err(Error::invalid("label paired more than once"));
        }
    }
    let free_a: Vec<&str> = a
        .labels
        .iter()
        .map(String::as_str)
        .filter(|l| !seen_a.contains(l))
        .collect();
    let free_b: Vec<&str> = b
        .labels
        .iter()
        .map(String::as_str)
        .filter(|l| !seen_b.contains(l))
        .collect();

    let mut order_a = free_a.clone();
    order_a.extend(pairs.iter().map(|(la, _)| *la));
    let mut order_b: Vec<&str> = pairs.iter().map(|(_, lb)| *lb).collect();
    order_b.extend(free_b.iter().copied());

    let pa = a.permute(&order_a)?;
    let pb = b.permute(&order_b)?;
    let m: usize = free_a.iter().map(|l| a.dim_of(l).unwrap()).product();
    let k: usize = pairs.iter().map(|(la, _)| a.dim_of(la).unwrap()).product();
    let n: usize = free_b.iter().map(|l| b.dim_of(l).unwrap()).product();
    let ma = pa
        .data
        .into_shape_with_order((m, k))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let mb = pb
        .data
        .into_shape_with_order((k, n))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let prod = ma.dot(&mb);

    let mut dims: Vec<usize> = free_a.iter().map(|l| a.dim_of(l).unwrap()).collect();
    dims.extend(free_b.iter().map(|l| b.dim_of(l).unwrap()));
    let mut labels: Vec<String> = free_a.iter().map(|l| l.to_string()).collect();
    labels.extend(free_b.iter().map(|l| l.to_string()));
    let data = prod
        .into_shape_with_order(IxDyn(&dims))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Tensor::new(labels, data)
}

/// Outcome of [`svd_split`]: `t ≈ contract(u·diag(s), v)` over the bond label.
#[derive(Clone, Debug)]
pub struct SvdSplit {
    /// Row labels followed by the bond label; orthonormal columns.
    pub u: Tensor,
    pub s: Vec<f64>,
    /// Bond label followed by the remaining labels; orthonormal rows.
    pub v: Tensor,
    pub discarded: f64,
}

/// Split `t` into `U · diag(S) · V` with `row_labels` on the `U` side.
///
/// Both factors receive a new index called `bond`.
pub fn svd_split(t: &Tensor, row_labels: &[&str], limits: &TruncationLimits, bond: &str) -> Result<SvdSplit> {
    if row_labels.is_empty() || row_labels.len() >= t.rank() {
        return Err(Error::invalid(
            "row labels must be a nonempty proper subset of the tensor labels",
        ));
    }
    if t.labels.iter().any(|l| l == bond) {
        return Err(Error::invalid(format!("bond label `{bond}` already used")));
    }
    let (m, cols) = t.to_matrix(row_labels)?;
    let svd = linalg::truncated_svd(&m, limits)?;
    let k = svd.s.len();

    let mut udims: Vec<usize> = row_labels.iter().map(|l| t.dim_of(l).unwrap()).collect();
    udims.push(k);
    let mut ulabels: Vec<String> = row_labels.iter().map(|l| l.to_string()).collect();
    ulabels.push(bond.to_string());
    let u = Tensor::new(
        ulabels,
        svd.u
            .into_shape_with_order(IxDyn(&udims))
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?,
    )?;

    let mut vdims = vec![k];
    vdims.extend(cols.iter().map(|l| t.dim_of(l).unwrap()));
    let mut vlabels = vec![bond.to_string()];
    vlabels.extend(cols);
    let v = Tensor::new(
        vlabels,
        svd.vt
            .into_shape_with_order(IxDyn(&vdims))
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?,
    )?;
    Ok(SvdSplit {
        u,
        s: svd.s,
        v,
        discarded: svd.discarded,
    })
}
