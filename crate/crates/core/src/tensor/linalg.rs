//! Matrix kernels shared by the tensor and MPS layers.

use ndarray::{s, Array1, Array2, ArrayView2};
use ndarray_linalg::{JobSvd, QR, SVD, SVDDC};
use num_complex::Complex64 as C64;

use super::TruncationLimits;
use crate::error::{Error, Result};

/// Result of a truncated singular value decomposition `m ≈ u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Array2<C64>,
    pub s: Vec<f64>,
    pub vt: Array2<C64>,
    /// Discarded squared singular value weight relative to the total.
    pub discarded: f64,
}

/// Squared singular values this small relative to the total are rounding noise.
pub const WEIGHT_FLOOR: f64 = 1e-28;

/// Number of singular values kept under `limits`.
///
/// `s` must be sorted in descending order. Values tied with the last kept one
/// are kept as well, up to `maxdim`. Relative weights below [`WEIGHT_FLOOR`]
/// are treated as rounding noise and dropped even when `cutoff` is zero.
pub fn kept_count(s: &[f64], limits: &TruncationLimits) -> usize {
    let n = s.len();
    if n == 0 {
        return 0;
    }
    let total: f64 = s.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return 1;
    }
    let mut k = n;
    let mut dropped = 0.0;
    while k > 1 {
        let w = s[k - 1] * s[k - 1];
        if (dropped + w) / total <= limits.cutoff.max(WEIGHT_FLOOR) {
            dropped += w;
            k -= 1;
        } else {
            break;
        }
    }
    k = k.min(limits.maxdim);
    while k < n && k < limits.maxdim && (s[k - 1] - s[k]).abs() <= 1e-12 * s[k - 1] {
        k += 1;
    }
    k
}

fn raw_svd(m: &Array2<C64>) -> Result<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    if let Ok((Some(u), s, Some(vt))) = m.svddc(JobSvd::Some) {
        if s.iter().all(|x| x.is_finite()) {
            return Ok((u, s, vt));
        }
    }
    // divide-and-conquer occasionally fails to converge; fall back to QR iteration
    let (u, s, vt) = m
        .svd(true, true)
        .map_err(|e| Error::Linalg(format!("svd of {:?} matrix: {e}", m.dim())))?;
    let (u, vt) = match (u, vt) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Linalg("svd returned no singular vectors".into())),
    };
    let k = s.len();
    Ok((u.slice(s![.., ..k]).to_owned(), s, vt.slice(s![..k, ..]).to_owned()))
}

/// Singular value decomposition truncated according to `limits`.
///
/// An all-zero matrix yields a single zero singular value with zero discarded
/// weight.
pub fn truncated_svd(m: &Array2<C64>, limits: &TruncationLimits) -> Result<TruncatedSvd> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if m.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    if m.iter().all(|x| *x == C64::new(0.0, 0.0)) {
        let mut u = Array2::zeros((rows, 1));
        u[[0, 0]] = C64::new(1.0, 0.0);
        let mut vt = Array2::zeros((1, cols));
        vt[[0, 0]] = C64::new(1.0, 0.0);
        return Ok(TruncatedSvd {
            u,
            s: vec![0.0],
            vt,
            discarded: 0.0,
        });
    }
    let (u, s, vt) = raw_svd(m)?;
    let s: Vec<f64> = s.to_vec();
    let k = kept_count(&s, limits);
    let total: f64 = s.iter().map(|x| x * x).sum();
    let dropped: f64 = s[k..].iter().map(|x| x * x).sum();
    Ok(TruncatedSvd {
        u: u.slice(s![.., ..k]).to_owned(),
        s: s[..k].to_vec(),
        vt: vt.slice(s![..k, ..]).to_owned(),
        discarded: if total > 0.0 { dropped / total } else { 0.0 },
    })
}

/// Thin QR decomposition: `m = q · r` with `q` having orthonormal columns.
pub fn qr_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    let (rows, cols) = m.dim();
    let k = rows.min(cols);
    let (q, r) = m
        .qr()
        .map_err(|e| Error::Linalg(format!("qr of {:?} matrix: {e}", m.dim())))?;
    let q = q.slice(s![.., ..k]).to_owned();
    let r = r.slice(s![..k, ..]).to_owned();
    Ok((q, r))
}

/// Thin LQ decomposition: `m = l · q` with `q` having orthonormal rows.
pub fn lq_thin(m: &Array2<C64>) -> Result<(Array2<C64>, Array2<C64>)> {
    let (q, r) = qr_thin(&adjoint(&m.view()))?;
    Ok((adjoint(&r.view()), adjoint(&q.view())))
}

pub fn adjoint(m: &ArrayView2<C64>) -> Array2<C64> {
    m.t().mapv(|x| x.conj())
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

/// Kronecker product `a ⊗ b` (row index of `a` varies slowest).
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let x = a[[i, j]];
            if x == C64::new(0.0, 0.0) {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, y| *o = x * y);
        }
    }
    out
}

fn one_norm(m: &Array2<C64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
///
/// The input is scaled so that its 1-norm is at most 1/4, where 18 Taylor
/// terms are accurate to well below double precision.
pub fn matrix_exponential(m: &Array2<C64>) -> Result<Array2<C64>> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!(
            "matrix exponential of a non-square {rows}x{cols} matrix"
        )));
    }
    if m.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input".into()));
    }
    let norm = one_norm(m);
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.mapv(|x| x / 2f64.powi(squarings));
    let mut result = identity(rows);
    let mut term = identity(rows);
    for k in 1..=18 {
        term = term.dot(&scaled).mapv(|x| x / k as f64);
        result += &term;
        if one_norm(&term) <= 1e-18 * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn kept_count_applies_cutoff_then_maxdim() {
        let limits = TruncationLimits::new(1e-3, 10).unwrap();
        assert_eq!(kept_count(&[1.0, 0.1, 0.01], &limits), 2);
        let limits = TruncationLimits::new(0.0, 2).unwrap();
        assert_eq!(kept_count(&[1.0, 0.1, 0.01], &limits), 2);
    }

    #[test]
    fn ties_at_the_cut_are_kept() {
        let limits = TruncationLimits::new(0.3, 10).unwrap();
        // cutoff alone would keep two of the three equal values
        assert_eq!(kept_count(&[1.0, 0.5, 0.5, 0.5], &limits), 4);
        let limits = TruncationLimits::new(0.3, 3).unwrap();
        assert_eq!(kept_count(&[1.0, 0.5, 0.5, 0.5], &limits), 3);
    }

    #[test]
    fn zero_matrix_has_single_zero_value() {
        let m = Array2::<C64>::zeros((3, 2));
        let svd = truncated_svd(&m, &TruncationLimits::exact()).unwrap();
        assert_eq!(svd.s, vec![0.0]);
        assert_eq!(svd.discarded, 0.0);
    }

    #[test]
    fn lq_reconstructs() {
        let m = array![[c(1.0), c(2.0), c(3.0)], [c(0.0), C64::new(1.0, 1.0), c(-1.0)]];
        let (l, q) = lq_thin(&m).unwrap();
        let back = l.dot(&q);
        for (a, b) in back.iter().zip(m.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
        let gram = q.dot(&adjoint(&q.view()));
        for ((i, j), x) in gram.indexed_iter() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((x - c(expected)).norm() < 1e-13);
        }
    }

    #[test]
    fn exp_rejects_non_square() {
        let m = Array2::<C64>::zeros((2, 3));
        assert!(matches!(matrix_exponential(&m), Err(Error::DimensionMismatch(_))));
    }
}
