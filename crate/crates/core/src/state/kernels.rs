//! Reshaping and factorization helpers for 3-index site tensors
//! `(left, physical, right)`.

use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tensor::linalg::{lq_thin, qr_thin};

pub(crate) fn as_matrix(t: &Array3<C64>, split_after: usize) -> Array2<C64> {
    let (l, p, r) = t.dim();
    let (rows, cols) = if split_after == 1 { (l, p * r) } else { (l * p, r) };
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("standard layout reshape")
}

pub(crate) fn from_matrix(m: Array2<C64>, dims: (usize, usize, usize)) -> Array3<C64> {
    m.as_standard_layout()
        .into_owned()
        .into_shape_with_order(dims)
        .expect("standard layout reshape")
}

/// `t = q · r` with `q` left-orthonormal.
pub(crate) fn left_qr(t: &Array3<C64>) -> Result<(Array3<C64>, Array2<C64>)> {
    let (l, p, _) = t.dim();
    let (q, r) = qr_thin(&as_matrix(t, 2))?;
    let k = q.ncols();
    Ok((from_matrix(q, (l, p, k)), r))
}

/// `t = l · q` with `q` right-orthonormal.
pub(crate) fn right_lq(t: &Array3<C64>) -> Result<(Array2<C64>, Array3<C64>)> {
    let (_, p, r) = t.dim();
    let (lm, q) = lq_thin(&as_matrix(t, 1))?;
    let k = q.nrows();
    Ok((lm, from_matrix(q, (k, p, r))))
}

/// `m · t`, contracting the left index of `t`.
pub(crate) fn mul_left(m: &Array2<C64>, t: &Array3<C64>) -> Array3<C64> {
    let (_, p, r) = t.dim();
    from_matrix(m.dot(&as_matrix(t, 1)), (m.nrows(), p, r))
}

/// `t · m`, contracting the right index of `t`.
pub(crate) fn mul_right(t: &Array3<C64>, m: &Array2<C64>) -> Array3<C64> {
    let (l, p, _) = t.dim();
    from_matrix(as_matrix(t, 2).dot(m), (l, p, m.ncols()))
}

pub(crate) fn check_finite(t: &Array3<C64>, what: &str) -> Result<()> {
    if t.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
