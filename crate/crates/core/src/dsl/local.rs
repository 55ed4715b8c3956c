//! Dense matrices of generic expressions on a small group of sites.

use ndarray::{s, Array2};
use num_complex::Complex64 as C64;

use super::expr::OpExpr;
use super::site::{Registry, SiteKind};
use crate::error::{Error, Result};
use crate::tensor::linalg::{adjoint, identity, kron, matrix_exponential};

/// Largest matrix dimension `local_matrix` will build by default.
pub const DEFAULT_MAX_DIM: usize = 4096;

/// Fermion parity of a single-site operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Parity of `m` on one Fermion site: `F m F = ±m`.
pub fn fermion_parity(m: &Array2<C64>) -> Result<Parity> {
    let mut even = 0.0f64;
    let mut odd = 0.0f64;
    for ((i, j), x) in m.indexed_iter() {
        if (i + j) % 2 == 0 {
            even = even.max(x.norm());
        } else {
            odd = odd.max(x.norm());
        }
    }
    let scale = even.max(odd);
    if odd <= 1e-14 * scale {
        Ok(Parity::Even)
    } else if even <= 1e-14 * scale {
        Ok(Parity::Odd)
    } else {
        Err(Error::lowering("fermion operator without definite parity"))
    }
}

/// Evaluate a generic expression acting on sites of the given kinds.
///
/// `Exp` is computed with [`matrix_exponential`]; `Controlled(U)` is the block
/// matrix `I ⊕ U` with the control qubit as the first (most significant)
/// factor.
pub fn local_matrix(expr: &OpExpr, kinds: &[SiteKind], registry: &Registry) -> Result<Array2<C64>> {
    local_matrix_capped(expr, kinds, registry, DEFAULT_MAX_DIM)
}

pub fn local_matrix_capped(
    expr: &OpExpr,
    kinds: &[SiteKind],
    registry: &Registry,
    max_dim: usize,
) -> Result<Array2<C64>> {
    let dim = kinds
        .iter()
        .try_fold(1usize, |acc, k| acc.checked_mul(k.dim()))
        .filter(|d| *d <= max_dim)
        .ok_or_else(|| Error::lowering(format!("operator on {} sites exceeds dimension {max_dim}", kinds.len())))?;
    Ok(match expr {
        OpExpr::Scalar(c) => identity(dim).mapv(|x| x * c),
        OpExpr::Named(n) => {
            if n.support != kinds.len() {
                return Err(Error::lowering(format!(
                    "`{}` acts on {} sites, not {}",
                    n.name,
                    n.support,
                    kinds.len()
                )));
            }
            registry.lookup(&n.name, kinds)?.matrix
        }
        OpExpr::Scale(c, x) => local_matrix_capped(x, kinds, registry, max_dim)? * *c,
        OpExpr::Sum(xs) => {
            let mut acc = Array2::zeros((dim, dim));
            for x in xs {
                acc += &local_matrix_capped(x, kinds, registry, max_dim)?;
            }
            acc
        }
        OpExpr::Prod(xs) => {
            let mut acc = identity(dim);
            for x in xs {
                acc = acc.dot(&local_matrix_capped(x, kinds, registry, max_dim)?);
            }
            acc
        }
        OpExpr::TensorProd(xs) => {
            let mut acc = identity(1);
            let mut offset = 0;
            for x in xs {
                let k = match x.kind()? {
                    super::ExprKind::Generic(k) => k,
                    _ => return Err(Error::lowering("tensor() takes generic operators")),
                };
                if offset + k > kinds.len() {
                    return Err(Error::lowering("tensor() factors exceed the operator support"));
                }
                acc = kron(
                    &acc,
                    &local_matrix_capped(x, &kinds[offset..offset + k], registry, max_dim)?,
                );
                offset += k;
            }
            if offset != kinds.len() {
                return Err(Error::lowering("tensor() factors do not cover the operator support"));
            }
            acc
        }
        OpExpr::Dag(x) => adjoint(&local_matrix_capped(x, kinds, registry, max_dim)?.view()),
        OpExpr::Exp(x) => matrix_exponential(&local_matrix_capped(x, kinds, registry, max_dim)?)?,
        OpExpr::Controlled(x) => {
            if kinds.first() != Some(&SiteKind::Qubit) {
                return Err(Error::lowering("the control of controlled() must be a Qubit"));
            }
            let u = local_matrix_capped(x, &kinds[1..], registry, max_dim)?;
            let n = u.nrows();
            let mut m = identity(2 * n);
            m.slice_mut(s![n.., n..]).assign(&u);
            m
        }
        OpExpr::Indexed(..) => return Err(Error::lowering("indexed operator inside a generic expression")),
        OpExpr::Dissipator(_) | OpExpr::Gate(_) => {
            return Err(Error::lowering("Dissipator/Gate is not an operator in this context"))
        }
    })
}
