use std::fmt;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Reference to a named operator together with the number of sites it acts on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OpName {
    pub name: String,
    pub support: usize,
}

/// Symbolic operator expression.
///
/// Expressions come in two flavors: *generic* ones (like `X` or
/// `exp(-1i*tensor(X,X))`) that act on an unspecified group of `k` sites, and
/// *indexed* ones (like `X(3)`) pinned to specific sites. Sites in `Indexed`
/// are 1-based.
///
/// The constructors [`OpExpr::add`], [`OpExpr::mul`], [`OpExpr::scale`] and
/// [`OpExpr::dag`] keep expressions in a normal form: sums and products are
/// flat, scalars are folded and pulled out of products, and adjoints sit only
/// on named operators.
#[derive(Clone, Debug, PartialEq)]
pub enum OpExpr {
    /// A number; inside operator sums it stands for a multiple of the identity.
    Scalar(C64),
    Named(OpName),
    Indexed(Box<OpExpr>, Vec<usize>),
    Scale(C64, Box<OpExpr>),
    Sum(Vec<OpExpr>),
    Prod(Vec<OpExpr>),
    TensorProd(Vec<OpExpr>),
    Dag(Box<OpExpr>),
    Exp(Box<OpExpr>),
    Controlled(Box<OpExpr>),
    Dissipator(Box<OpExpr>),
    Gate(Box<OpExpr>),
}

/// What an expression denotes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExprKind {
    Scalar,
    /// Operator acting on the given number of (unspecified) sites.
    Generic(usize),
    /// Operator pinned to sites of the system.
    Indexed,
}

fn one() -> C64 {
    C64::new(1.0, 0.0)
}

impl OpExpr {
    pub fn named(name: &str, support: usize) -> Self {
        OpExpr::Named(OpName {
            name: name.to_string(),
            support,
        })
    }

    pub fn kind(&self) -> Result<ExprKind> {
        use ExprKind::*;
        Ok(match self {
            OpExpr::Scalar(_) => Scalar,
            OpExpr::Named(n) => Generic(n.support),
            OpExpr::Indexed(g, sites) => match g.kind()? {
                Generic(k) if k == sites.len() => Indexed,
                Generic(k) => {
                    return Err(Error::invalid(format!(
                        "operator acting on {k} sites indexed with {} sites",
                        sites.len()
                    )))
                }
                _ => return Err(Error::invalid("only generic operators can be indexed")),
            },
            OpExpr::Scale(_, x) | OpExpr::Dag(x) | OpExpr::Exp(x) => x.kind()?,
            OpExpr::Sum(xs) | OpExpr::Prod(xs) => {
                let mut kind = Scalar;
                for x in xs {
                    kind = join_kinds(kind, x.kind()?)?;
                }
                kind
            }
            OpExpr::TensorProd(xs) => {
                let mut total = 0;
                for x in xs {
                    match x.kind()? {
                        Generic(k) => total += k,
                        _ => return Err(Error::invalid("tensor() takes generic operators")),
                    }
                }
                Generic(total)
            }
            OpExpr::Controlled(x) => match x.kind()? {
                Generic(k) => Generic(k + 1),
                _ => return Err(Error::invalid("controlled() takes a generic operator")),
            },
            OpExpr::Dissipator(x) | OpExpr::Gate(x) => match x.kind()? {
                Scalar => return Err(Error::invalid("Dissipator/Gate of a plain number")),
                k => k,
            },
        })
    }

    /// True if a `Dissipator` or `Gate` node occurs anywhere.
    pub fn contains_channel(&self) -> bool {
        match self {
            OpExpr::Dissipator(_) | OpExpr::Gate(_) => true,
            OpExpr::Scalar(_) | OpExpr::Named(_) => false,
            OpExpr::Indexed(x, _) | OpExpr::Scale(_, x) | OpExpr::Dag(x) | OpExpr::Exp(x) | OpExpr::Controlled(x) => {
                x.contains_channel()
            }
            OpExpr::Sum(xs) | OpExpr::Prod(xs) | OpExpr::TensorProd(xs) => xs.iter().any(|x| x.contains_channel()),
        }
    }

    /// Sites (1-based) referenced by an indexed expression, sorted and unique.
    pub fn sites(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_sites(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_sites(&self, out: &mut Vec<usize>) {
        match self {
            OpExpr::Indexed(_, s) => out.extend(s),
            OpExpr::Scalar(_) | OpExpr::Named(_) => {}
            OpExpr::Scale(_, x)
            | OpExpr::Dag(x)
            | OpExpr::Exp(x)
            | OpExpr::Controlled(x)
            | OpExpr::Dissipator(x)
            | OpExpr::Gate(x) => x.collect_sites(out),
            OpExpr::Sum(xs) | OpExpr::Prod(xs) | OpExpr::TensorProd(xs) => xs.iter().for_each(|x| x.collect_sites(out)),
        }
    }

    /// `c * x`, folding nested scales and dropping unit factors.
    pub fn scale(c: C64, x: OpExpr) -> OpExpr {
        match x {
            OpExpr::Scalar(v) => OpExpr::Scalar(c * v),
            OpExpr::Scale(d, inner) => OpExpr::scale(c * d, *inner),
            x if c == one() => x,
            x => OpExpr::Scale(c, Box::new(x)),
        }
    }

    /// `a + b` with flattening. Fails on incompatible kinds.
    pub fn add(a: OpExpr, b: OpExpr) -> Result<OpExpr> {
        join_kinds(a.kind()?, b.kind()?)?;
        if let (OpExpr::Scalar(x), OpExpr::Scalar(y)) = (&a, &b) {
            return Ok(OpExpr::Scalar(x + y));
        }
        let mut terms = Vec::new();
        for x in [a, b] {
            match x {
                OpExpr::Sum(xs) => terms.extend(xs),
                x => terms.push(x),
            }
        }
        Ok(OpExpr::Sum(terms))
    }

    /// `a * b` with flattening; scalar factors are pulled to the front.
    pub fn mul(a: OpExpr, b: OpExpr) -> Result<OpExpr> {
        join_kinds(a.kind()?, b.kind()?)?;
        let (ca, a) = split_scale(a);
        let (cb, b) = split_scale(b);
        let c = ca * cb;
        let core = match (a, b) {
            (None, None) => return Ok(OpExpr::Scalar(c)),
            (Some(x), None) | (None, Some(x)) => x,
            (Some(x), Some(y)) => {
                let mut factors = Vec::new();
                for f in [x, y] {
                    match f {
                        OpExpr::Prod(fs) => factors.extend(fs),
                        f => factors.push(f),
                    }
                }
                OpExpr::Prod(factors)
            }
        };
        Ok(OpExpr::scale(c, core))
    }

    /// Conjugate transpose pushed down to the named operators.
    pub fn dag(self) -> Result<OpExpr> {
        Ok(match self {
            OpExpr::Scalar(c) => OpExpr::Scalar(c.conj()),
            OpExpr::Named(n) => OpExpr::Dag(Box::new(OpExpr::Named(n))),
            OpExpr::Dag(x) => *x,
            OpExpr::Indexed(g, s) => OpExpr::Indexed(Box::new(g.dag()?), s),
            OpExpr::Scale(c, x) => OpExpr::scale(c.conj(), x.dag()?),
            OpExpr::Sum(xs) => OpExpr::Sum(xs.into_iter().map(OpExpr::dag).collect::<Result<_>>()?),
            OpExpr::Prod(xs) => OpExpr::Prod(xs.into_iter().rev().map(OpExpr::dag).collect::<Result<_>>()?),
            OpExpr::TensorProd(xs) => OpExpr::TensorProd(xs.into_iter().map(OpExpr::dag).collect::<Result<_>>()?),
            OpExpr::Exp(x) => OpExpr::Exp(Box::new(x.dag()?)),
            OpExpr::Controlled(x) => OpExpr::Controlled(Box::new(x.dag()?)),
            OpExpr::Dissipator(_) | OpExpr::Gate(_) => {
                return Err(Error::invalid("the adjoint of a Dissipator or Gate is not defined"))
            }
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            OpExpr::Sum(_) => 1,
            OpExpr::Scale(..) | OpExpr::Prod(_) => 2,
            _ => 3,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "(")?;
            self.fmt_at(f, 0)?;
            return write!(f, ")");
        }
        match self {
            OpExpr::Scalar(c) => write_scalar(f, *c),
            OpExpr::Named(n) => write!(f, "{}", n.name),
            OpExpr::Indexed(g, sites) => {
                g.fmt_at(f, 3)?;
                let s: Vec<String> = sites.iter().map(|s| s.to_string()).collect();
                write!(f, "({})", s.join(","))
            }
            OpExpr::Scale(c, x) => {
                write_scalar(f, *c)?;
                write!(f, "*")?;
                x.fmt_at(f, 2)
            }
            OpExpr::Sum(xs) => {
                for (k, x) in xs.iter().enumerate() {
                    if k > 0 {
                        write!(f, " + ")?;
                    }
                    x.fmt_at(f, 2)?;
                }
                Ok(())
            }
            OpExpr::Prod(xs) => {
                for (k, x) in xs.iter().enumerate() {
                    if k > 0 {
                        write!(f, "*")?;
                    }
                    x.fmt_at(f, 3)?;
                }
                Ok(())
            }
            OpExpr::TensorProd(xs) => {
                write!(f, "tensor(")?;
                for (k, x) in xs.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    x.fmt_at(f, 0)?;
                }
                write!(f, ")")
            }
            OpExpr::Dag(x) => write_call(f, "dag", x),
            OpExpr::Exp(x) => write_call(f, "exp", x),
            OpExpr::Controlled(x) => write_call(f, "controlled", x),
            OpExpr::Dissipator(x) => write_call(f, "Dissipator", x),
            OpExpr::Gate(x) => write_call(f, "Gate", x),
        }
    }
}

fn write_scalar(f: &mut fmt::Formatter<'_>, c: C64) -> fmt::Result {
    // `+ 0.0` clears negative zeros, which would not survive a reparse
    let (re, im) = (c.re + 0.0, c.im + 0.0);
    let sign = if im < 0.0 { '-' } else { '+' };
    write!(f, "({:?}{}{:?}i)", re, sign, im.abs())
}

fn write_call(f: &mut fmt::Formatter<'_>, name: &str, x: &OpExpr) -> fmt::Result {
    write!(f, "{name}(")?;
    x.fmt_at(f, 0)?;
    write!(f, ")")
}

impl fmt::Display for OpExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}

fn split_scale(x: OpExpr) -> (C64, Option<OpExpr>) {
    match x {
        OpExpr::Scalar(c) => (c, None),
        OpExpr::Scale(c, inner) => (c, Some(*inner)),
        x => (one(), Some(x)),
    }
}

fn join_kinds(a: ExprKind, b: ExprKind) -> Result<ExprKind> {
    use ExprKind::*;
    match (a, b) {
        (Scalar, k) | (k, Scalar) => Ok(k),
        (Indexed, Indexed) => Ok(Indexed),
        (Generic(x), Generic(y)) if x == y => Ok(Generic(x)),
        (Generic(x), Generic(y)) => Err(Error::invalid(format!(
            "cannot combine operators acting on {x} and {y} sites"
        ))),
        _ => Err(Error::invalid("cannot combine generic and indexed operators")),
    }
}
