//! Expectation values, purities and entanglement measures.
//!
//! Expectation values are raw: for a mixed state `⟨O⟩ = Tr(Oρ)` is not
//! divided by `Tr ρ`, so that trace drift stays visible. For pure states the
//! trace is `⟨ψ|ψ⟩` and the purity is 1 by convention.

use std::borrow::Cow;
use std::fmt;

use ndarray::{Array2, Array3};
use num_complex::Complex64 as C64;

use crate::dsl::{parse, ExprKind, OpExpr, ParseContext, Registry};
use crate::error::{Error, Result};
use crate::mpo::{lower_observable, mpo_from_terms, Mpo, TermSum};
use crate::state::kernels::as_matrix;
use crate::state::{identity_vector, Rep, State};
use crate::tensor::linalg::truncated_svd;
use crate::tensor::TruncationLimits;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Bra tensors: the state itself (pure) or the vectorized identity (mixed).
fn bra(s: &State) -> Cow<'_, [Array3<C64>]> {
    match s.rep() {
        Rep::Pure => Cow::Borrowed(s.tensors()),
        Rep::Mixed => Cow::Owned(
            (0..s.len())
                .map(|i| {
                    let v = identity_vector(s.system().kind(i).dim());
                    Array3::from_shape_vec((1, v.len(), 1), v).expect("shape")
                })
                .collect(),
        ),
    }
}

/// `⟨bra| M |ket⟩` with `bra` conjugated.
fn sandwich(bra: &[Array3<C64>], m: &Mpo, ket: &[Array3<C64>]) -> C64 {
    // env[(a, w), b]
    let mut env = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    let mut dims = (1usize, 1usize, 1usize);
    for ((bt, w), kt) in bra.iter().zip(m.tensors()).zip(ket) {
        let (a, wl, _) = dims;
        let (_, q, b2) = kt.dim();
        let (_, p, _, wr) = w.dim();
        let a2 = bt.dim().2;
        // t1[(a, w), (q, b')]
        let t1 = env.dot(&as_matrix(kt, 1));
        // -> [(a, b'), (w, q)]
        let t1 = t1
            .into_shape_with_order((a, wl, q, b2))
            .expect("reshape")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((a * b2, wl * q))
            .expect("reshape");
        // w as [(w, q), (p, w')]
        let wm = w
            .view()
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((wl * q, p * wr))
            .expect("reshape");
        // t2[(a, b'), (p, w')] -> [(a, p), (w', b')]
        let t2 = t1
            .dot(&wm)
            .into_shape_with_order((a, b2, p, wr))
            .expect("reshape")
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((a * p, wr * b2))
            .expect("reshape");
        let bm = as_matrix(bt, 2).mapv(|x| x.conj());
        env = bm.t().dot(&t2).into_shape_with_order((a2 * wr, b2)).expect("reshape");
        dims = (a2, wr, b2);
    }
    env[[0, 0]]
}

/// Transfer-matrix environments of `⟨bra|ket⟩`, for fast local expectations.
pub struct Environments<'a> {
    state: &'a State,
    bra: Cow<'a, [Array3<C64>]>,
    left: Vec<Array2<C64>>,
    right: Vec<Array2<C64>>,
}

impl<'a> Environments<'a> {
    pub fn new(state: &'a State) -> Self {
        let bra = bra(state);
        let ket = state.tensors();
        let n = ket.len();
        let mut left = Vec::with_capacity(n);
        left.push(Array2::from_elem((1, 1), C64::new(1.0, 0.0)));
        for i in 0..n - 1 {
            let (_, p, r) = ket[i].dim();
            let l: &Array2<C64> = &left[i];
            let t = l
                .dot(&as_matrix(&ket[i], 1))
                .into_shape_with_order((l.nrows() * p, r))
                .expect("reshape");
            let bm = as_matrix(&bra[i], 2).mapv(|x| x.conj());
            left.push(bm.t().dot(&t));
        }
        let mut right = vec![Array2::from_elem((1, 1), C64::new(1.0, 0.0)); n];
        for i in (1..n).rev() {
            let (l, p, _) = ket[i].dim();
            let r: &Array2<C64> = &right[i];
            // t[(b, p), a'] = K[(b, p), b'] R[a', b']ᵀ
            let t = as_matrix(&ket[i], 2).dot(&r.t());
            let t = t.into_shape_with_order((l, p * r.nrows())).expect("reshape");
            let bm = as_matrix(&bra[i], 1).mapv(|x| x.conj());
            right[i - 1] = bm.dot(&t.t());
        }
        Self {
            state,
            bra,
            left,
            right,
        }
    }

    /// Full contraction: the trace (mixed) or squared norm (pure).
    pub fn total(&self) -> C64 {
        self.local(0, None)
    }

    /// `⟨bra| m_i |ket⟩` for a physical-space matrix at site `i`.
    pub fn local(&self, i: usize, m: Option<&Array2<C64>>) -> C64 {
        let k = &self.state.tensors()[i];
        let (l, p, r) = k.dim();
        let k = match m {
            None => k.clone(),
            Some(m) => {
                let flat = k
                    .view()
                    .permuted_axes([1, 0, 2])
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((p, l * r))
                    .expect("reshape");
                m.dot(&flat)
                    .into_shape_with_order((p, l, r))
                    .expect("reshape")
                    .permuted_axes([1, 0, 2])
                    .as_standard_layout()
                    .into_owned()
            }
        };
        let lenv = &self.left[i];
        let renv = &self.right[i];
        let x = lenv
            .dot(&as_matrix(&k, 1))
            .into_shape_with_order((lenv.nrows() * p, r))
            .expect("reshape");
        let y = x.dot(&renv.t());
        let bm = as_matrix(&self.bra[i], 2);
        bm.iter().zip(y.iter()).map(|(b, v)| b.conj() * v).sum()
    }

    /// Expectation value of a lowered observable. Strings on one site use
    /// the environments; anything else falls back to an MPO sandwich.
    pub fn term_sum(&self, ts: &TermSum) -> Result<C64> {
        let sites: Vec<usize> = ts.terms.iter().flat_map(|t| t.factors.iter().map(|f| f.0)).collect();
        let single = ts.terms.iter().all(|t| t.factors.len() <= 1) && sites.windows(2).all(|w| w[0] == w[1]);
        if !single {
            let m = mpo_from_terms(ts)?;
            return Ok(sandwich(&self.bra, &m, self.state.tensors()));
        }
        let mut total = zero();
        let mut norm: Option<C64> = None;
        for t in &ts.terms {
            total += t.coef
                * match t.factors.first() {
                    None => *norm.get_or_insert_with(|| self.total()),
                    Some((i, m)) => self.local(*i, Some(m)),
                };
        }
        Ok(total)
    }
}

/// `⟨O⟩` for an indexed, channel-free expression.
pub fn expect(s: &State, e: &OpExpr, registry: &Registry) -> Result<C64> {
    let ts = lower_observable(e, s.system(), s.rep(), registry)?;
    Environments::new(s).term_sum(&ts)
}

/// `⟨O(i)⟩` for every site `i`; `None` where the operator is not defined
/// for the kind of site `i`.
pub fn expect_sites(s: &State, op: &OpExpr, registry: &Registry) -> Result<Vec<Option<C64>>> {
    generic_arity(op, 1)?;
    let env = Environments::new(s);
    (0..s.len())
        .map(|i| {
            let e = OpExpr::Indexed(Box::new(op.clone()), vec![i + 1]);
            match lower_observable(&e, s.system(), s.rep(), registry) {
                Ok(ts) => env.term_sum(&ts).map(Some),
                Err(Error::UnknownOperator(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn generic_arity(op: &OpExpr, k: usize) -> Result<()> {
    match op.kind()? {
        ExprKind::Generic(j) if j == k => Ok(()),
        _ => Err(Error::invalid(format!(
            "`{op}` is not a generic operator on {k} site(s)"
        ))),
    }
}

/// `C[i][j] = ⟨A(i) B(j)⟩` for `i ≠ j` and `⟨(A·B)(i)⟩` on the diagonal.
pub fn correlation_matrix(s: &State, a: &OpExpr, b: &OpExpr, registry: &Registry) -> Result<Array2<C64>> {
    generic_arity(a, 1)?;
    generic_arity(b, 1)?;
    let n = s.len();
    let env = Environments::new(s);
    let ab = OpExpr::mul(a.clone(), b.clone())?;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let e = if i == j {
                OpExpr::Indexed(Box::new(ab.clone()), vec![i + 1])
            } else {
                OpExpr::mul(
                    OpExpr::Indexed(Box::new(a.clone()), vec![i + 1]),
                    OpExpr::Indexed(Box::new(b.clone()), vec![j + 1]),
                )?
            };
            let ts = lower_observable(&e, s.system(), s.rep(), registry)?;
            out[[i, j]] = env.term_sum(&ts)?;
        }
    }
    Ok(out)
}

/// `Tr ρ` (mixed) or `⟨ψ|ψ⟩` (pure).
pub fn trace(s: &State) -> C64 {
    Environments::new(s).total()
}

/// `Tr ρ²` as the self-overlap `⟨⟨ρ|ρ⟩⟩` (mixed) or `⟨ψ|ψ⟩²` (pure).
pub fn trace2(s: &State) -> Result<C64> {
    let o = s.overlap(s)?;
    Ok(match s.rep() {
        Rep::Mixed => o,
        Rep::Pure => o * o,
    })
}

/// `Tr ρ² / (Tr ρ)²`; 1 for pure states.
pub fn purity(s: &State) -> Result<f64> {
    match s.rep() {
        Rep::Pure => Ok(1.0),
        Rep::Mixed => {
            let t = trace(s);
            Ok(trace2(s)?.re / t.norm_sqr())
        }
    }
}

/// `−ln(purity)`.
pub fn renyi2(s: &State) -> Result<f64> {
    Ok(-purity(s)?.ln())
}

/// `|Tr ρ − 1|`; for pure states `|⟨ψ|ψ⟩ − 1|`.
pub fn trace_error(s: &State) -> f64 {
    (trace(s) - 1.0).norm()
}

/// Entropy of the normalized Schmidt spectrum across the bond after the
/// first `bond` sites (natural logarithm). For mixed states this is the
/// operator-space entanglement entropy.
pub fn osee(s: &State, bond: usize) -> Result<f64> {
    let n = s.len();
    if bond == 0 || bond >= n {
        return Err(Error::invalid(format!(
            "bond {bond} outside 1..{}",
            n.saturating_sub(1)
        )));
    }
    let o = s.orthogonalize(bond - 1)?;
    let svd = truncated_svd(&as_matrix(&o.tensors()[bond - 1], 2), &TruncationLimits::exact())?;
    let total: f64 = svd.s.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(svd
        .s
        .iter()
        .map(|x| x * x / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// What to measure.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSpec {
    /// One indexed expression.
    Expr(OpExpr),
    /// A one-site generic operator on every site.
    Broadcast(OpExpr),
    /// A pair of one-site generic operators.
    Correlation(OpExpr, OpExpr),
    Trace,
    Trace2,
    Purity,
    Renyi2,
    /// OSEE across the bond after the given number of sites.
    EE(usize),
    Linkdim,
    TraceError,
}

/// Result of a measurement.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasureValue {
    Scalar(C64),
    Sites(Vec<Option<C64>>),
    Matrix(Array2<C64>),
    Bonds(Vec<usize>),
}

impl MeasureSpec {
    /// Parse a measurement: `Trace`, `Trace2`, `Purity`, `Renyi2`,
    /// `Linkdim`, `TraceError`, `EE(k)`, a pair `(A, B)`, a generic one-site
    /// operator or an indexed expression.
    pub fn parse(text: &str, ctx: &ParseContext) -> Result<Self> {
        let t = text.trim();
        match t {
            "Trace" => return Ok(MeasureSpec::Trace),
            "Trace2" => return Ok(MeasureSpec::Trace2),
            "Purity" => return Ok(MeasureSpec::Purity),
            "Renyi2" => return Ok(MeasureSpec::Renyi2),
            "Linkdim" => return Ok(MeasureSpec::Linkdim),
            "TraceError" => return Ok(MeasureSpec::TraceError),
            _ => {}
        }
        if let Some(arg) = t.strip_prefix("EE(").and_then(|r| r.strip_suffix(')')) {
            let k = crate::dsl::parse_scalar(arg, ctx)?;
            if k.im != 0.0 || k.re < 1.0 || k.re.fract() != 0.0 {
                return Err(Error::invalid(format!("EE needs a positive integer bond, got `{arg}`")));
            }
            return Ok(MeasureSpec::EE(k.re as usize));
        }
        if let Some(inner) = t.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            if let Some(split) = top_level_comma(inner) {
                let a = parse(&inner[..split], ctx)?;
                let b = parse(&inner[split + 1..], ctx)?;
                generic_arity(&a, 1)?;
                generic_arity(&b, 1)?;
                return Ok(MeasureSpec::Correlation(a, b));
            }
        }
        let e = parse(t, ctx)?;
        if e.contains_channel() {
            return Err(Error::invalid(format!("cannot measure the channel `{t}`")));
        }
        match e.kind()? {
            ExprKind::Generic(1) => Ok(MeasureSpec::Broadcast(e)),
            ExprKind::Indexed => Ok(MeasureSpec::Expr(e)),
            ExprKind::Scalar => Err(Error::invalid(format!("`{t}` is a plain number"))),
            ExprKind::Generic(k) => Err(Error::invalid(format!("`{t}` acts on {k} sites; give site indices"))),
        }
    }

    pub fn measure(&self, s: &State, registry: &Registry) -> Result<MeasureValue> {
        let scalar = |x: f64| MeasureValue::Scalar(C64::new(x, 0.0));
        Ok(match self {
            MeasureSpec::Expr(e) => MeasureValue::Scalar(expect(s, e, registry)?),
            MeasureSpec::Broadcast(e) => MeasureValue::Sites(expect_sites(s, e, registry)?),
            MeasureSpec::Correlation(a, b) => MeasureValue::Matrix(correlation_matrix(s, a, b, registry)?),
            MeasureSpec::Trace => MeasureValue::Scalar(trace(s)),
            MeasureSpec::Trace2 => MeasureValue::Scalar(trace2(s)?),
            MeasureSpec::Purity => scalar(purity(s)?),
            MeasureSpec::Renyi2 => scalar(renyi2(s)?),
            MeasureSpec::EE(k) => scalar(osee(s, *k)?),
            MeasureSpec::Linkdim => MeasureValue::Bonds(s.bond_dims()),
            MeasureSpec::TraceError => scalar(trace_error(s)),
        })
    }
}

fn top_level_comma(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureSpec::Expr(e) | MeasureSpec::Broadcast(e) => write!(f, "{e}"),
            MeasureSpec::Correlation(a, b) => write!(f, "({a}, {b})"),
            MeasureSpec::Trace => write!(f, "Trace"),
            MeasureSpec::Trace2 => write!(f, "Trace2"),
            MeasureSpec::Purity => write!(f, "Purity"),
            MeasureSpec::Renyi2 => write!(f, "Renyi2"),
            MeasureSpec::EE(k) => write!(f, "EE({k})"),
            MeasureSpec::Linkdim => write!(f, "Linkdim"),
            MeasureSpec::TraceError => write!(f, "TraceError"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::SiteKind;
    use crate::state::System;

    fn reg() -> Registry {
        Registry::builtin()
    }

    fn ex(text: &str) -> OpExpr {
        parse(text, &ParseContext::new(reg())).unwrap()
    }

    fn ghz(n: usize, rep: Rep) -> State {
        let sys = System::uniform(n, SiteKind::Qubit).unwrap();
        let up = State::product(Rep::Pure, &sys, &["Up"]).unwrap();
        let dn = State::product(Rep::Pure, &sys, &["Dn"]).unwrap();
        let h = C64::new(0.5f64.sqrt(), 0.0);
        let g = State::add(&[(h, &up), (h, &dn)], &TruncationLimits::default()).unwrap();
        match rep {
            Rep::Pure => g,
            Rep::Mixed => g.mix().unwrap(),
        }
    }

    #[test]
    fn product_state_values() {
        let sys = System::uniform(3, SiteKind::Qubit).unwrap();
        let s = State::product(Rep::Pure, &sys, &["Up"]).unwrap();
        let z = expect_sites(&s, &ex("Z"), &reg()).unwrap();
        assert!(z.iter().all(|v| (v.unwrap() - 1.0).norm() < 1e-14));
        let m = State::product(Rep::Mixed, &sys, &["FullyMixed"]).unwrap();
        assert!(expect(&m, &ex("Z(1)"), &reg()).unwrap().norm() < 1e-14);
        assert!((expect(&m, &ex("Id(1)"), &reg()).unwrap() - 1.0).norm() < 1e-14);
        assert!((purity(&m).unwrap() - 0.125).abs() < 1e-14);
        assert!((renyi2(&m).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(osee(&m, 1).unwrap(), 0.0);
    }

    #[test]
    fn ghz_values() {
        for rep in [Rep::Pure, Rep::Mixed] {
            let g = ghz(4, rep);
            assert!((expect(&g, &ex("Z(1)Z(2)"), &reg()).unwrap() - 1.0).norm() < 1e-12);
            assert!(expect(&g, &ex("Z(1)"), &reg()).unwrap().norm() < 1e-12);
            let expected = match rep {
                Rep::Pure => 2f64.ln(),
                Rep::Mixed => 4f64.ln(),
            };
            assert!(
                (osee(&g, 2).unwrap() - expected).abs() < 1e-12,
                "{rep}: {}",
                osee(&g, 2).unwrap()
            );
            let c = correlation_matrix(&g, &ex("Z"), &ex("Z"), &reg()).unwrap();
            assert!(c.iter().all(|v| (v - 1.0).norm() < 1e-12));
        }
        assert!((purity(&ghz(4, Rep::Mixed)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_specs_parse() {
        let ctx = ParseContext::new(reg()).with_sites(6);
        assert_eq!(MeasureSpec::parse("Purity", &ctx).unwrap(), MeasureSpec::Purity);
        assert_eq!(MeasureSpec::parse("EE(div(6, 2))", &ctx).unwrap(), MeasureSpec::EE(3));
        assert!(matches!(
            MeasureSpec::parse("(X, Y)", &ctx).unwrap(),
            MeasureSpec::Correlation(..)
        ));
        assert!(matches!(
            MeasureSpec::parse("X", &ctx).unwrap(),
            MeasureSpec::Broadcast(_)
        ));
        assert!(matches!(
            MeasureSpec::parse("X(1)Y(2)", &ctx).unwrap(),
            MeasureSpec::Expr(_)
        ));
        assert!(MeasureSpec::parse("X(1)", &ctx).is_ok());
        assert!(MeasureSpec::parse("Gate(X)(1)", &ctx).is_err());
        assert!(MeasureSpec::parse("EE(0)", &ctx).is_err());
    }
}
