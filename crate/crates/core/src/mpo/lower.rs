//! Lowering of indexed expressions to sums of site-local operator strings.
//!
//! Fermionic operators are mapped to qubits by a Jordan–Wigner transform:
//! an odd operator `a_j` becomes `F_1 ⋯ F_{j−1} a_j`, and products of such
//! strings are multiplied site by site, so that strings cancel pairwise left
//! of the leftmost odd factor.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::dsl::{fermion_parity, local_matrix, ExprKind, OpExpr, Parity, Registry, SiteKind};
use crate::error::{Error, Result};
use crate::state::{Rep, System};
use crate::tensor::linalg::{adjoint, identity, kron, matrix_exponential, truncated_svd};
use crate::tensor::{Tensor, TruncationLimits};

/// One operator string `coef · ⊗_s M_s`; sites not listed carry the identity.
#[derive(Clone, Debug)]
pub struct Term {
    pub coef: C64,
    /// 0-based sites in increasing order with their local matrices.
    pub factors: Vec<(usize, Array2<C64>)>,
}

/// A sum of operator strings acting on the physical spaces of a system
/// (`d` per site for pure states, `d²` for mixed states).
#[derive(Clone, Debug)]
pub struct TermSum {
    pub rep: Rep,
    pub phys_dims: Vec<usize>,
    pub terms: Vec<Term>,
}

impl TermSum {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_sites(&self) -> usize {
        self.phys_dims.len()
    }

    /// True if every term acts on at most one site.
    pub fn is_single_site(&self) -> bool {
        self.terms.iter().all(|t| t.factors.len() <= 1)
    }

    /// Dense matrix of the whole sum (first site most significant).
    pub fn to_dense(&self, max_dim: usize) -> Result<Array2<C64>> {
        let dim = self
            .phys_dims
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|d| *d <= max_dim)
            .ok_or_else(|| Error::invalid("dense expansion too large"))?;
        let mut out = Array2::zeros((dim, dim));
        for t in &self.terms {
            let mut m = Array2::from_elem((1, 1), t.coef);
            let mut it = t.factors.iter().peekable();
            for (site, d) in self.phys_dims.iter().enumerate() {
                let local = match it.peek() {
                    Some((s, f)) if *s == site => {
                        it.next();
                        f.clone()
                    }
                    _ => identity(*d),
                };
                m = kron(&m, &local);
            }
            out += &m;
        }
        Ok(out)
    }
}

/// Ket-space operator string used during lowering.
#[derive(Clone, Debug)]
struct KetTerm {
    coef: C64,
    ops: BTreeMap<usize, Array2<C64>>,
}

impl KetTerm {
    fn scalar(c: C64) -> Self {
        Self {
            coef: c,
            ops: BTreeMap::new(),
        }
    }

    /// Operator product `self · other`.
    fn mul(&self, other: &KetTerm) -> KetTerm {
        let mut ops = self.ops.clone();
        for (s, m) in &other.ops {
            let v = match ops.remove(s) {
                Some(a) => a.dot(m),
                None => m.clone(),
            };
            ops.insert(*s, v);
        }
        KetTerm {
            coef: self.coef * other.coef,
            ops,
        }
    }

    fn adjoint(&self) -> KetTerm {
        KetTerm {
            coef: self.coef.conj(),
            ops: self.ops.iter().map(|(s, m)| (*s, adjoint(&m.view()))).collect(),
        }
    }
}

fn is_identity(m: &Array2<C64>) -> bool {
    m.indexed_iter().all(|((i, j), x)| {
        let target = if i == j { 1.0 } else { 0.0 };
        (x.re - target).abs() <= 1e-15 && x.im.abs() <= 1e-15
    })
}

fn is_zero(m: &Array2<C64>) -> bool {
    m.iter().all(|x| *x == C64::new(0.0, 0.0))
}

fn parity_matrix() -> Array2<C64> {
    let mut f = identity(2);
    f[[1, 1]] = C64::new(-1.0, 0.0);
    f
}

/// Drop identity factors and vanishing terms.
fn clean(terms: Vec<KetTerm>) -> Vec<KetTerm> {
    terms
        .into_iter()
        .filter_map(|mut t| {
            t.ops.retain(|_, m| !is_identity(m));
            if t.coef == C64::new(0.0, 0.0) || t.ops.values().any(is_zero) {
                None
            } else {
                Some(t)
            }
        })
        .collect()
}

/// Operator-Schmidt decomposition of a matrix on `dims.len()` factors into a
/// sum of products of local matrices.
fn operator_schmidt(m: &Array2<C64>, dims: &[usize]) -> Result<Vec<(C64, Vec<Array2<C64>>)>> {
    let k = dims.len();
    if k == 1 {
        return Ok(vec![(C64::new(1.0, 0.0), vec![m.clone()])]);
    }
    let (d0, rest): (usize, usize) = (dims[0], dims[1..].iter().product());
    let mut shape = dims.to_vec();
    shape.extend_from_slice(dims);
    let labels: Vec<String> = (0..k)
        .map(|i| format!("o{i}"))
        .chain((0..k).map(|i| format!("i{i}")))
        .collect();
    let t = Tensor::from_vec(labels, &shape, m.iter().copied().collect())?;
    let rows = ["o0", "i0"];
    let (mat, _) = t.to_matrix(&rows)?;
    let limits = TruncationLimits::new(0.0, usize::MAX)?;
    let svd = truncated_svd(&mat, &limits)?;
    let s0 = svd.s.first().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    for (j, sv) in svd.s.iter().enumerate() {
        if *sv <= 1e-14 * s0 || *sv == 0.0 {
            continue;
        }
        let a = svd
            .u
            .column(j)
            .to_owned()
            .into_shape_with_order((d0, d0))
            .expect("reshape");
        // remaining row is ordered (o1..ok-1, i1..ik-1)
        let b = svd
            .vt
            .row(j)
            .to_owned()
            .into_shape_with_order((rest, rest))
            .expect("reshape");
        for (c, mut tail) in operator_schmidt(&b, &dims[1..])? {
            let mut factors = vec![a.clone()];
            factors.append(&mut tail);
            out.push((c * *sv, factors));
        }
    }
    Ok(out)
}

/// Lowering of expressions on a given system.
pub struct Lowerer<'a> {
    pub system: &'a System,
    pub registry: &'a Registry,
}

impl<'a> Lowerer<'a> {
    pub fn new(system: &'a System, registry: &'a Registry) -> Self {
        Self { system, registry }
    }

    fn site(&self, s: usize) -> Result<usize> {
        if s == 0 || s > self.system.len() {
            return Err(Error::lowering(format!(
                "site index {s} outside 1..{}",
                self.system.len()
            )));
        }
        Ok(s - 1)
    }

    /// Jordan–Wigner image of a single-site operator.
    fn single_site(&self, site: usize, m: Array2<C64>) -> Result<KetTerm> {
        let mut t = KetTerm::scalar(C64::new(1.0, 0.0));
        if self.system.kind(site).is_fermion() && fermion_parity(&m)? == Parity::Odd {
            // other site kinds commute with fermions and carry no string
            for j in (0..site).filter(|&j| self.system.kind(j).is_fermion()) {
                t.ops.insert(j, parity_matrix());
            }
        }
        t.ops.insert(site, m);
        Ok(t)
    }

    /// Decompose a matrix on `sites` (factor order) into operator strings.
    fn multi_site(&self, sites: &[usize], m: &Array2<C64>) -> Result<Vec<KetTerm>> {
        let dims: Vec<usize> = sites.iter().map(|&s| self.system.kind(s).dim()).collect();
        let mut out = Vec::new();
        for (c, factors) in operator_schmidt(m, &dims)? {
            let mut t = KetTerm::scalar(c);
            for (&s, f) in sites.iter().zip(factors) {
                let f = if self.system.kind(s).is_fermion() {
                    let p = parity_matrix();
                    (&f + &p.dot(&f).dot(&p)) * C64::new(0.5, 0.0)
                } else {
                    f
                };
                t.ops.insert(s, f);
            }
            out.push(t);
        }
        if sites.iter().any(|&s| self.system.kind(s).is_fermion()) {
            // the even projection must reproduce the operator
            let total: f64 = m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let mut rebuilt = Array2::<C64>::zeros(m.dim());
            for t in &out {
                let mut acc = Array2::from_elem((1, 1), t.coef);
                for s in sites {
                    acc = kron(&acc, &t.ops[s]);
                }
                rebuilt += &acc;
            }
            let err: f64 = (&rebuilt - m).iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if err > 1e-12 * total.max(1.0) {
                return Err(Error::lowering(
                    "multi-site operator with odd fermion parity; write it as a product of single-site operators",
                ));
            }
        }
        Ok(out)
    }

    /// Expand an indexed, channel-free expression into operator strings.
    fn expand(&self, e: &OpExpr) -> Result<Vec<KetTerm>> {
        Ok(match e {
            OpExpr::Scalar(c) => vec![KetTerm::scalar(*c)],
            OpExpr::Indexed(g, sites) => {
                if g.contains_channel() {
                    return Err(Error::lowering("Dissipator/Gate is not an operator in this context"));
                }
                let sites = sites.iter().map(|&s| self.site(s)).collect::<Result<Vec<_>>>()?;
                let kinds: Vec<SiteKind> = sites.iter().map(|&s| self.system.kind(s)).collect();
                let m = local_matrix(g, &kinds, self.registry)?;
                if sites.len() == 1 {
                    vec![self.single_site(sites[0], m)?]
                } else {
                    self.multi_site(&sites, &m)?
                }
            }
            OpExpr::Scale(c, x) => self
                .expand(x)?
                .into_iter()
                .map(|mut t| {
                    t.coef *= *c;
                    t
                })
                .collect(),
            OpExpr::Sum(xs) => {
                let mut out = Vec::new();
                for x in xs {
                    out.extend(self.expand(x)?);
                }
                out
            }
            OpExpr::Prod(xs) => {
                let mut acc = vec![KetTerm::scalar(C64::new(1.0, 0.0))];
                for x in xs {
                    let rhs = self.expand(x)?;
                    let mut next = Vec::with_capacity(acc.len() * rhs.len());
                    for a in &acc {
                        for b in &rhs {
                            next.push(a.mul(b));
                        }
                    }
                    acc = clean(next);
                }
                acc
            }
            OpExpr::Dag(x) => self.expand(x)?.iter().map(KetTerm::adjoint).collect(),
            OpExpr::Exp(x) => {
                let sites: Vec<usize> = x.sites().into_iter().map(|s| self.site(s)).collect::<Result<_>>()?;
                if sites.iter().any(|&s| self.system.kind(s).is_fermion()) {
                    return Err(Error::lowering("exp() of an indexed expression on Fermion sites"));
                }
                let m = self.dense_on(&self.expand(x)?, &sites)?;
                let m = matrix_exponential(&m)?;
                self.multi_site(&sites, &m)?
            }
            OpExpr::Dissipator(_) | OpExpr::Gate(_) => {
                return Err(Error::lowering("Dissipator/Gate is not an operator in this context"))
            }
            _ => match e.kind()? {
                ExprKind::Generic(_) => {
                    return Err(Error::lowering(format!("generic operator `{e}` needs site indices")))
                }
                _ => return Err(Error::lowering(format!("unsupported expression `{e}`"))),
            },
        })
    }

    /// Dense matrix of ket terms on a set of sites (sorted, 0-based).
    fn dense_on(&self, terms: &[KetTerm], sites: &[usize]) -> Result<Array2<C64>> {
        let dims: Vec<usize> = sites.iter().map(|&s| self.system.kind(s).dim()).collect();
        let dim: usize = dims.iter().product();
        if dim > crate::dsl::DEFAULT_MAX_DIM {
            return Err(Error::lowering("operator support too large"));
        }
        let mut out = Array2::zeros((dim, dim));
        for t in terms {
            if t.ops.keys().any(|s| !sites.contains(s)) {
                return Err(Error::lowering("operator string leaves its declared support"));
            }
            let mut m = Array2::from_elem((1, 1), t.coef);
            for (s, d) in sites.iter().zip(&dims) {
                m = kron(&m, t.ops.get(s).cloned().as_ref().unwrap_or(&identity(*d)));
            }
            out += &m;
        }
        Ok(out)
    }

    /// Ket-space operator strings of a channel-free indexed expression.
    fn ket_terms(&self, e: &OpExpr) -> Result<Vec<KetTerm>> {
        if e.contains_channel() {
            return Err(Error::lowering("Dissipator/Gate is not an operator in this context"));
        }
        Ok(clean(self.expand(e)?))
    }

    fn finish(&self, rep: Rep, terms: Vec<KetTerm>) -> TermSum {
        let terms = clean(terms)
            .into_iter()
            .map(|t| Term {
                coef: t.coef,
                factors: t.ops.into_iter().collect(),
            })
            .collect();
        TermSum {
            rep,
            phys_dims: self.system.phys_dims(rep),
            terms,
        }
    }

    /// Observable `O`: bare strings for pure states, `O ⊗ I` for mixed ones.
    pub fn observable(&self, e: &OpExpr, rep: Rep) -> Result<TermSum> {
        let kets = self.ket_terms(e)?;
        Ok(match rep {
            Rep::Pure => self.finish(rep, kets),
            Rep::Mixed => {
                let lifted = kets.into_iter().map(|t| self.lift(&t, Side::Left)).collect();
                self.finish(rep, lifted)
            }
        })
    }

    /// Generator of the evolution `∂ₜ x = L x`.
    ///
    /// For pure states the expression itself (usually `−i·H`). For mixed
    /// states every plain term `c·h` becomes `c·(h ⊗ I − I ⊗ hᵀ)` and every
    /// `Dissipator(L)` becomes `L ⊗ conj(L) − ½ K ⊗ I − ½ I ⊗ Kᵀ`, `K = L†L`.
    pub fn evolver(&self, e: &OpExpr, rep: Rep) -> Result<TermSum> {
        let mut plain = Vec::new();
        let mut jumps = Vec::new();
        split_evolver(e, C64::new(1.0, 0.0), &mut plain, &mut jumps)?;
        match rep {
            Rep::Pure => {
                if !jumps.is_empty() {
                    return Err(Error::lowering("Dissipator in the evolver of a pure state"));
                }
                let mut kets = Vec::new();
                for (c, h) in &plain {
                    kets.extend(self.ket_terms(h)?.into_iter().map(|mut t| {
                        t.coef *= *c;
                        t
                    }));
                }
                Ok(self.finish(rep, kets))
            }
            Rep::Mixed => {
                let mut out = Vec::new();
                for (c, h) in &plain {
                    for t in self.ket_terms(h)? {
                        if t.ops.is_empty() {
                            continue; // a constant commutes with everything
                        }
                        let mut left = self.lift(&t, Side::Left);
                        left.coef *= *c;
                        let mut right = self.lift(&t, Side::Right);
                        right.coef *= -*c;
                        out.push(left);
                        out.push(right);
                    }
                }
                for (rate, l) in &jumps {
                    out.extend(self.dissipator(*rate, l)?);
                }
                Ok(self.finish(rep, out))
            }
        }
    }

    fn dissipator(&self, rate: C64, l: &OpExpr) -> Result<Vec<KetTerm>> {
        let ls = self.ket_terms(l)?;
        let mut out = Vec::new();
        let mut k_terms = Vec::new();
        for a in &ls {
            for b in &ls {
                out.push(self.sandwich(a, b, rate));
                k_terms.push(b.adjoint().mul(a));
            }
        }
        for mut k in clean(k_terms) {
            k.coef *= rate * -0.5;
            out.push(self.lift(&k, Side::Left));
            out.push(self.lift(&k, Side::Right));
        }
        Ok(self.pin_local(out))
    }

    /// Sum the pieces acting only on the first site of the support (constants
    /// included) into one matrix on that site. A constant left without a site
    /// would be multiplied into overlapping terms by the W approximants.
    fn pin_local(&self, terms: Vec<KetTerm>) -> Vec<KetTerm> {
        let Some(site) = terms.iter().filter_map(|t| t.ops.keys().next().copied()).min() else {
            return terms;
        };
        let d = self.system.kind(site).dim();
        let mut local = Array2::<C64>::zeros((d * d, d * d));
        let mut rest = Vec::new();
        for t in terms {
            if t.ops.keys().all(|&s| s == site) {
                match t.ops.get(&site) {
                    Some(m) => local = local + m * t.coef,
                    None => local = local + identity(d * d) * t.coef,
                }
            } else {
                rest.push(t);
            }
        }
        rest.push(KetTerm {
            coef: C64::new(1.0, 0.0),
            ops: BTreeMap::from([(site, local)]),
        });
        rest
    }

    /// `a ρ b†` as the string `a ⊗ conj(b)`.
    fn sandwich(&self, a: &KetTerm, b: &KetTerm, rate: C64) -> KetTerm {
        let mut ops = BTreeMap::new();
        let sites: std::collections::BTreeSet<usize> = a.ops.keys().chain(b.ops.keys()).copied().collect();
        for s in sites {
            let d = self.system.kind(s).dim();
            let id = identity(d);
            let ka = a.ops.get(&s).unwrap_or(&id);
            let kb = b
                .ops
                .get(&s)
                .map(|m| m.mapv(|x| x.conj()))
                .unwrap_or_else(|| id.clone());
            ops.insert(s, kron(ka, &kb));
        }
        KetTerm {
            coef: rate * a.coef * b.coef.conj(),
            ops,
        }
    }

    /// `A ⊗ I` (left multiplication) or `I ⊗ Aᵀ` (right multiplication).
    fn lift(&self, t: &KetTerm, side: Side) -> KetTerm {
        let ops = t
            .ops
            .iter()
            .map(|(s, m)| {
                let id = identity(self.system.kind(*s).dim());
                let lifted = match side {
                    Side::Left => kron(m, &id),
                    Side::Right => kron(&id, &m.t().to_owned()),
                };
                (*s, lifted)
            })
            .collect();
        KetTerm { coef: t.coef, ops }
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Push site indices through sums and scalings: `(a·g + h)(i) = a·g(i) + h(i)`.
pub(crate) fn distribute_index(e: &OpExpr) -> OpExpr {
    match e {
        OpExpr::Indexed(g, sites) => match g.as_ref() {
            OpExpr::Scale(c, inner) => {
                OpExpr::scale(*c, distribute_index(&OpExpr::Indexed(inner.clone(), sites.clone())))
            }
            OpExpr::Sum(xs) => OpExpr::Sum(
                xs.iter()
                    .map(|x| match x {
                        OpExpr::Scalar(c) => OpExpr::Scalar(*c),
                        x => distribute_index(&OpExpr::Indexed(Box::new(x.clone()), sites.clone())),
                    })
                    .collect(),
            ),
            OpExpr::Dissipator(inner) => OpExpr::Dissipator(Box::new(OpExpr::Indexed(inner.clone(), sites.clone()))),
            OpExpr::Gate(inner) => OpExpr::Gate(Box::new(OpExpr::Indexed(inner.clone(), sites.clone()))),
            _ => e.clone(),
        },
        OpExpr::Scale(c, x) => OpExpr::scale(*c, distribute_index(x)),
        OpExpr::Sum(xs) => OpExpr::Sum(xs.iter().map(distribute_index).collect()),
        OpExpr::Prod(xs) => OpExpr::Prod(xs.iter().map(distribute_index).collect()),
        _ => e.clone(),
    }
}

fn split_evolver(e: &OpExpr, c: C64, plain: &mut Vec<(C64, OpExpr)>, jumps: &mut Vec<(C64, OpExpr)>) -> Result<()> {
    let e = distribute_index(e);
    match &e {
        OpExpr::Sum(xs) => {
            for x in xs {
                split_evolver(x, c, plain, jumps)?;
            }
        }
        OpExpr::Scale(k, x) if x.contains_channel() => split_evolver(x, c * k, plain, jumps)?,
        OpExpr::Dissipator(l) => match l.kind()? {
            ExprKind::Indexed => {
                if l.contains_channel() {
                    return Err(Error::lowering("nested Dissipator/Gate"));
                }
                jumps.push((c, (**l).clone()))
            }
            _ => return Err(Error::lowering("Dissipator needs site indices, e.g. Dissipator(Sp)(1)")),
        },
        OpExpr::Gate(_) => return Err(Error::lowering("gates cannot appear in an evolver")),
        x if x.contains_channel() => {
            return Err(Error::lowering(format!(
                "Dissipator/Gate inside a product or function in `{x}`"
            )))
        }
        x => plain.push((c, x.clone())),
    }
    Ok(())
}

/// Lower an observable. See [`Lowerer::observable`].
pub fn lower_observable(e: &OpExpr, system: &System, rep: Rep, registry: &Registry) -> Result<TermSum> {
    Lowerer::new(system, registry).observable(e, rep)
}

/// Lower an evolution generator. See [`Lowerer::evolver`].
pub fn lower_evolver(e: &OpExpr, system: &System, rep: Rep, registry: &Registry) -> Result<TermSum> {
    Lowerer::new(system, registry).evolver(e, rep)
}

/// Matrix of an indexed, channel-free expression on the given 0-based sites
/// (in that factor order), without Jordan–Wigner strings.
pub fn dense_on_sites(e: &OpExpr, sites: &[usize], system: &System, registry: &Registry) -> Result<Array2<C64>> {
    let low = Lowerer::new(system, registry);
    let mut sorted = sites.to_vec();
    sorted.sort_unstable();
    let kets = clean(low.expand(e)?);
    let m = low.dense_on(&kets, &sorted)?;
    if sorted == sites {
        return Ok(m);
    }
    // reorder factors from sorted order into the requested order
    let dims: Vec<usize> = sorted.iter().map(|&s| system.kind(s).dim()).collect();
    let mut shape = dims.clone();
    shape.extend_from_slice(&dims);
    let labels: Vec<String> = sorted
        .iter()
        .map(|s| format!("o{s}"))
        .chain(sorted.iter().map(|s| format!("i{s}")))
        .collect();
    let t = Tensor::from_vec(labels, &shape, m.iter().copied().collect())?;
    let rows: Vec<String> = sites.iter().map(|s| format!("o{s}")).collect();
    let cols: Vec<String> = sites.iter().map(|s| format!("i{s}")).collect();
    let order: Vec<&str> = rows.iter().chain(&cols).map(|s| s.as_str()).collect();
    let p = t.permute(&order)?;
    let dim: usize = dims.iter().product();
    Ok(p.into_data()
        .into_shape_with_order((dim, dim))
        .expect("reshape")
        .into_dimensionality()
        .expect("2d"))
}

/// Split a Kraus-type expression `Σ wᵢ Gate(Eᵢ)` into weights and operators.
pub(crate) fn kraus_terms(e: &OpExpr) -> Result<Option<Vec<(C64, OpExpr)>>> {
    fn walk(e: &OpExpr, c: C64, out: &mut Vec<(C64, OpExpr)>) -> Result<()> {
        match e {
            OpExpr::Sum(xs) => xs.iter().try_for_each(|x| walk(x, c, out)),
            OpExpr::Scale(k, x) => walk(x, c * k, out),
            OpExpr::Gate(x) => {
                out.push((c, (**x).clone()));
                Ok(())
            }
            _ => Err(Error::lowering(format!("`{e}` mixes gates and plain operators"))),
        }
    }
    if !e.contains_channel() {
        return Ok(None);
    }
    let mut out = Vec::new();
    walk(e, C64::new(1.0, 0.0), &mut out)?;
    Ok(Some(out))
}
