//! Matrix product states for pure states and vectorized density matrices.

mod graph;
pub(crate) mod kernels;

use ndarray::{s, Array2, Array3};
use num_complex::Complex64 as C64;

use crate::dsl::{LocalState, SiteKind};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, TruncationLimits};
use kernels::{as_matrix, from_matrix, left_qr, mul_left, mul_right, right_lq};

pub use graph::{complete_graph, graph_state};

/// Whether a state is a pure vector or a vectorized density matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rep {
    Pure,
    Mixed,
}

impl std::fmt::Display for Rep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rep::Pure => write!(f, "Pure"),
            Rep::Mixed => write!(f, "Mixed"),
        }
    }
}

/// An ordered chain of sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct System {
    sites: Vec<SiteKind>,
}

impl System {
    pub fn new(sites: Vec<SiteKind>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::invalid("a system needs at least one site"));
        }
        Ok(Self { sites })
    }

    pub fn uniform(n: usize, kind: SiteKind) -> Result<Self> {
        Self::new(vec![kind; n])
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn kind(&self, i: usize) -> SiteKind {
        self.sites[i]
    }

    pub fn kinds(&self) -> &[SiteKind] {
        &self.sites
    }

    /// Local physical dimension of site `i` under `rep`.
    pub fn phys_dim(&self, i: usize, rep: Rep) -> usize {
        let d = self.sites[i].dim();
        match rep {
            Rep::Pure => d,
            Rep::Mixed => d * d,
        }
    }

    pub fn phys_dims(&self, rep: Rep) -> Vec<usize> {
        (0..self.len()).map(|i| self.phys_dim(i, rep)).collect()
    }
}

/// `vec(I_d)`: ones at the combined indices `i * d + i`.
pub fn identity_vector(d: usize) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); d * d];
    for i in 0..d {
        v[i * d + i] = C64::new(1.0, 0.0);
    }
    v
}

/// Largest dense vector [`State::to_dense`] builds.
pub const DENSE_CAP: usize = 1 << 22;

/// A matrix product state. Site tensors are indexed `(left, physical, right)`.
#[derive(Clone, Debug)]
pub struct State {
    rep: Rep,
    system: System,
    tensors: Vec<Array3<C64>>,
    center: Option<usize>,
}

impl State {
    /// Assemble a state from site tensors, checking all extents.
    pub fn new(rep: Rep, system: System, tensors: Vec<Array3<C64>>) -> Result<Self> {
        if tensors.len() != system.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors for {} sites",
                tensors.len(),
                system.len()
            )));
        }
        let n = tensors.len();
        for (i, t) in tensors.iter().enumerate() {
            let (l, p, r) = t.dim();
            if p != system.phys_dim(i, rep) {
                return Err(Error::DimensionMismatch(format!(
                    "site {i}: physical extent {p}, expected {}",
                    system.phys_dim(i, rep)
                )));
            }
            if (i == 0 && l != 1) || (i + 1 == n && r != 1) {
                return Err(Error::DimensionMismatch("boundary bonds must have extent 1".into()));
            }
            if i + 1 < n && tensors[i + 1].dim().0 != r {
                return Err(Error::DimensionMismatch(format!(
                    "bond {i}: extents {r} and {}",
                    tensors[i + 1].dim().0
                )));
            }
            if l == 0 || r == 0 {
                return Err(Error::DimensionMismatch(format!("site {i}: empty bond")));
            }
        }
        Ok(Self {
            rep,
            system,
            tensors,
            center: None,
        })
    }

    pub(crate) fn from_parts(rep: Rep, system: System, tensors: Vec<Array3<C64>>, center: Option<usize>) -> Self {
        Self {
            rep,
            system,
            tensors,
            center,
        }
    }

    /// Product state from one state name for every site or one name per site.
    ///
    /// `"FullyMixed"` and other density-matrix states need `rep = Mixed`.
    pub fn product(rep: Rep, system: &System, names: &[&str]) -> Result<Self> {
        let n = system.len();
        if names.len() != 1 && names.len() != n {
            return Err(Error::invalid(format!("{} state names for {n} sites", names.len())));
        }
        let locals = (0..n)
            .map(|i| system.kind(i).local_state(names[if names.len() == 1 { 0 } else { i }]))
            .collect::<Result<Vec<_>>>()?;
        Self::product_from_locals(rep, system, &locals)
    }

    pub fn product_from_locals(rep: Rep, system: &System, locals: &[LocalState]) -> Result<Self> {
        let tensors = locals
            .iter()
            .enumerate()
            .map(|(i, local)| {
                let v: Vec<C64> = match (rep, local) {
                    (Rep::Pure, LocalState::Vector(v)) => v.clone(),
                    (Rep::Pure, LocalState::Density(_)) => {
                        return Err(Error::invalid(format!(
                            "site {i}: a density-matrix state needs a Mixed representation"
                        )))
                    }
                    (Rep::Mixed, l) => l.density().iter().copied().collect(),
                };
                if v.len() != system.phys_dim(i, rep) {
                    return Err(Error::DimensionMismatch(format!(
                        "site {i}: local state of wrong dimension"
                    )));
                }
                Ok(Array3::from_shape_vec((1, v.len(), 1), v).expect("shape"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s = Self::new(rep, system.clone(), tensors)?;
        s.center = Some(0);
        Ok(s)
    }

    pub fn rep(&self) -> Rep {
        self.rep
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Array3<C64>] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut Vec<Array3<C64>> {
        self.center = None;
        &mut self.tensors
    }

    /// Site tensor `i` as a labeled tensor with labels `b{i}`, `p{i}`, `b{i+1}`.
    pub fn site_tensor(&self, i: usize) -> Tensor {
        Tensor::new(
            vec![format!("b{i}"), format!("p{i}"), format!("b{}", i + 1)],
            self.tensors[i].clone().into_dyn(),
        )
        .expect("distinct labels")
    }

    /// Orthogonality center, if known.
    pub fn center(&self) -> Option<usize> {
        self.center
    }

    /// Extents of the `N − 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1].iter().map(|t| t.dim().2).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn scale(&self, c: C64) -> State {
        let mut s = self.clone();
        let k = s.center.unwrap_or(0);
        s.tensors[k].mapv_inplace(|x| x * c);
        s
    }

    /// Move the orthogonality center to site `c`.
    pub fn orthogonalize(&self, c: usize) -> Result<State> {
        let mut s = self.clone();
        s.move_center(c)?;
        Ok(s)
    }

    pub(crate) fn move_center(&mut self, c: usize) -> Result<()> {
        let n = self.len();
        if c >= n {
            return Err(Error::invalid(format!("center {c} outside 0..{n}")));
        }
        let (from_left, from_right) = match self.center {
            Some(k) => (k, k),
            None => (0, n - 1),
        };
        for i in from_left..c {
            let (q, r) = left_qr(&self.tensors[i])?;
            self.tensors[i] = q;
            self.tensors[i + 1] = mul_left(&r, &self.tensors[i + 1]);
        }
        for i in (c + 1..=from_right).rev() {
            let (l, q) = right_lq(&self.tensors[i])?;
            self.tensors[i] = q;
            self.tensors[i - 1] = mul_right(&self.tensors[i - 1], &l);
        }
        self.center = Some(c);
        Ok(())
    }

    /// Truncate all bonds by a right-to-left SVD sweep; the center ends at 0.
    pub fn compress(&self, limits: &TruncationLimits) -> Result<State> {
        Ok(self.compress_report(limits)?.0)
    }

    /// As [`State::compress`], also returning the largest discarded weight.
    pub fn compress_report(&self, limits: &TruncationLimits) -> Result<(State, f64)> {
        let mut s = self.clone();
        let discarded = s.compress_in_place(limits)?;
        Ok((s, discarded))
    }

    pub(crate) fn compress_in_place(&mut self, limits: &TruncationLimits) -> Result<f64> {
        let n = self.len();
        self.move_center(n - 1)?;
        let mut worst = 0.0f64;
        for i in (1..n).rev() {
            let (l, p, r) = self.tensors[i].dim();
            let svd = crate::tensor::linalg::truncated_svd(&as_matrix(&self.tensors[i], 1), limits)?;
            let k = svd.s.len();
            worst = worst.max(svd.discarded);
            self.tensors[i] = from_matrix(svd.vt, (k, p, r));
            let mut us = svd.u;
            for (j, sv) in svd.s.iter().enumerate() {
                us.column_mut(j).mapv_inplace(|x| x * *sv);
            }
            self.tensors[i - 1] = mul_right(&self.tensors[i - 1], &us);
            debug_assert_eq!(l, us.nrows());
        }
        self.center = Some(0);
        Ok(worst)
    }

    /// `Σ cₖ |ψₖ⟩` by a direct sum of site tensors, followed by compression.
    pub fn add(terms: &[(C64, &State)], limits: &TruncationLimits) -> Result<State> {
        let (_, first) = *terms.first().ok_or_else(|| Error::invalid("sum of no states"))?;
        for (_, t) in terms {
            if t.rep != first.rep || t.system != first.system {
                return Err(Error::invalid("added states must share representation and system"));
            }
        }
        let n = first.len();
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let p = first.tensors[i].dim().1;
            let ls: Vec<usize> = terms.iter().map(|(_, t)| t.tensors[i].dim().0).collect();
            let rs: Vec<usize> = terms.iter().map(|(_, t)| t.tensors[i].dim().2).collect();
            let lt = if i == 0 { 1 } else { ls.iter().sum() };
            let rt = if i + 1 == n { 1 } else { rs.iter().sum() };
            let mut out = Array3::zeros((lt, p, rt));
            let (mut lo, mut ro) = (0, 0);
            for (k, (c, t)) in terms.iter().enumerate() {
                let (l, r) = (ls[k], rs[k]);
                let (l0, r0) = (if i == 0 { 0 } else { lo }, if i + 1 == n { 0 } else { ro });
                let mut block = out.slice_mut(s![l0..l0 + l, .., r0..r0 + r]);
                if i == 0 {
                    block.zip_mut_with(&t.tensors[i], |o, x| *o += *c * *x);
                } else {
                    block.zip_mut_with(&t.tensors[i], |o, x| *o += *x);
                }
                lo += l;
                ro += r;
            }
            tensors.push(out);
        }
        let s = State::from_parts(first.rep, first.system.clone(), tensors, None);
        s.compress(limits)
    }

    /// `|ψ⟩⟨ψ|` as a vectorized density matrix.
    pub fn mix(&self) -> Result<State> {
        if self.rep != Rep::Pure {
            return Err(Error::invalid("mix() needs a pure state"));
        }
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let (l, p, r) = t.dim();
                Array3::from_shape_fn((l * l, p * p, r * r), |(a, q, b)| {
                    t[[a / l, q / p, b / r]] * t[[a % l, q % p, b % r]].conj()
                })
            })
            .collect();
        Ok(State::from_parts(Rep::Mixed, self.system.clone(), tensors, None))
    }

    /// Trace out all sites not in `keep` (0-based).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<State> {
        if self.rep != Rep::Mixed {
            return Err(Error::invalid("partial trace needs a mixed state"));
        }
        let n = self.len();
        let mut keep: Vec<usize> = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::invalid("partial trace must keep at least one site"));
        }
        if let Some(&k) = keep.iter().find(|&&k| k >= n) {
            return Err(Error::invalid(format!("site {k} outside 0..{n}")));
        }
        let traced = |i: usize| -> Array2<C64> {
            let t = &self.tensors[i];
            let (l, p, r) = t.dim();
            let d = self.system.kind(i).dim();
            debug_assert_eq!(p, d * d);
            let mut m = Array2::zeros((l, r));
            for a in 0..d {
                m += &t.slice(s![.., a * d + a, ..]);
            }
            m
        };
        let mut tensors: Vec<Array3<C64>> = Vec::new();
        let mut pending: Option<Array2<C64>> = None;
        for i in 0..n {
            if keep.binary_search(&i).is_ok() {
                let t = match pending.take() {
                    Some(m) => mul_left(&m, &self.tensors[i]),
                    None => self.tensors[i].clone(),
                };
                tensors.push(t);
            } else {
                let m = traced(i);
                if let Some(last) = tensors.last_mut().filter(|_| pending.is_none()) {
                    *last = mul_right(last, &m);
                } else {
                    pending = Some(match pending.take() {
                        Some(p) => p.dot(&m),
                        None => m,
                    });
                }
            }
        }
        let kinds = keep.iter().map(|&k| self.system.kind(k)).collect();
        State::new(Rep::Mixed, System::new(kinds)?, tensors)
    }

    /// Contract the chain into a dense vector (first site slowest). For mixed
    /// states the result is indexed by the per-site combined indices.
    pub fn to_dense(&self) -> Result<Vec<C64>> {
        let total: usize = self.tensors.iter().map(|t| t.dim().1).product();
        if total > DENSE_CAP {
            return Err(Error::invalid(format!(
                "dense vector of dimension {total} is too large"
            )));
        }
        let mut acc = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for t in &self.tensors {
            let (_, p, r) = t.dim();
            let rows = acc.nrows();
            acc = acc
                .dot(&as_matrix(t, 1))
                .into_shape_with_order((rows * p, r))
                .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        }
        Ok(acc.iter().copied().collect())
    }

    /// `⟨self|other⟩`, conjugating `self`.
    pub fn overlap(&self, other: &State) -> Result<C64> {
        if self.rep != other.rep || self.system != other.system {
            return Err(Error::invalid("overlap of states on different spaces"));
        }
        let mut env = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            // env[la, lb] -> env[ra, rb]
            let tb = mul_left(&env, b); // (la, p, rb)
            let (la, p, rb) = tb.dim();
            let ra = a.dim().2;
            let am = a
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((la * p, ra))
                .expect("reshape")
                .mapv(|x| x.conj());
            let bm = tb.into_shape_with_order((la * p, rb)).expect("reshape");
            env = am.t().dot(&bm);
        }
        Ok(env[[0, 0]])
    }

    pub fn norm_squared(&self) -> Result<f64> {
        Ok(self.overlap(self)?.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubits(n: usize) -> System {
        System::uniform(n, SiteKind::Qubit).unwrap()
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn product_state_dense() {
        let s = State::product(Rep::Pure, &qubits(3), &["Up"]).unwrap();
        let v = s.to_dense().unwrap();
        assert_eq!(v[0], c(1.0));
        assert!(v[1..].iter().all(|x| *x == c(0.0)));
        assert!(State::product(Rep::Pure, &qubits(1), &["FullyMixed"]).is_err());
    }

    #[test]
    fn ghz_by_addition() {
        let sys = qubits(4);
        let up = State::product(Rep::Pure, &sys, &["Up"]).unwrap();
        let dn = State::product(Rep::Pure, &sys, &["Dn"]).unwrap();
        let h = c(std::f64::consts::FRAC_1_SQRT_2);
        let ghz = State::add(&[(h, &up), (h, &dn)], &TruncationLimits::exact()).unwrap();
        assert_eq!(ghz.bond_dims(), vec![2, 2, 2]);
        let v = ghz.to_dense().unwrap();
        assert!((v[0] - h).norm() < 1e-14 && (v[15] - h).norm() < 1e-14);
        assert!((ghz.norm_squared().unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mixing_squares_bonds() {
        let sys = qubits(3);
        let up = State::product(Rep::Pure, &sys, &["Up"]).unwrap();
        let dn = State::product(Rep::Pure, &sys, &["Dn"]).unwrap();
        let ghz = State::add(&[(c(1.0), &up), (c(1.0), &dn)], &TruncationLimits::exact()).unwrap();
        let rho = ghz.mix().unwrap();
        assert_eq!(rho.bond_dims(), vec![4, 4]);
        assert!(rho.mix().is_err());
    }

    #[test]
    fn partial_trace_of_bell_pair_is_maximally_mixed() {
        let sys = qubits(2);
        let up = State::product(Rep::Pure, &sys, &["Up"]).unwrap();
        let dn = State::product(Rep::Pure, &sys, &["Dn"]).unwrap();
        let h = c(std::f64::consts::FRAC_1_SQRT_2);
        let rho = State::add(&[(h, &up), (h, &dn)], &TruncationLimits::exact())
            .unwrap()
            .mix()
            .unwrap();
        for keep in [0, 1] {
            let red = rho.partial_trace(&[keep]).unwrap().to_dense().unwrap();
            let expected = [0.5, 0.0, 0.0, 0.5];
            for (x, e) in red.iter().zip(expected) {
                assert!((x - c(e)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn orthogonalize_then_gram_identity() {
        let sys = qubits(3);
        let up = State::product(Rep::Pure, &sys, &["+"]).unwrap();
        let dn = State::product(Rep::Pure, &sys, &["Dn"]).unwrap();
        let s = State::add(&[(c(0.3), &up), (C64::new(0.0, 0.8), &dn)], &TruncationLimits::exact()).unwrap();
        let s = s.orthogonalize(1).unwrap();
        let m = as_matrix(&s.tensors()[0], 2);
        let g = m.t().mapv(|x| x.conj()).dot(&m);
        for ((i, j), x) in g.indexed_iter() {
            assert!((x - c(if i == j { 1.0 } else { 0.0 })).norm() < 1e-12);
        }
    }
}
