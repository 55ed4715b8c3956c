//! Full-Hilbert-space reference solver.
//!
//! Operators are assembled from the local matrices of the expression
//! language with explicit Jordan–Wigner strings and kept sparse; density
//! matrices are dense `D × D` arrays. Nothing here goes through the MPO or
//! evolution code.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use super::sparse::Sparse;
use crate::dsl::{fermion_parity, local_matrix, OpExpr, Parity, Registry, SiteKind};
use crate::error::{Error, Result};
use crate::state::{Rep, State, System};
use crate::tensor::linalg::matrix_exponential;

/// Largest Hilbert-space dimension the oracle accepts.
pub const HILBERT_CAP: usize = 1024;
/// Largest superoperator dimension for explicit generators.
pub const SUPER_CAP: usize = 4096;

fn c1() -> C64 {
    C64::new(1.0, 0.0)
}

/// The product Hilbert space of a system.
#[derive(Clone, Debug)]
pub struct DenseSpace {
    kinds: Vec<SiteKind>,
    dims: Vec<usize>,
    /// `strides[i]`: weight of the digit of site `i` (first site slowest).
    strides: Vec<usize>,
    dim: usize,
}

impl DenseSpace {
    pub fn new(system: &System) -> Result<Self> {
        let kinds = system.kinds().to_vec();
        let dims: Vec<usize> = kinds.iter().map(|k| k.dim()).collect();
        let dim = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&d| d <= HILBERT_CAP)
            .ok_or_else(|| Error::OracleCap(format!("Hilbert space of {} sites exceeds {HILBERT_CAP}", dims.len())))?;
        let mut strides = vec![1; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(Self {
            kinds,
            dims,
            strides,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn digit(&self, idx: usize, site: usize) -> usize {
        (idx / self.strides[site]) % self.dims[site]
    }

    /// `m` acting on the 0-based `sites` (in factor order), identity elsewhere.
    pub fn embed(&self, m: &Array2<C64>, sites: &[usize]) -> Result<Sparse> {
        let sub: Vec<usize> = sites.iter().map(|&s| self.dims[s]).collect();
        let local: usize = sub.iter().product();
        if m.dim() != (local, local) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix on sites of total dimension {local}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut entries = Vec::new();
        for col in 0..self.dim {
            let mut lc = 0;
            for &s in sites {
                lc = lc * self.dims[s] + self.digit(col, s);
            }
            for lr in 0..local {
                let v = m[[lr, lc]];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let mut row = col;
                let mut rest = lr;
                for (k, &s) in sites.iter().enumerate().rev() {
                    let d = sub[k];
                    let new = rest % d;
                    rest /= d;
                    row = row - self.digit(col, s) * self.strides[s] + new * self.strides[s];
                }
                entries.push((row, col, v));
            }
        }
        Ok(Sparse::from_triplets(self.dim, entries))
    }

    /// `∏_{j<site} F_j` over fermion sites, as a diagonal matrix.
    fn string(&self, site: usize) -> Sparse {
        let entries = (0..self.dim).map(|i| {
            let flips = (0..site)
                .filter(|&j| self.kinds[j].is_fermion() && self.digit(i, j) == 1)
                .count();
            (i, i, if flips % 2 == 0 { c1() } else { -c1() })
        });
        Sparse::from_triplets(self.dim, entries)
    }

    /// Hilbert-space matrix of a channel-free, indexed expression.
    pub fn operator(&self, e: &OpExpr, registry: &Registry) -> Result<Sparse> {
        Ok(match e {
            OpExpr::Scalar(c) => Sparse::scaled_identity(self.dim, *c),
            OpExpr::Scale(c, x) => self.operator(x, registry)?.scale(*c),
            OpExpr::Sum(xs) => {
                let mut acc = Sparse::zeros(self.dim);
                for x in xs {
                    acc = acc.add(&self.operator(x, registry)?);
                }
                acc
            }
            OpExpr::Prod(xs) => {
                let mut acc = Sparse::identity(self.dim);
                for x in xs {
                    acc = acc.mul(&self.operator(x, registry)?);
                }
                acc
            }
            OpExpr::Indexed(g, sites) => {
                let zero_based = sites
                    .iter()
                    .map(|&s| {
                        if s == 0 || s > self.dims.len() {
                            Err(Error::invalid(format!("site {s} outside 1..{}", self.dims.len())))
                        } else {
                            Ok(s - 1)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let kinds: Vec<SiteKind> = zero_based.iter().map(|&s| self.kinds[s]).collect();
                let m = local_matrix(g, &kinds, registry)?;
                if zero_based.len() == 1 {
                    let s = zero_based[0];
                    let op = self.embed(&m, &zero_based)?;
                    if kinds[0].is_fermion() && fermion_parity(&m)? == Parity::Odd {
                        self.string(s).mul(&op)
                    } else {
                        op
                    }
                } else {
                    self.check_even_block(&m, &kinds)?;
                    self.embed(&m, &zero_based)?
                }
            }
            _ => return Err(Error::invalid(format!("oracle cannot evaluate `{e}`"))),
        })
    }

    /// Multi-site blocks on fermion sites must be even on every such site.
    fn check_even_block(&self, m: &Array2<C64>, kinds: &[SiteKind]) -> Result<()> {
        let dims: Vec<usize> = kinds.iter().map(|k| k.dim()).collect();
        for ((r, c), v) in m.indexed_iter() {
            if v.norm() <= 1e-14 {
                continue;
            }
            let (mut rr, mut cc) = (r, c);
            for (k, &d) in kinds.iter().zip(&dims).rev() {
                if k.is_fermion() && (rr % d + cc % d) % 2 == 1 {
                    return Err(Error::invalid("oracle: multi-site block odd on a fermion site"));
                }
                rr /= d;
                cc /= d;
            }
        }
        Ok(())
    }

    /// Product density matrix from one state name or one per site.
    pub fn product_density(&self, names: &[&str]) -> Result<Array2<C64>> {
        let n = self.dims.len();
        if names.len() != 1 && names.len() != n {
            return Err(Error::invalid("one state name or one per site"));
        }
        let mut rho = Array2::from_elem((1, 1), c1());
        for i in 0..n {
            let local = self.kinds[i]
                .local_state(names[if names.len() == 1 { 0 } else { i }])?
                .density();
            rho = crate::tensor::linalg::kron(&rho, &local);
        }
        Ok(rho)
    }

    /// Site-wise vectorization `|ρ⟩⟩` with combined local index `i·d + j`.
    pub fn to_sitewise(&self, rho: &Array2<C64>) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        for ((i, j), x) in rho.indexed_iter() {
            v[self.sitewise_index(i, j)] = *x;
        }
        v
    }

    pub fn from_sitewise(&self, v: &[C64]) -> Array2<C64> {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| v[self.sitewise_index(i, j)])
    }

    fn sitewise_index(&self, i: usize, j: usize) -> usize {
        let mut idx = 0;
        for (s, &d) in self.dims.iter().enumerate() {
            idx = idx * d * d + self.digit(i, s) * d + self.digit(j, s);
        }
        idx
    }
}

/// Dense density matrix of an MPS (`|ψ⟩⟨ψ|` for pure states).
pub fn density_from_state(s: &State) -> Result<Array2<C64>> {
    let space = DenseSpace::new(s.system())?;
    let v = s.to_dense()?;
    Ok(match s.rep() {
        Rep::Mixed => space.from_sitewise(&v),
        Rep::Pure => Array2::from_shape_fn((v.len(), v.len()), |(i, j)| v[i] * v[j].conj()),
    })
}

/// `∂ₜρ = Pρ − ρP + Σₖ cₖ (Lₖ ρ Lₖ† − ½{Lₖ†Lₖ, ρ})` from an evolver
/// expression `P + Σ cₖ Dissipator(Lₖ)`.
#[derive(Clone, Debug)]
pub struct DenseModel {
    pub space: DenseSpace,
    pub plain: Sparse,
    pub jumps: Vec<(C64, Sparse)>,
    left: Sparse,
    right: Sparse,
    jump_adj: Vec<Sparse>,
}

fn split(e: &OpExpr, c: C64, plain: &mut Vec<(C64, OpExpr)>, jumps: &mut Vec<(C64, OpExpr)>) -> Result<()> {
    match e {
        OpExpr::Sum(xs) => xs.iter().try_for_each(|x| split(x, c, plain, jumps)),
        OpExpr::Scale(k, x) if x.contains_channel() => split(x, c * k, plain, jumps),
        OpExpr::Dissipator(l) => {
            jumps.push((c, (**l).clone()));
            Ok(())
        }
        OpExpr::Indexed(g, sites) if g.contains_channel() => match g.as_ref() {
            OpExpr::Dissipator(l) => {
                jumps.push((c, OpExpr::Indexed(l.clone(), sites.clone())));
                Ok(())
            }
            OpExpr::Sum(xs) => xs
                .iter()
                .try_for_each(|x| split(&OpExpr::Indexed(Box::new(x.clone()), sites.clone()), c, plain, jumps)),
            OpExpr::Scale(k, x) => split(&OpExpr::Indexed(x.clone(), sites.clone()), c * k, plain, jumps),
            _ => Err(Error::invalid(format!("oracle cannot split `{e}`"))),
        },
        x if x.contains_channel() => Err(Error::invalid(format!("oracle cannot split `{x}`"))),
        x => {
            plain.push((c, x.clone()));
            Ok(())
        }
    }
}

impl DenseModel {
    pub fn from_evolver(e: &OpExpr, system: &System, registry: &Registry) -> Result<Self> {
        let space = DenseSpace::new(system)?;
        let mut plain_terms = Vec::new();
        let mut jump_terms = Vec::new();
        split(e, c1(), &mut plain_terms, &mut jump_terms)?;
        let mut plain = Sparse::zeros(space.dim());
        for (c, x) in &plain_terms {
            plain = plain.add(&space.operator(x, registry)?.scale(*c));
        }
        let jumps = jump_terms
            .iter()
            .map(|(c, l)| Ok((*c, space.operator(l, registry)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(space, plain, jumps))
    }

    pub fn from_parts(space: DenseSpace, plain: Sparse, jumps: Vec<(C64, Sparse)>) -> Self {
        let mut k = Sparse::zeros(space.dim());
        for (c, l) in &jumps {
            k = k.add(&l.adjoint().mul(l).scale(*c * 0.5));
        }
        let left = plain.add(&k.scale(-c1()));
        let right = plain.scale(-c1()).add(&k.scale(-c1()));
        let jump_adj = jumps.iter().map(|(_, l)| l.adjoint()).collect();
        Self {
            space,
            plain,
            jumps,
            left,
            right,
            jump_adj,
        }
    }

    /// `∂ₜρ` at `rho`.
    pub fn rhs(&self, rho: &Array2<C64>) -> Array2<C64> {
        let mut out = self.left.left_mul(rho) + self.right.right_mul(rho);
        for ((c, l), ld) in self.jumps.iter().zip(&self.jump_adj) {
            out += &(ld.right_mul(&l.left_mul(rho)) * *c);
        }
        out
    }

    /// `∂ₜρ` for Hermitian `rho` when the flow preserves Hermiticity, using
    /// `ρB = (Aρ)†`.
    fn rhs_hermitian(&self, rho: &Array2<C64>) -> Array2<C64> {
        let a = self.left.left_mul(rho);
        let mut out = &a + &a.t().mapv(|x| x.conj());
        for ((c, l), ld) in self.jumps.iter().zip(&self.jump_adj) {
            out += &(ld.right_mul(&l.left_mul(rho)) * *c);
        }
        out
    }

    fn preserves_hermiticity(&self) -> bool {
        let gap = self.right.add(&self.left.adjoint().scale(-c1()));
        gap.triplets().all(|(_, _, v)| v.norm() <= 1e-14) && self.jumps.iter().all(|(c, _)| c.im == 0.0)
    }

    /// Superoperator in the site-wise vectorization of mixed states.
    pub fn generator(&self) -> Result<Array2<C64>> {
        let d = self.space.dim();
        let sdim = d * d;
        if sdim > SUPER_CAP {
            return Err(Error::OracleCap(format!(
                "superoperator dimension {sdim} exceeds {SUPER_CAP}"
            )));
        }
        let mut out = Array2::zeros((sdim, sdim));
        let mut basis = Array2::zeros((d, d));
        for k in 0..d {
            for l in 0..d {
                basis[[k, l]] = c1();
                let col = self.space.sitewise_index(k, l);
                let image = self.space.to_sitewise(&self.rhs(&basis));
                for (r, x) in image.into_iter().enumerate() {
                    out[[r, col]] = x;
                }
                basis[[k, l]] = C64::new(0.0, 0.0);
            }
        }
        Ok(out)
    }
}

/// Dense generator of an evolver: the plain operator for pure states, the
/// Lindblad superoperator (site-wise vectorization) for mixed ones.
pub fn dense_generator(e: &OpExpr, system: &System, rep: Rep, registry: &Registry) -> Result<Array2<C64>> {
    let model = DenseModel::from_evolver(e, system, registry)?;
    match rep {
        Rep::Mixed => model.generator(),
        Rep::Pure => {
            if !model.jumps.is_empty() {
                return Err(Error::invalid("Dissipator in a pure-state evolver"));
            }
            Ok(model.plain.to_dense())
        }
    }
}

/// Classic RK4 from `rho` over time `t`, starting from steps of at most
/// `dt` and halving until two successive results agree within `1e-10`.
pub fn dense_evolve(model: &DenseModel, rho: &Array2<C64>, t: f64, dt: f64) -> Result<Array2<C64>> {
    let hermitian = rho
        .iter()
        .zip(rho.t().iter())
        .all(|(a, b)| (a - b.conj()).norm() <= 1e-14);
    if hermitian && model.preserves_hermiticity() {
        super::rk4_converged(|x| model.rhs_hermitian(x), rho, t, dt)
    } else {
        super::rk4_converged(|x| model.rhs(x), rho, t, dt)
    }
}

/// `exp(tS)|ρ⟩⟩` with the explicit generator; for small systems.
pub fn dense_propagate(model: &DenseModel, rho: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
    let g = model.generator()? * C64::new(t, 0.0);
    let e = matrix_exponential(&g)?;
    let v = model.space.to_sitewise(rho);
    let out: Vec<C64> = e.dot(&ndarray::Array1::from(v)).to_vec();
    Ok(model.space.from_sitewise(&out))
}

/// `Σᵢ wᵢ Eᵢ ρ Eᵢ†`.
pub fn dense_channel(rho: &Array2<C64>, kraus: &[(C64, Sparse)]) -> Array2<C64> {
    let mut out = Array2::zeros(rho.dim());
    for (w, e) in kraus {
        out += &(e.adjoint().right_mul(&e.left_mul(rho)) * *w);
    }
    out
}

/// `U ρ U†`.
pub fn dense_unitary(rho: &Array2<C64>, u: &Sparse) -> Array2<C64> {
    dense_channel(rho, &[(c1(), u.clone())])
}

/// `Tr(Oρ)`.
pub fn dense_expect(rho: &Array2<C64>, op: &Sparse) -> C64 {
    op.trace_with(rho)
}

pub fn dense_trace(rho: &Array2<C64>) -> C64 {
    rho.diag().sum()
}

/// `Tr ρ² / (Tr ρ)²`.
pub fn dense_purity(rho: &Array2<C64>) -> f64 {
    let t2: C64 = rho.dot(rho).diag().sum();
    t2.re / dense_trace(rho).norm_sqr()
}

/// Density matrix of the graph state `∏ CZ(i,j) |+⟩^⊗n` (0-based edges).
pub fn dense_graph_state(n: usize, edges: &[(usize, usize)]) -> Result<Array2<C64>> {
    if n >= 11 {
        return Err(Error::OracleCap(format!(
            "graph state on {n} qubits exceeds {HILBERT_CAP}"
        )));
    }
    let dim = 1usize << n;
    let amp = (dim as f64).sqrt().recip();
    let psi: Vec<C64> = (0..dim)
        .map(|x| {
            let bit = |i: usize| (x >> (n - 1 - i)) & 1;
            let sign = edges.iter().filter(|&&(i, j)| bit(i) == 1 && bit(j) == 1).count();
            C64::new(if sign % 2 == 0 { amp } else { -amp }, 0.0)
        })
        .collect();
    Ok(Array2::from_shape_fn((dim, dim), |(i, j)| psi[i] * psi[j].conj()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse, ParseContext};

    fn reg() -> Registry {
        Registry::builtin()
    }

    #[test]
    fn amplitude_damping_spectrum() {
        let sys = System::uniform(1, SiteKind::Qubit).unwrap();
        let e = parse("Dissipator(Sp)(1)", &ParseContext::new(reg())).unwrap();
        let g = dense_generator(&e, &sys, Rep::Mixed, &reg()).unwrap();
        use ndarray_linalg::Eig;
        let (vals, _) = g.eig().unwrap();
        let mut re: Vec<f64> = vals.iter().map(|v| v.re).collect();
        re.sort_by(f64::total_cmp);
        let expect = [-1.0, -0.5, -0.5, 0.0];
        for (a, b) in re.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(vals.iter().all(|v| v.im.abs() < 1e-12));
    }

    #[test]
    fn single_qubit_decay_closed_form() {
        let sys = System::uniform(1, SiteKind::Qubit).unwrap();
        let e = parse("Dissipator(sqrt(0.7)*Sp)(1)", &ParseContext::new(reg())).unwrap();
        let model = DenseModel::from_evolver(&e, &sys, &reg()).unwrap();
        let rho0 = model.space.product_density(&["Dn"]).unwrap();
        let z = model
            .space
            .operator(&parse("Z(1)", &ParseContext::new(reg())).unwrap(), &reg())
            .unwrap();
        for t in [0.3, 1.0, 2.5] {
            let rho = dense_evolve(&model, &rho0, t, 0.05).unwrap();
            let exact = 1.0 - 2.0 * (-0.7 * t).exp();
            assert!((dense_expect(&rho, &z).re - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn generator_annihilates_trace() {
        let sys = System::new(vec![SiteKind::Fermion, SiteKind::Qubit, SiteKind::Fermion]).unwrap();
        let e = parse(
            "-1i*(dag(C)(1)C(3) + dag(C)(3)C(1) + X(2)) + Dissipator(2*N)(1) + Dissipator(C)(3)",
            &ParseContext::new(reg()),
        )
        .unwrap();
        let model = DenseModel::from_evolver(&e, &sys, &reg()).unwrap();
        let g = model.generator().unwrap();
        let id = model
            .space
            .to_sitewise(&Array2::eye(model.space.dim()).mapv(|x: f64| C64::new(x, 0.0)));
        for c in 0..g.ncols() {
            let s: C64 = (0..g.nrows()).map(|r| id[r].conj() * g[[r, c]]).sum();
            assert!(s.norm() < 1e-12);
        }
    }

    #[test]
    fn jordan_wigner_anticommutation() {
        let sys = System::uniform(3, SiteKind::Fermion).unwrap();
        let space = DenseSpace::new(&sys).unwrap();
        let ctx = ParseContext::new(reg());
        let c1 = space.operator(&parse("C(1)", &ctx).unwrap(), &reg()).unwrap();
        let c3 = space.operator(&parse("C(3)", &ctx).unwrap(), &reg()).unwrap();
        let c3d = c3.adjoint();
        let anti = c1.mul(&c3d).add(&c3d.mul(&c1)).to_dense();
        assert!(anti.iter().all(|x| x.norm() < 1e-14));
        let same = c3.mul(&c3d).add(&c3d.mul(&c3)).to_dense();
        assert!((same - Array2::eye(8).mapv(|x: f64| C64::new(x, 0.0)))
            .iter()
            .all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn depolarizing_limits() {
        let sys = System::uniform(2, SiteKind::Qubit).unwrap();
        let space = DenseSpace::new(&sys).unwrap();
        let ctx = ParseContext::new(reg());
        let rho = dense_graph_state(2, &[(0, 1)]).unwrap();
        let kraus = |p: f64| -> Vec<(C64, Sparse)> {
            ["Id(1)", "X(1)", "Y(1)", "Z(1)"]
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let w = if k == 0 { 1.0 - 0.75 * p } else { 0.25 * p };
                    (
                        C64::new(w, 0.0),
                        space.operator(&parse(t, &ctx).unwrap(), &reg()).unwrap(),
                    )
                })
                .collect()
        };
        let same = dense_channel(&rho, &kraus(0.0));
        assert!((&same - &rho).iter().all(|x| x.norm() < 1e-14));
        let full = dense_channel(&rho, &kraus(1.0));
        // first qubit fully depolarized: ρ = I/2 ⊗ Tr₁ρ
        let x2 = space.operator(&parse("X(1)", &ctx).unwrap(), &reg()).unwrap();
        assert!(dense_expect(&full, &x2).norm() < 1e-14);
        assert!((dense_trace(&full) - 1.0).norm() < 1e-14);
        assert!((dense_purity(&full) - 0.25).abs() < 1e-14);
    }
}
