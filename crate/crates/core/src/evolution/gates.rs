//! Gates and channels acting on a few sites of an MPS.

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex64 as C64;

use crate::dsl::{OpExpr, Registry};
use crate::error::{Error, Result};
use crate::mpo::{dense_on_sites, distribute_index, kraus_terms};
use crate::state::kernels::{as_matrix, check_finite, from_matrix, left_qr, mul_left, mul_right, right_lq};
use crate::state::{Rep, State, System};
use crate::tensor::linalg::{adjoint, identity, truncated_svd};
use crate::tensor::TruncationLimits;

/// Largest support of a unitary gate.
pub const MAX_GATE_SUPPORT: usize = 3;
/// Largest support of a Kraus channel.
pub const MAX_CHANNEL_SUPPORT: usize = 2;

/// Superoperator of `ρ ↦ E ρ F†` on sites with local dimensions `dims`, in
/// the site-wise vectorization used by mixed states.
pub fn sandwich_superoperator(e: &Array2<C64>, f: &Array2<C64>, dims: &[usize]) -> Array2<C64> {
    let dim: usize = dims.iter().product();
    let sdim = dim * dim;
    // combined index -> (ket index, bra index)
    let split: Vec<(usize, usize)> = (0..sdim)
        .map(|mut idx| {
            let (mut ket, mut bra, mut stride) = (0, 0, 1);
            for &d in dims.iter().rev() {
                let local = idx % (d * d);
                idx /= d * d;
                ket += (local / d) * stride;
                bra += (local % d) * stride;
                stride *= d;
            }
            (ket, bra)
        })
        .collect();
    let fc = f.mapv(|x| x.conj());
    Array2::from_shape_fn((sdim, sdim), |(r, c)| {
        let (rk, rb) = split[r];
        let (ck, cb) = split[c];
        e[[rk, ck]] * fc[[rb, cb]]
    })
}

/// Reorder the factors of an operator on `dims.len()` sites: factor `j` of
/// the result is factor `perm[j]` of `op`.
fn permute_factors(op: &Array2<C64>, dims: &[usize], perm: &[usize]) -> Array2<C64> {
    let k = dims.len();
    let mut shape = dims.to_vec();
    shape.extend_from_slice(dims);
    let t = ArrayD::from_shape_vec(IxDyn(&shape), op.as_standard_layout().iter().copied().collect()).expect("shape");
    let axes: Vec<usize> = perm.iter().copied().chain(perm.iter().map(|p| p + k)).collect();
    let n = op.nrows();
    t.permuted_axes(IxDyn(&axes))
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, n))
        .expect("reshape")
}

/// Working copy of the site tensors while gates are routed. Physical
/// extents may be permuted between swaps.
struct Chain {
    tensors: Vec<Array3<C64>>,
    center: usize,
    discarded: f64,
}

impl Chain {
    fn move_center(&mut self, c: usize) -> Result<()> {
        while self.center < c {
            let i = self.center;
            let (q, r) = left_qr(&self.tensors[i])?;
            self.tensors[i] = q;
            self.tensors[i + 1] = mul_left(&r, &self.tensors[i + 1]);
            self.center += 1;
        }
        while self.center > c {
            let i = self.center;
            let (l, q) = right_lq(&self.tensors[i])?;
            self.tensors[i] = q;
            self.tensors[i - 1] = mul_right(&self.tensors[i - 1], &l);
            self.center -= 1;
        }
        Ok(())
    }

    /// Contract sites `a..a+k` into `(left, P, right)`.
    fn merge(&self, a: usize, k: usize) -> (Array3<C64>, Vec<usize>) {
        let (l, p0, _) = self.tensors[a].dim();
        let mut dims = vec![p0];
        let mut m = as_matrix(&self.tensors[a], 2);
        for t in &self.tensors[a + 1..a + k] {
            let (_, p, r) = t.dim();
            dims.push(p);
            let rows = m.nrows();
            m = m
                .dot(&as_matrix(t, 1))
                .into_shape_with_order((rows * p, r))
                .expect("reshape");
        }
        let r = m.ncols();
        let big: usize = dims.iter().product();
        (from_matrix(m, (l, big, r)), dims)
    }

    /// Split `(left, P, right)` back into sites starting at `a`; the center
    /// ends on the last of them.
    fn split(&mut self, a: usize, theta: Array3<C64>, dims: &[usize], limits: &TruncationLimits) -> Result<()> {
        let (l, big, r) = theta.dim();
        let mut bond = l;
        let mut rest = big;
        let mut m = theta
            .into_shape_with_order((l * dims[0], (big / dims[0]) * r))
            .expect("reshape");
        for (j, &d) in dims[..dims.len() - 1].iter().enumerate() {
            let svd = truncated_svd(&m, limits)?;
            self.discarded = self.discarded.max(svd.discarded);
            let kk = svd.s.len();
            self.tensors[a + j] = from_matrix(svd.u, (bond, d, kk));
            let mut sv = svd.vt;
            for (mut row, s) in sv.rows_mut().into_iter().zip(&svd.s) {
                row.mapv_inplace(|x| x * *s);
            }
            rest /= d;
            let next = dims[j + 1];
            m = sv
                .into_shape_with_order((kk * next, (rest / next) * r))
                .expect("reshape");
            bond = kk;
        }
        let last = dims[dims.len() - 1];
        self.tensors[a + dims.len() - 1] = from_matrix(m, (bond, last, r));
        self.center = a + dims.len() - 1;
        Ok(())
    }

    fn apply_block(&mut self, a: usize, k: usize, op: &Array2<C64>, limits: &TruncationLimits) -> Result<()> {
        self.move_center(a)?;
        let (theta, dims) = self.merge(a, k);
        let (l, big, r) = theta.dim();
        let flat = theta
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((big, l * r))
            .expect("reshape");
        let out = op
            .dot(&flat)
            .into_shape_with_order((big, l, r))
            .expect("reshape")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned();
        self.split(a, out, &dims, limits)
    }

    /// Exchange sites `i` and `i + 1`.
    fn swap(&mut self, i: usize, limits: &TruncationLimits) -> Result<()> {
        if self.center != i + 1 {
            self.move_center(i)?;
        }
        let (theta, dims) = self.merge(i, 2);
        let (l, _, r) = theta.dim();
        let swapped = theta
            .into_shape_with_order((l, dims[0], dims[1], r))
            .expect("reshape")
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((l, dims[0] * dims[1], r))
            .expect("reshape");
        self.split(i, swapped, &[dims[1], dims[0]], limits)
    }
}

/// Apply `op` to the 0-based `sites` (in the factor order of `op`).
///
/// `op` acts on the physical spaces of the state, i.e. on the doubled spaces
/// for mixed states. Non-adjacent sites are brought next to the first one by
/// nearest-neighbour swaps, which are undone afterwards. All SVDs truncate
/// with `limits`.
pub fn apply_local(state: &State, sites: &[usize], op: &Array2<C64>, limits: &TruncationLimits) -> Result<State> {
    Ok(apply_local_report(state, sites, op, limits)?.0)
}

/// As [`apply_local`], also returning the largest discarded weight.
pub fn apply_local_report(
    state: &State,
    sites: &[usize],
    op: &Array2<C64>,
    limits: &TruncationLimits,
) -> Result<(State, f64)> {
    let n = state.len();
    let k = sites.len();
    if k == 0 || k > MAX_GATE_SUPPORT {
        return Err(Error::invalid(format!(
            "gates act on 1 to {MAX_GATE_SUPPORT} sites, got {k}"
        )));
    }
    for (j, &s) in sites.iter().enumerate() {
        if s >= n {
            return Err(Error::invalid(format!("site {} outside 1..{n}", s + 1)));
        }
        if sites[..j].contains(&s) {
            return Err(Error::invalid(format!("site {} repeated in a gate", s + 1)));
        }
    }
    let dims: Vec<usize> = sites.iter().map(|&s| state.tensors()[s].dim().1).collect();
    let total: usize = dims.iter().product();
    if op.dim() != (total, total) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} gate on sites of total dimension {total}",
            op.nrows(),
            op.ncols()
        )));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by_key(|&j| sites[j]);
    let sorted: Vec<usize> = perm.iter().map(|&j| sites[j]).collect();
    let op = if perm.iter().enumerate().all(|(a, &b)| a == b) {
        op.clone()
    } else {
        permute_factors(op, &dims, &perm)
    };

    let mut s = state.clone();
    let a = sorted[0];
    let start = match s.center() {
        Some(c) => c,
        None => {
            s.move_center(a)?;
            a
        }
    };
    let mut chain = Chain {
        tensors: std::mem::take(s.tensors_mut()),
        center: start,
        discarded: 0.0,
    };
    let mut swaps = Vec::new();
    for (m, &site) in sorted.iter().enumerate().skip(1) {
        let mut cur = site;
        while cur > a + m {
            chain.swap(cur - 1, limits)?;
            swaps.push(cur - 1);
            cur -= 1;
        }
    }
    chain.apply_block(a, k, &op, limits)?;
    for &i in swaps.iter().rev() {
        chain.swap(i, limits)?;
    }
    for t in &chain.tensors {
        check_finite(t, "gate application")?;
    }
    let out = State::from_parts(state.rep(), state.system().clone(), chain.tensors, Some(chain.center));
    Ok((out, chain.discarded))
}

/// One factor of a gate layer, on 0-based sites in increasing order.
#[derive(Clone, Debug)]
pub enum GateFactor {
    /// A plain operator `U`: `|ψ⟩ ↦ U|ψ⟩`, `ρ ↦ U ρ U†`.
    Unitary { sites: Vec<usize>, matrix: Array2<C64> },
    /// `ρ ↦ Σ wᵢ Eᵢ ρ Eᵢ†`, from `Σ wᵢ Gate(Eᵢ)`.
    Channel {
        sites: Vec<usize>,
        kraus: Vec<(C64, Array2<C64>)>,
    },
    /// A number in front of the product.
    Phase(C64),
}

/// An ordered product of gates and channels. Factors are applied left to
/// right, i.e. in circuit order.
#[derive(Clone, Debug)]
pub struct GateLayer {
    pub factors: Vec<GateFactor>,
    pub limits: TruncationLimits,
    /// Non-fatal diagnostics found while building the layer.
    pub warnings: Vec<String>,
}

fn zero_based(sites: Vec<usize>, system: &System) -> Result<Vec<usize>> {
    sites
        .into_iter()
        .map(|s| {
            if s == 0 || s > system.len() {
                Err(Error::invalid(format!("site {s} outside 1..{}", system.len())))
            } else {
                Ok(s - 1)
            }
        })
        .collect()
}

impl GateLayer {
    pub fn new(expr: &OpExpr, system: &System, registry: &Registry, limits: TruncationLimits) -> Result<Self> {
        let e = distribute_index(expr);
        let (phase, core) = match e {
            OpExpr::Scale(c, x) if !x.contains_channel() || matches!(*x, OpExpr::Prod(_)) => (Some(c), *x),
            x => (None, x),
        };
        let parts = match core {
            OpExpr::Prod(xs) => xs,
            x => vec![x],
        };
        let mut layer = GateLayer {
            factors: Vec::new(),
            limits,
            warnings: Vec::new(),
        };
        if let Some(c) = phase {
            layer.factors.push(GateFactor::Phase(c));
        }
        for part in parts {
            layer.push_factor(&part, system, registry)?;
        }
        Ok(layer)
    }

    fn push_factor(&mut self, e: &OpExpr, system: &System, registry: &Registry) -> Result<()> {
        if let OpExpr::Scalar(c) = e {
            self.factors.push(GateFactor::Phase(*c));
            return Ok(());
        }
        let sites = zero_based(e.sites(), system)?;
        if sites.is_empty() {
            return Err(Error::lowering(format!("gate `{e}` has no site indices")));
        }
        match kraus_terms(e)? {
            None => {
                if sites.len() > MAX_GATE_SUPPORT {
                    return Err(Error::lowering(format!(
                        "gate `{e}` acts on more than {MAX_GATE_SUPPORT} sites"
                    )));
                }
                let matrix = dense_on_sites(e, &sites, system, registry)?;
                self.factors.push(GateFactor::Unitary { sites, matrix });
            }
            Some(terms) => {
                if sites.len() > MAX_CHANNEL_SUPPORT {
                    return Err(Error::lowering(format!(
                        "channel `{e}` acts on more than {MAX_CHANNEL_SUPPORT} sites"
                    )));
                }
                let mut kraus = Vec::with_capacity(terms.len());
                for (w, k) in terms {
                    if k.contains_channel() {
                        return Err(Error::lowering(format!("nested Gate in `{e}`")));
                    }
                    kraus.push((w, dense_on_sites(&k, &sites, system, registry)?));
                }
                let dim = kraus[0].1.nrows();
                let mut sum = Array2::<C64>::zeros((dim, dim));
                for (w, m) in &kraus {
                    sum += &(adjoint(&m.view()).dot(m) * *w);
                }
                let dev = (&sum - &identity(dim)).iter().map(|x| x.norm()).fold(0.0, f64::max);
                if dev > 1e-10 {
                    let msg = format!("channel `{e}` is not trace preserving (|Σ w E†E − 1| = {dev:.2e})");
                    log::warn!("{msg}");
                    self.warnings.push(msg);
                }
                self.factors.push(GateFactor::Channel { sites, kraus });
            }
        }
        Ok(())
    }
}

/// Apply all factors of `layer` in order.
pub fn apply_gates(state: &State, layer: &GateLayer) -> Result<State> {
    Ok(apply_gates_report(state, layer)?.0)
}

/// As [`apply_gates`], also returning the largest discarded weight.
pub fn apply_gates_report(state: &State, layer: &GateLayer) -> Result<(State, f64)> {
    let mut s = state.clone();
    let mut worst = 0.0f64;
    let kinds = state.system();
    for f in &layer.factors {
        let (next, disc) = match (f, state.rep()) {
            (GateFactor::Phase(c), Rep::Pure) => (s.scale(*c), 0.0),
            (GateFactor::Phase(c), Rep::Mixed) => (s.scale(C64::new(c.norm_sqr(), 0.0)), 0.0),
            (GateFactor::Unitary { sites, matrix }, Rep::Pure) => apply_local_report(&s, sites, matrix, &layer.limits)?,
            (GateFactor::Unitary { sites, matrix }, Rep::Mixed) => {
                let dims: Vec<usize> = sites.iter().map(|&i| kinds.kind(i).dim()).collect();
                let sup = sandwich_superoperator(matrix, matrix, &dims);
                apply_local_report(&s, sites, &sup, &layer.limits)?
            }
            (GateFactor::Channel { .. }, Rep::Pure) => {
                return Err(Error::invalid("channels (Gate) need a mixed state"));
            }
            (GateFactor::Channel { sites, kraus }, Rep::Mixed) => {
                let dims: Vec<usize> = sites.iter().map(|&i| kinds.kind(i).dim()).collect();
                let mut sup: Option<Array2<C64>> = None;
                for (w, e) in kraus {
                    let term = sandwich_superoperator(e, e, &dims) * *w;
                    sup = Some(match sup {
                        None => term,
                        Some(acc) => acc + term,
                    });
                }
                apply_local_report(&s, sites, &sup.expect("nonempty Kraus list"), &layer.limits)?
            }
        };
        s = next;
        worst = worst.max(disc);
    }
    Ok((s, worst))
}
