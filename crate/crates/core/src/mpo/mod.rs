//! Operator strings, MPO construction and MPO application.

mod fsm;
mod lower;
mod wmpo;

use ndarray::{s, Array2, Array4, Axis};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::state::kernels::{as_matrix, from_matrix};
use crate::state::State;
use crate::tensor::linalg::{identity, kron, truncated_svd};
use crate::tensor::TruncationLimits;

pub use fsm::{Fsm, FsmSite};
pub use lower::{dense_on_sites, lower_evolver, lower_observable, Lowerer, Term, TermSum};
pub(crate) use lower::{distribute_index, kraus_terms};
pub use wmpo::{w_mpo, w_mpo_from_fsm, WVariant};

/// Matrix product operator; site tensors are indexed `(left, out, in, right)`.
#[derive(Clone, Debug)]
pub struct Mpo {
    tensors: Vec<Array4<C64>>,
}

impl Mpo {
    pub fn new(tensors: Vec<Array4<C64>>) -> Result<Self> {
        let n = tensors.len();
        if n == 0 {
            return Err(Error::invalid("an MPO needs at least one site"));
        }
        for (i, t) in tensors.iter().enumerate() {
            let (l, o, p, r) = t.dim();
            if o != p {
                return Err(Error::DimensionMismatch(format!("site {i}: non-square physical block")));
            }
            if (i == 0 && l != 1) || (i + 1 == n && r != 1) {
                return Err(Error::DimensionMismatch("boundary bonds must have extent 1".into()));
            }
            if i + 1 < n && tensors[i + 1].dim().0 != r {
                return Err(Error::DimensionMismatch(format!("bond {i} extents differ")));
            }
        }
        Ok(Self { tensors })
    }

    /// Identity operator on the given physical dimensions.
    pub fn identity(dims: &[usize]) -> Self {
        let tensors = dims
            .iter()
            .map(|&d| identity(d).into_shape_with_order((1, d, d, 1)).expect("reshape"))
            .collect();
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Array4<C64>] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.tensors.iter().map(|t| t.dim().1).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1].iter().map(|t| t.dim().3).collect()
    }

    /// Dense matrix (first site most significant).
    pub fn to_dense(&self, max_dim: usize) -> Result<Array2<C64>> {
        let dim: usize = self.phys_dims().iter().product();
        if dim > max_dim {
            return Err(Error::invalid("dense expansion too large"));
        }
        // acc[(out, in), r] with out/in accumulated over sites
        let mut acc: Vec<Array2<C64>> = vec![Array2::from_elem((1, 1), C64::new(1.0, 0.0))];
        for t in &self.tensors {
            let (l, _, _, r) = t.dim();
            let mut next = Vec::with_capacity(r);
            for c in 0..r {
                let mut m: Option<Array2<C64>> = None;
                for (a, prev) in acc.iter().enumerate().take(l) {
                    let local = t.slice(s![a, .., .., c]).to_owned();
                    let k = kron(prev, &local);
                    m = Some(match m {
                        Some(x) => x + k,
                        None => k,
                    });
                }
                next.push(m.expect("nonempty bond"));
            }
            acc = next;
        }
        Ok(acc.swap_remove(0))
    }

    /// Remove zero and proportional bond states (all states, no structure
    /// kept): columns left to right, then rows right to left.
    pub fn deparallelize(&mut self) {
        for _ in 0..4 {
            let mut changed = false;
            for b in 0..self.len() - 1 {
                changed |= self.merge_columns(b);
            }
            for b in (0..self.len() - 1).rev() {
                changed |= self.merge_rows(b);
            }
            if !changed {
                break;
            }
        }
    }

    fn merge_columns(&mut self, b: usize) -> bool {
        let mut changed = false;
        let mut j = 0;
        while j < self.tensors[b].dim().3 && self.tensors[b].dim().3 > 1 {
            let col = |t: &Array4<C64>, j: usize| -> Vec<C64> { t.index_axis(Axis(3), j).iter().copied().collect() };
            let cj = col(&self.tensors[b], j);
            let zero = cj.iter().all(|x| *x == C64::new(0.0, 0.0));
            let target = if zero {
                Some((None, C64::new(0.0, 0.0)))
            } else {
                (0..self.tensors[b].dim().3)
                    .filter(|&k| k != j)
                    .find_map(|k| fsm::proportional(&col(&self.tensors[b], k), &cj).map(|a| (Some(k), a)))
            };
            match target {
                Some((k, alpha)) => {
                    let next = &mut self.tensors[b + 1];
                    if let Some(k) = k {
                        let row_j = next.index_axis(Axis(0), j).to_owned();
                        let mut row_k = next.index_axis_mut(Axis(0), k);
                        row_k.zip_mut_with(&row_j, |x, y| *x += alpha * y);
                    }
                    self.tensors[b + 1] = remove_index(&self.tensors[b + 1], Axis(0), j);
                    self.tensors[b] = remove_index(&self.tensors[b], Axis(3), j);
                    changed = true;
                }
                None => j += 1,
            }
        }
        changed
    }

    fn merge_rows(&mut self, b: usize) -> bool {
        let mut changed = false;
        let mut i = 0;
        while i < self.tensors[b + 1].dim().0 && self.tensors[b + 1].dim().0 > 1 {
            let row = |t: &Array4<C64>, i: usize| -> Vec<C64> { t.index_axis(Axis(0), i).iter().copied().collect() };
            let ri = row(&self.tensors[b + 1], i);
            let zero = ri.iter().all(|x| *x == C64::new(0.0, 0.0));
            let target = if zero {
                Some((None, C64::new(0.0, 0.0)))
            } else {
                (0..self.tensors[b + 1].dim().0)
                    .filter(|&k| k != i)
                    .find_map(|k| fsm::proportional(&row(&self.tensors[b + 1], k), &ri).map(|a| (Some(k), a)))
            };
            match target {
                Some((k, alpha)) => {
                    let prev = &mut self.tensors[b];
                    if let Some(k) = k {
                        let col_i = prev.index_axis(Axis(3), i).to_owned();
                        let mut col_k = prev.index_axis_mut(Axis(3), k);
                        col_k.zip_mut_with(&col_i, |x, y| *x += alpha * y);
                    }
                    self.tensors[b] = remove_index(&self.tensors[b], Axis(3), i);
                    self.tensors[b + 1] = remove_index(&self.tensors[b + 1], Axis(0), i);
                    changed = true;
                }
                None => i += 1,
            }
        }
        changed
    }
}

fn remove_index(t: &Array4<C64>, axis: Axis, k: usize) -> Array4<C64> {
    let keep: Vec<usize> = (0..t.len_of(axis)).filter(|&x| x != k).collect();
    t.select(axis, &keep)
}

/// MPO of a term sum: FSM construction followed by deparallelization of all
/// bond states. An empty sum gives the zero operator.
pub fn mpo_from_terms(ts: &TermSum) -> Result<Mpo> {
    let mut m = Fsm::from_terms(ts).to_mpo();
    m.deparallelize();
    Ok(m)
}

impl Fsm {
    /// Bond states ordered `[init, interior..., final]`; the left boundary
    /// keeps only `init`, the right boundary only `final`.
    pub fn to_mpo(&self) -> Mpo {
        let n = self.sites.len();
        let tensors = self
            .sites
            .iter()
            .enumerate()
            .map(|(i, site)| {
                let d = site.dim;
                let nl = if i == 0 { 1 } else { site.n_left() + 2 };
                let nr = if i + 1 == n { 1 } else { site.n_right() + 2 };
                let init_r = 0;
                let final_r = nr - 1;
                let final_l = nl - 1;
                let mut w = Array4::zeros((nl, d, d, nr));
                let mut put = |a: usize, b: usize, m: &Array2<C64>| {
                    w.slice_mut(s![a, .., .., b]).zip_mut_with(m, |x, y| *x += y);
                };
                let id = identity(d);
                if i + 1 < n {
                    put(0, init_r, &id);
                }
                if i > 0 {
                    put(final_l, final_r, &id);
                }
                if let Some(m) = &site.d {
                    put(0, final_r, m);
                }
                for (j, m) in site.c.iter().enumerate() {
                    if let Some(m) = m {
                        put(0, 1 + j, m);
                    }
                }
                for (a, m) in site.b.iter().enumerate() {
                    if let Some(m) = m {
                        put(1 + a, final_r, m);
                    }
                }
                for (a, row) in site.a.iter().enumerate() {
                    for (b, m) in row.iter().enumerate() {
                        if let Some(m) = m {
                            put(1 + a, 1 + b, m);
                        }
                    }
                }
                w
            })
            .collect();
        Mpo { tensors }
    }
}

/// Apply an MPO to a state.
///
/// A zip-up sweep from the left (truncating with a tenth of the cutoff)
/// is followed by a right-to-left compression with `limits`. The result has
/// its orthogonality center at site 0.
pub fn apply_mpo(m: &Mpo, s: &State, limits: &TruncationLimits) -> Result<State> {
    Ok(apply_mpo_report(m, s, limits)?.0)
}

/// As [`apply_mpo`], also returning the largest discarded weight.
pub fn apply_mpo_report(m: &Mpo, s: &State, limits: &TruncationLimits) -> Result<(State, f64)> {
    let n = s.len();
    if m.len() != n || m.phys_dims() != s.system().phys_dims(s.rep()) {
        return Err(Error::DimensionMismatch("MPO and state act on different spaces".into()));
    }
    let s = s.orthogonalize(0)?;
    let zip_limits = TruncationLimits {
        cutoff: limits.cutoff * 0.1,
        maxdim: limits.maxdim.saturating_mul(2),
    };
    // carry[new_left, w_left, left] as a matrix ((new_left·w_left), left)
    let mut carry = Array2::from_elem((1, 1), C64::new(1.0, 0.0));
    let mut carry_dims = (1usize, 1usize);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = &s.tensors()[i];
        let w = &m.tensors()[i];
        let (_, p, r) = t.dim();
        let (wl, o, _, wr) = w.dim();
        let (nl, _) = carry_dims;
        // z[(nl, wl), (p, r)]
        let z = carry.dot(&as_matrix(t, 1));
        // reorder to [(nl, r), (wl, p)]
        let z = z
            .into_shape_with_order((nl, wl, p, r))
            .expect("reshape")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((nl * r, wl * p))
            .expect("reshape");
        // w as [(wl, in), (out, wr)]
        let wm = w
            .view()
            .permuted_axes([0, 2, 1, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((wl * p, o * wr))
            .expect("reshape");
        let y = z.dot(&wm); // [(nl, r), (o, wr)]
        let y = y
            .into_shape_with_order((nl, r, o, wr))
            .expect("reshape")
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((nl * o, wr * r))
            .expect("reshape");
        if i + 1 == n {
            out.push(from_matrix(y, (nl, o, 1)));
            break;
        }
        let svd = truncated_svd(&y, &zip_limits)?;
        let k = svd.s.len();
        out.push(from_matrix(svd.u, (nl, o, k)));
        let mut sv = svd.vt;
        for (row, x) in sv.axis_iter_mut(Axis(0)).zip(&svd.s) {
            let mut row = row;
            row.mapv_inplace(|v| v * *x);
        }
        carry = sv; // [k, (wr, r)] = [(k, wr), r] after reshape
        carry = carry.into_shape_with_order((k * wr, r)).expect("reshape");
        carry_dims = (k, wr);
    }
    let applied = State::from_parts(s.rep(), s.system().clone(), out, Some(n - 1));
    let (result, discarded) = applied.compress_report(limits)?;
    for t in result.tensors() {
        crate::state::kernels::check_finite(t, "MPO application")?;
    }
    Ok((result, discarded))
}

/// Check a state and an MPO refer to the same representation.
pub(crate) fn check_rep(ts: &TermSum, s: &State) -> Result<()> {
    if ts.rep != s.rep() {
        return Err(Error::invalid(format!(
            "operator lowered for {} states applied to a {} state",
            ts.rep,
            s.rep()
        )));
    }
    Ok(())
}
