//! Finite-state-machine form of an operator sum.
//!
//! Every bond carries an initial state (nothing placed yet), a final state
//! (a term has been completed) and interior states, one per term crossing
//! the bond before deparallelization. The site matrix splits into the blocks
//!
//! ```text
//!            init   interior  final
//! init    [  I      C         D   ]
//! interior[  0      A         B   ]
//! final   [  0      0         I   ]
//! ```

use ndarray::Array2;
use num_complex::Complex64 as C64;

use super::lower::TermSum;
use crate::tensor::linalg::identity;

/// Blocks of one site; `None` stands for a zero matrix.
#[derive(Clone, Debug)]
pub struct FsmSite {
    pub dim: usize,
    pub d: Option<Array2<C64>>,
    /// One entry per interior state of the right bond.
    pub c: Vec<Option<Array2<C64>>>,
    /// One entry per interior state of the left bond.
    pub b: Vec<Option<Array2<C64>>>,
    /// `a[left][right]`.
    pub a: Vec<Vec<Option<Array2<C64>>>>,
}

impl FsmSite {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            d: None,
            c: Vec::new(),
            b: Vec::new(),
            a: Vec::new(),
        }
    }

    pub fn n_left(&self) -> usize {
        self.b.len()
    }

    pub fn n_right(&self) -> usize {
        self.c.len()
    }

    /// Column `j` (interior right state) over rows `[init, interior...]`.
    fn column(&self, j: usize) -> Vec<Option<&Array2<C64>>> {
        let mut v = vec![self.c[j].as_ref()];
        v.extend(self.a.iter().map(|row| row[j].as_ref()));
        v
    }

    /// Row `i` (interior left state) over columns `[interior..., final]`.
    fn row(&self, i: usize) -> Vec<Option<&Array2<C64>>> {
        let mut v: Vec<Option<&Array2<C64>>> = self.a[i].iter().map(Option::as_ref).collect();
        v.push(self.b[i].as_ref());
        v
    }

    fn push_right(&mut self) -> usize {
        self.c.push(None);
        for row in &mut self.a {
            row.push(None);
        }
        self.c.len() - 1
    }

    fn push_left(&mut self) -> usize {
        self.b.push(None);
        self.a.push(vec![None; self.c.len()]);
        self.b.len() - 1
    }

    fn remove_right(&mut self, j: usize) {
        self.c.remove(j);
        for row in &mut self.a {
            row.remove(j);
        }
    }

    fn remove_left(&mut self, i: usize) {
        self.b.remove(i);
        self.a.remove(i);
    }
}

fn add_to(slot: &mut Option<Array2<C64>>, m: Array2<C64>) {
    match slot {
        Some(x) => *x += &m,
        None => *slot = Some(m),
    }
}

/// The FSM form of a [`TermSum`].
#[derive(Clone, Debug)]
pub struct Fsm {
    pub sites: Vec<FsmSite>,
}

impl Fsm {
    /// One interior lane per term and bond crossed, then deparallelized.
    pub fn from_terms(ts: &TermSum) -> Self {
        let n = ts.n_sites();
        let mut sites: Vec<FsmSite> = ts.phys_dims.iter().map(|&d| FsmSite::new(d)).collect();
        for t in &ts.terms {
            if t.factors.is_empty() {
                add_to(&mut sites[0].d, identity(ts.phys_dims[0]) * t.coef);
                continue;
            }
            let first = t.factors[0].0;
            let last = t.factors[t.factors.len() - 1].0;
            if first == last {
                add_to(&mut sites[first].d, t.factors[0].1.clone() * t.coef);
                continue;
            }
            let mut lane = 0;
            let mut it = t.factors.iter().peekable();
            for i in first..=last {
                let m = match it.peek() {
                    Some((s, _)) if *s == i => it.next().map(|(_, m)| m.clone()).unwrap(),
                    _ => identity(ts.phys_dims[i]),
                };
                if i == first {
                    lane = sites[i].push_right();
                    sites[i + 1].push_left();
                    sites[i].c[lane] = Some(m * t.coef);
                } else if i == last {
                    sites[i].b[lane] = Some(m);
                } else {
                    let next = sites[i].push_right();
                    sites[i + 1].push_left();
                    sites[i].a[lane][next] = Some(m);
                    lane = next;
                }
            }
        }
        debug_assert!(n == 0 || sites[0].n_left() == 0);
        let mut fsm = Fsm { sites };
        fsm.deparallelize();
        fsm
    }

    /// Interior state counts of the `N − 1` bonds.
    pub fn bond_interiors(&self) -> Vec<usize> {
        self.sites[..self.sites.len().saturating_sub(1)]
            .iter()
            .map(|s| s.n_right())
            .collect()
    }

    /// Merge proportional interior columns (left to right) and rows (right to
    /// left) until nothing changes.
    pub fn deparallelize(&mut self) {
        for _ in 0..4 {
            let mut changed = false;
            for b in 0..self.sites.len().saturating_sub(1) {
                changed |= self.merge_columns(b);
            }
            for b in (0..self.sites.len().saturating_sub(1)).rev() {
                changed |= self.merge_rows(b);
            }
            if !changed {
                break;
            }
        }
    }

    /// Columns of site `b` (right bond interior states).
    fn merge_columns(&mut self, b: usize) -> bool {
        let mut changed = false;
        let mut j = 0;
        while j < self.sites[b].n_right() {
            let col_j = flatten(&self.sites[b].column(j), self.sites[b].dim);
            let target = if norm(&col_j) == 0.0 {
                Some((None, C64::new(0.0, 0.0)))
            } else {
                (0..j).find_map(|k| {
                    let col_k = flatten(&self.sites[b].column(k), self.sites[b].dim);
                    proportional(&col_k, &col_j).map(|alpha| (Some(k), alpha))
                })
            };
            match target {
                Some((k, alpha)) => {
                    // W_b[:, j] = α W_b[:, k]  ⇒  row k of W_{b+1} += α · row j
                    let next = &mut self.sites[b + 1];
                    if let Some(k) = k {
                        let row_j: Vec<Option<Array2<C64>>> = next.row(j).into_iter().map(|m| m.cloned()).collect();
                        let nr = next.n_right();
                        for (col, m) in row_j.into_iter().enumerate() {
                            if let Some(m) = m {
                                let slot = if col < nr { &mut next.a[k][col] } else { &mut next.b[k] };
                                add_to(slot, m * alpha);
                            }
                        }
                    }
                    next.remove_left(j);
                    self.sites[b].remove_right(j);
                    changed = true;
                }
                None => j += 1,
            }
        }
        changed
    }

    /// Rows of site `b + 1` (left bond interior states).
    fn merge_rows(&mut self, b: usize) -> bool {
        let mut changed = false;
        let mut i = 0;
        while i < self.sites[b + 1].n_left() {
            let row_i = flatten(&self.sites[b + 1].row(i), self.sites[b + 1].dim);
            let target = if norm(&row_i) == 0.0 {
                Some((None, C64::new(0.0, 0.0)))
            } else {
                (0..i).find_map(|k| {
                    let row_k = flatten(&self.sites[b + 1].row(k), self.sites[b + 1].dim);
                    proportional(&row_k, &row_i).map(|alpha| (Some(k), alpha))
                })
            };
            match target {
                Some((k, alpha)) => {
                    // W_{b+1}[i, :] = α W_{b+1}[k, :]  ⇒  column k of W_b += α · column i
                    let prev = &mut self.sites[b];
                    if let Some(k) = k {
                        let col_i: Vec<Option<Array2<C64>>> = prev.column(i).into_iter().map(|m| m.cloned()).collect();
                        for (row, m) in col_i.into_iter().enumerate() {
                            if let Some(m) = m {
                                let slot = if row == 0 {
                                    &mut prev.c[k]
                                } else {
                                    &mut prev.a[row - 1][k]
                                };
                                add_to(slot, m * alpha);
                            }
                        }
                    }
                    prev.remove_right(i);
                    self.sites[b + 1].remove_left(i);
                    changed = true;
                }
                None => i += 1,
            }
        }
        changed
    }
}

fn flatten(blocks: &[Option<&Array2<C64>>], dim: usize) -> Vec<C64> {
    let mut v = Vec::with_capacity(blocks.len() * dim * dim);
    for b in blocks {
        match b {
            Some(m) => v.extend(m.iter().copied()),
            None => v.extend(std::iter::repeat(C64::new(0.0, 0.0)).take(dim * dim)),
        }
    }
    v
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `α` with `v = α u`, if it exists up to a relative tolerance.
pub(crate) fn proportional(u: &[C64], v: &[C64]) -> Option<C64> {
    let uu: f64 = u.iter().map(|x| x.norm_sqr()).sum();
    if uu == 0.0 {
        return None;
    }
    let uv: C64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let alpha = uv / uu;
    let resid: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (b - alpha * a).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let scale = norm(v).max(uu.sqrt());
    (resid <= 1e-13 * scale).then_some(alpha)
}
