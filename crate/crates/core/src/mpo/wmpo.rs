//! MPO approximants `W(τ) ≈ exp(τ Σ terms)` built from the FSM blocks.
//!
//! Bond states are `[0, interior...]`: the initial and final FSM states merge
//! into one state that carries "no open term".
//!
//! `W^I = [[1 + τD, √τ C], [√τ B, A]]` is exact to first order. `W^II`
//! resums each block with two auxiliary hard-core bosons tracking an open
//! term on the left (`a`) and right (`b`) bond:
//!
//! ```text
//! M_ab = τD ⊗ 1 + √τ B_a ⊗ σ⁺_L + √τ C_b ⊗ σ⁺_R + A_ab ⊗ σ⁺_L σ⁺_R
//! W^II_00 = e^{τD},  W^II_a0 = ⟨10|e^{M}|00⟩,  W^II_0b = ⟨01|e^{M}|00⟩,
//! W^II_ab = ⟨11|e^{M_ab}|00⟩
//! ```
//!
//! so that all single-site terms are exponentiated exactly.

use std::collections::HashMap;

use ndarray::{s, Array2, Array4};
use num_complex::Complex64 as C64;

use super::fsm::{Fsm, FsmSite};
use super::lower::TermSum;
use super::Mpo;
use crate::error::Result;
use crate::tensor::linalg::{identity, matrix_exponential};

/// First- or resummed first-order MPO approximant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WVariant {
    WI,
    WII,
}

impl std::str::FromStr for WVariant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WI" | "W1" => Ok(WVariant::WI),
            "WII" | "W2" => Ok(WVariant::WII),
            _ => Err(crate::Error::invalid(format!(
                "unknown W variant `{s}` (expected WI or WII)"
            ))),
        }
    }
}

/// `W(τ)` for a term sum.
pub fn w_mpo(ts: &TermSum, tau: C64, variant: WVariant) -> Result<Mpo> {
    w_mpo_from_fsm(&Fsm::from_terms(ts), tau, variant)
}

pub fn w_mpo_from_fsm(fsm: &Fsm, tau: C64, variant: WVariant) -> Result<Mpo> {
    let n = fsm.sites.len();
    let mut cache: HashMap<Vec<u64>, Array4<C64>> = HashMap::new();
    let mut tensors = Vec::with_capacity(n);
    for (i, site) in fsm.sites.iter().enumerate() {
        let key = site_key(site, tau, variant, i == 0, i + 1 == n);
        if let Some(t) = cache.get(&key) {
            tensors.push(t.clone());
            continue;
        }
        let t = match variant {
            WVariant::WI => site_wi(site, tau),
            WVariant::WII => site_wii(site, tau)?,
        };
        cache.insert(key, t.clone());
        tensors.push(t);
    }
    Mpo::new(tensors)
}

fn site_key(site: &FsmSite, tau: C64, variant: WVariant, first: bool, last: bool) -> Vec<u64> {
    let mut key = vec![
        tau.re.to_bits(),
        tau.im.to_bits(),
        variant as u64,
        first as u64,
        last as u64,
        site.dim as u64,
        site.n_left() as u64,
        site.n_right() as u64,
    ];
    let mut push = |m: &Option<Array2<C64>>| match m {
        None => key.push(u64::MAX),
        Some(m) => {
            key.push(0);
            key.extend(m.iter().flat_map(|x| [x.re.to_bits(), x.im.to_bits()]));
        }
    };
    push(&site.d);
    site.c.iter().for_each(&mut push);
    site.b.iter().for_each(&mut push);
    site.a.iter().flatten().for_each(&mut push);
    key
}

fn or_zero(m: &Option<Array2<C64>>, d: usize) -> Array2<C64> {
    m.clone().unwrap_or_else(|| Array2::zeros((d, d)))
}

fn site_wi(site: &FsmSite, tau: C64) -> Array4<C64> {
    let d = site.dim;
    let st = tau.sqrt();
    let (nl, nr) = (site.n_left() + 1, site.n_right() + 1);
    let mut w = Array4::zeros((nl, d, d, nr));
    let mut put = |a: usize, b: usize, m: Array2<C64>| w.slice_mut(s![a, .., .., b]).assign(&m);
    put(0, 0, identity(d) + or_zero(&site.d, d) * tau);
    for (j, c) in site.c.iter().enumerate() {
        if let Some(c) = c {
            put(0, 1 + j, c * st);
        }
    }
    for (a, b) in site.b.iter().enumerate() {
        if let Some(b) = b {
            put(1 + a, 0, b * st);
        }
    }
    for (a, row) in site.a.iter().enumerate() {
        for (b, m) in row.iter().enumerate() {
            if let Some(m) = m {
                put(1 + a, 1 + b, m.clone());
            }
        }
    }
    w
}

fn site_wii(site: &FsmSite, tau: C64) -> Result<Array4<C64>> {
    let d = site.dim;
    let st = tau.sqrt();
    let (nl, nr) = (site.n_left() + 1, site.n_right() + 1);
    let td = or_zero(&site.d, d) * tau;
    let mut w = Array4::zeros((nl, d, d, nr));
    w.slice_mut(s![0, .., .., 0]).assign(&matrix_exponential(&td)?);

    // one auxiliary boson: [[τD, 0], [√τ X, τD]], lower-left block
    let single = |x: &Array2<C64>| -> Result<Array2<C64>> {
        let mut m = Array2::zeros((2 * d, 2 * d));
        m.slice_mut(s![..d, ..d]).assign(&td);
        m.slice_mut(s![d.., d..]).assign(&td);
        m.slice_mut(s![d.., ..d]).assign(&(x * st));
        Ok(matrix_exponential(&m)?.slice(s![d.., ..d]).to_owned())
    };
    for (j, c) in site.c.iter().enumerate() {
        if let Some(c) = c {
            w.slice_mut(s![0, .., .., 1 + j]).assign(&single(c)?);
        }
    }
    for (a, b) in site.b.iter().enumerate() {
        if let Some(b) = b {
            w.slice_mut(s![1 + a, .., .., 0]).assign(&single(b)?);
        }
    }
    // two auxiliary bosons, basis index 2L + R
    let zero = Array2::zeros((d, d));
    for a in 0..site.n_left() {
        for b in 0..site.n_right() {
            let ba = site.b[a].as_ref().unwrap_or(&zero);
            let cb = site.c[b].as_ref().unwrap_or(&zero);
            let aab = site.a[a][b].as_ref().unwrap_or(&zero);
            if site.b[a].is_none() && site.c[b].is_none() && site.a[a][b].is_none() {
                continue;
            }
            let mut m = Array2::zeros((4 * d, 4 * d));
            let mut put = |row: usize, col: usize, x: &Array2<C64>| {
                m.slice_mut(s![row * d..(row + 1) * d, col * d..(col + 1) * d])
                    .assign(x);
            };
            for k in 0..4 {
                put(k, k, &td);
            }
            let sb = ba * st;
            let sc = cb * st;
            put(2, 0, &sb); // 00 → 10
            put(3, 1, &sb); // 01 → 11
            put(1, 0, &sc); // 00 → 01
            put(3, 2, &sc); // 10 → 11
            put(3, 0, aab); // 00 → 11
            let e = matrix_exponential(&m)?;
            w.slice_mut(s![1 + a, .., .., 1 + b]).assign(&e.slice(s![3 * d.., ..d]));
        }
    }
    Ok(w)
}
