//! Graph states `∏_{(i,j)∈E} CZ(i,j) |+⟩^⊗n`.

use super::{Rep, State, System};
use crate::dsl::{Registry, SiteKind};
use crate::error::{Error, Result};
use crate::evolution::apply_local;
use crate::tensor::TruncationLimits;

/// All pairs `(i, j)` with `i < j < n`, in lexicographic order.
pub fn complete_graph(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Graph state on `n` qubits with 0-based `edges`.
///
/// CZ gates are applied to the pure state in lexicographic edge order; a mixed
/// state is obtained afterwards with [`State::mix`].
pub fn graph_state(rep: Rep, n: usize, edges: &[(usize, usize)], limits: &TruncationLimits) -> Result<State> {
    let system = System::uniform(n, SiteKind::Qubit)?;
    let mut sorted: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(Error::invalid(format!("edge ({a}, {b}) invalid for {n} vertices")));
        }
        sorted.push((a.min(b), a.max(b)));
    }
    sorted.sort_unstable();
    sorted.dedup();
    let cz = Registry::builtin()
        .lookup("CZ", &[SiteKind::Qubit, SiteKind::Qubit])?
        .matrix;
    let mut state = State::product(Rep::Pure, &system, &["+"])?;
    for (a, b) in sorted {
        state = apply_local(&state, &[a, b], &cz, limits)?;
    }
    match rep {
        Rep::Pure => Ok(state),
        Rep::Mixed => state.mix(),
    }
}
