//! Gate/channel application and time evolution by repeated W-MPO application.
//!
//! One step of size `τ` at order `p` applies `W(a₁τ)…W(a_pτ)` where the
//! complex `a_k` satisfy `∏(1 + a_k x) = Σ_{m≤p} xᵐ/m!`, so that the step
//! reproduces `exp(τL)` up to `O(τ^{p+1})`.

mod gates;

use std::collections::HashMap;

use num_complex::Complex64 as C64;

pub use gates::{
    apply_gates, apply_gates_report, apply_local, apply_local_report, sandwich_superoperator, GateFactor, GateLayer,
    MAX_CHANNEL_SUPPORT, MAX_GATE_SUPPORT,
};

use crate::error::{Error, Result};
use crate::mpo::{apply_mpo_report, w_mpo_from_fsm, Fsm, Mpo, TermSum, WVariant};
use crate::state::State;
use crate::tensor::TruncationLimits;

/// Roots of `Σ_{m≤p} xᵐ/m!` by Durand–Kerner iteration.
fn taylor_roots(p: usize) -> Vec<C64> {
    // monic form: x^p + Σ_{m<p} (p!/m!) x^m
    let mut fact = vec![1.0f64; p + 1];
    for m in 1..=p {
        fact[m] = fact[m - 1] * m as f64;
    }
    let coef: Vec<f64> = (0..p).map(|m| fact[p] / fact[m]).collect();
    let eval = |x: C64| -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        for m in (0..p).rev() {
            acc = acc * x + coef[m];
        }
        acc
    };
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..p).map(|k| seed.powu(k as u32) * 2.0).collect();
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for i in 0..p {
            let mut den = C64::new(1.0, 0.0);
            for j in 0..p {
                if i != j {
                    den *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / den;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

/// Substep coefficients `a_k = −1/r_k` for order 1 to 4, sorted by real
/// part and then imaginary part.
pub fn substep_coefficients(order: usize) -> Result<Vec<C64>> {
    if !(1..=4).contains(&order) {
        return Err(Error::invalid(format!("evolution order {order} not in 1..=4")));
    }
    let mut a: Vec<C64> = taylor_roots(order).into_iter().map(|r| -1.0 / r).collect();
    a.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(a)
}

/// Parameters of a time evolution.
#[derive(Clone, Debug)]
pub struct EvolutionPlan {
    pub evolver: TermSum,
    pub duration: f64,
    pub time_step: f64,
    pub order: usize,
    pub variant: WVariant,
    pub limits: TruncationLimits,
    /// The observer runs every `measure_period` full steps.
    pub measure_period: usize,
}

impl EvolutionPlan {
    pub fn new(evolver: TermSum, duration: f64, time_step: f64, limits: TruncationLimits) -> Self {
        Self {
            evolver,
            duration,
            time_step,
            order: 4,
            variant: WVariant::WII,
            limits,
            measure_period: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.time_step.is_finite() && self.time_step > 0.0) {
            return Err(Error::invalid(format!("time step {} must be positive", self.time_step)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::invalid(format!(
                "duration {} must be nonnegative",
                self.duration
            )));
        }
        if self.measure_period == 0 {
            return Err(Error::invalid("measure period must be at least 1"));
        }
        substep_coefficients(self.order).map(|_| ())
    }

    /// Step sizes: full steps, then a final partial step if the duration is
    /// not a multiple of the time step (within 1e-9 relative).
    pub fn steps(&self) -> Vec<f64> {
        let ratio = self.duration / self.time_step;
        let full = (ratio + 1e-9).floor();
        let mut steps = vec![self.time_step; full as usize];
        let rest = self.duration - full * self.time_step;
        if rest > 1e-9 * self.time_step {
            steps.push(rest);
        }
        steps
    }
}

/// What the observer sees after a step.
pub struct Epoch<'a> {
    /// Number of completed steps.
    pub step: usize,
    pub time: f64,
    pub state: &'a State,
    /// Largest discarded weight since the previous epoch.
    pub discarded: f64,
}

/// Evolve `state` by `plan`. The observer runs at `t = 0`, after every
/// `measure_period`-th step and after the last step.
pub fn evolve<F>(state: &State, plan: &EvolutionPlan, mut observer: F) -> Result<State>
where
    F: FnMut(&Epoch) -> Result<()>,
{
    plan.validate()?;
    crate::mpo::check_rep(&plan.evolver, state)?;
    if plan.evolver.phys_dims != state.system().phys_dims(state.rep()) {
        return Err(Error::DimensionMismatch(
            "evolver and state act on different spaces".into(),
        ));
    }
    let fsm = Fsm::from_terms(&plan.evolver);
    let coefs = substep_coefficients(plan.order)?;
    let mut cache: HashMap<(u64, u64), Vec<Mpo>> = HashMap::new();

    let steps = plan.steps();
    let mut s = state.clone();
    let mut time = 0.0;
    observer(&Epoch {
        step: 0,
        time,
        state: &s,
        discarded: 0.0,
    })?;
    let mut discarded = 0.0f64;
    let trivial = plan.evolver.is_empty();
    for (k, &tau) in steps.iter().enumerate() {
        if !trivial {
            let key = (tau.to_bits(), plan.variant as u64);
            if !cache.contains_key(&key) {
                let ws = coefs
                    .iter()
                    .map(|a| w_mpo_from_fsm(&fsm, *a * tau, plan.variant))
                    .collect::<Result<Vec<_>>>()?;
                cache.insert(key, ws);
            }
            for w in &cache[&key] {
                let (next, d) = apply_mpo_report(w, &s, &plan.limits)?;
                s = next;
                discarded = discarded.max(d);
            }
        }
        time = if k + 1 == steps.len() {
            plan.duration
        } else {
            time + tau
        };
        let done = k + 1;
        if done % plan.measure_period == 0 || done == steps.len() {
            observer(&Epoch {
                step: done,
                time,
                state: &s,
                discarded,
            })?;
            discarded = 0.0;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elementary(a: &[C64], m: usize) -> C64 {
        // e_m by the standard recurrence
        let mut e = vec![C64::new(0.0, 0.0); a.len() + 1];
        e[0] = C64::new(1.0, 0.0);
        for x in a {
            for j in (1..=a.len()).rev() {
                e[j] = e[j] + e[j - 1] * x;
            }
        }
        e[m]
    }

    #[test]
    fn coefficients_match_taylor_series() {
        let fact = [1.0, 1.0, 2.0, 6.0, 24.0];
        for p in 1..=4 {
            let a = substep_coefficients(p).unwrap();
            assert_eq!(a.len(), p);
            for m in 1..=p {
                assert!((elementary(&a, m) - 1.0 / fact[m]).norm() < 1e-12, "p={p} m={m}");
            }
        }
        let a2 = substep_coefficients(2).unwrap();
        assert!((a2[0] - C64::new(0.5, -0.5)).norm() < 1e-14);
        assert!(substep_coefficients(5).is_err());
    }

    #[test]
    fn partial_final_step() {
        let ts = TermSum {
            rep: crate::state::Rep::Pure,
            phys_dims: vec![2],
            terms: vec![],
        };
        let mut plan = EvolutionPlan::new(ts, 1.0, 0.3, TruncationLimits::default());
        let steps = plan.steps();
        assert_eq!(steps.len(), 4);
        assert!((steps[3] - 0.1).abs() < 1e-12);
        plan.duration = 0.9;
        assert_eq!(plan.steps().len(), 3);
    }
}
