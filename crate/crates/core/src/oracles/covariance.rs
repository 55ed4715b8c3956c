//! Two-point correlation matrix `G_ij = ⟨a_i† a_j⟩` of quadratic Lindblad
//! models, which obeys a closed linear equation.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistics {
    Fermion,
    Boson,
}

/// `H = Σ h_ij a_i† a_j` plus dephasing `D[√c_k n_k]`, sources `D[√g a_k†]`
/// and sinks `D[√g a_k]` (0-based modes).
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    pub statistics: Statistics,
    pub hopping: Array2<C64>,
    pub dephasing: Vec<f64>,
    pub sources: Vec<(usize, f64)>,
    pub sinks: Vec<(usize, f64)>,
}

fn chain(n: usize, t: f64) -> Array2<C64> {
    let mut h = Array2::zeros((n, n));
    for i in 0..n.saturating_sub(1) {
        h[[i, i + 1]] = C64::new(t, 0.0);
        h[[i + 1, i]] = C64::new(t, 0.0);
    }
    h
}

impl CovarianceModel {
    pub fn new(statistics: Statistics, hopping: Array2<C64>) -> Result<Self> {
        if hopping.nrows() != hopping.ncols() || hopping.nrows() == 0 {
            return Err(Error::invalid("hopping matrix must be square and nonempty"));
        }
        let n = hopping.nrows();
        Ok(Self {
            statistics,
            hopping,
            dephasing: vec![0.0; n],
            sources: Vec::new(),
            sinks: Vec::new(),
        })
    }

    pub fn modes(&self) -> usize {
        self.hopping.nrows()
    }

    /// `H = −Σ (c_i† c_{i+1} + h.c.)` with `D[√(4γ) n_i]` on every site.
    pub fn fermion_dephasing(n: usize, gamma: f64) -> Result<Self> {
        let mut m = Self::new(Statistics::Fermion, chain(n, -1.0))?;
        m.dephasing = vec![4.0 * gamma; n];
        Ok(m)
    }

    /// `H = Σ (a_i† a_{i+1} + h.c.)` with the source `D[√(2Γ) a†]` on the
    /// middle mode `⌊n/2⌋` (1-based).
    pub fn central_source(statistics: Statistics, n: usize, rate: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("central source needs at least two modes"));
        }
        let mut m = Self::new(statistics, chain(n, 1.0))?;
        m.sources.push((n / 2 - 1, 2.0 * rate));
        Ok(m)
    }

    /// XX chain `Σ (X_i X_{i+1} + Y_i Y_{i+1})` with boundary driving
    /// `D[√(ε(1±μ)/2) σ^±]` on the first and last site. Modes are
    /// Jordan–Wigner fermions whose occupied state is `Dn`; `σ⁺ = Sp`
    /// annihilates, so `Sp` terms are sinks and `Sm` terms sources.
    pub fn xx_boundary(n: usize, left: (f64, f64), right: (f64, f64)) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("boundary-driven chain needs at least two sites"));
        }
        let mut m = Self::new(Statistics::Fermion, chain(n, 2.0))?;
        for (site, (eps, mu)) in [(0, left), (n - 1, right)] {
            m.sinks.push((site, eps * (1.0 + mu) / 2.0));
            m.sources.push((site, eps * (1.0 - mu) / 2.0));
        }
        Ok(m)
    }

    /// `dG/dt`.
    pub fn rhs(&self, g: &Array2<C64>) -> Array2<C64> {
        let i = C64::new(0.0, 1.0);
        let ht = self.hopping.t();
        let mut out = (ht.dot(g) - g.dot(&ht)) * i;
        let n = self.modes();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    out[[a, b]] -= g[[a, b]] * ((self.dephasing[a] + self.dephasing[b]) / 2.0);
                }
            }
        }
        let sign = match self.statistics {
            Statistics::Fermion => -1.0,
            Statistics::Boson => 1.0,
        };
        for &(k, rate) in &self.sources {
            out[[k, k]] += rate;
            for j in 0..n {
                out[[j, k]] += g[[j, k]] * (sign * rate / 2.0);
                out[[k, j]] += g[[k, j]] * (sign * rate / 2.0);
            }
        }
        for &(k, rate) in &self.sinks {
            for j in 0..n {
                out[[j, k]] -= g[[j, k]] * (rate / 2.0);
                out[[k, j]] -= g[[k, j]] * (rate / 2.0);
            }
        }
        out
    }

    /// Diagonal correlation matrix with the given occupations.
    pub fn occupations(occ: &[f64]) -> Array2<C64> {
        Array2::from_diag(&ndarray::Array1::from_iter(occ.iter().map(|&x| C64::new(x, 0.0))))
    }
}

/// Evolve `g` over time `t` by RK4 with step halving (see [`super::RK4_TOLERANCE`]).
pub fn covariance_evolve(model: &CovarianceModel, g: &Array2<C64>, t: f64, dt: f64) -> Result<Array2<C64>> {
    if g.dim() != (model.modes(), model.modes()) {
        return Err(Error::DimensionMismatch(
            "correlation matrix and model differ in size".into(),
        ));
    }
    super::rk4_converged(|x| model.rhs(x), g, t, dt)
}
