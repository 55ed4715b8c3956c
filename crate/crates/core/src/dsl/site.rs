use std::fmt;
use std::str::FromStr;

use ndarray::{array, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::tensor::linalg::identity;

/// Local Hilbert space of one site.
///
/// Basis orderings: Qubit `(Up, Dn) = (|0⟩, |1⟩)` with `Z = diag(1, -1)`;
/// Boson Fock states `0..d-1`; Fermion `(Emp, Occ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteKind {
    Qubit,
    Boson(usize),
    Fermion,
}

impl SiteKind {
    pub fn boson(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!(
                "boson local dimension must be at least 2, got {dim}"
            )));
        }
        Ok(SiteKind::Boson(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            SiteKind::Qubit | SiteKind::Fermion => 2,
            SiteKind::Boson(d) => *d,
        }
    }

    pub fn is_fermion(&self) -> bool {
        matches!(self, SiteKind::Fermion)
    }

    /// Resolve a named local state.
    pub fn local_state(&self, name: &str) -> Result<LocalState> {
        let d = self.dim();
        if name == "FullyMixed" {
            return Ok(LocalState::Density(identity(d).mapv(|x| x / d as f64)));
        }
        let basis = |k: usize| {
            let mut v = vec![C64::new(0.0, 0.0); d];
            v[k] = C64::new(1.0, 0.0);
            LocalState::Vector(v)
        };
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let state = match (self, name) {
            (SiteKind::Qubit, "Up" | "0") => Some(basis(0)),
            (SiteKind::Qubit, "Dn" | "1") => Some(basis(1)),
            (SiteKind::Qubit, "+") => Some(LocalState::Vector(vec![C64::new(h, 0.0), C64::new(h, 0.0)])),
            (SiteKind::Qubit, "-") => Some(LocalState::Vector(vec![C64::new(h, 0.0), C64::new(-h, 0.0)])),
            (SiteKind::Fermion, "Emp") => Some(basis(0)),
            (SiteKind::Fermion, "Occ") => Some(basis(1)),
            (SiteKind::Boson(d), n) => n.parse::<usize>().ok().filter(|k| k < d).map(basis),
            _ => None,
        };
        state.ok_or_else(|| Error::UnknownState {
            name: name.to_string(),
            kind: self.to_string(),
        })
    }
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteKind::Qubit => write!(f, "Qubit"),
            SiteKind::Boson(d) => write!(f, "Boson({d})"),
            SiteKind::Fermion => write!(f, "Fermion"),
        }
    }
}

impl FromStr for SiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "Qubit" => Ok(SiteKind::Qubit),
            "Fermion" => Ok(SiteKind::Fermion),
            _ => {
                let inner = s
                    .strip_prefix("Boson(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::invalid(format!("unknown site kind `{s}`")))?;
                let d = inner
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("invalid boson dimension in `{s}`")))?;
                SiteKind::boson(d)
            }
        }
    }
}

/// A named local state: a normalized vector or a unit-trace density matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalState {
    Vector(Vec<C64>),
    Density(Array2<C64>),
}

impl LocalState {
    pub fn density(&self) -> Array2<C64> {
        match self {
            LocalState::Vector(v) => Array2::from_shape_fn((v.len(), v.len()), |(i, j)| v[i] * v[j].conj()),
            LocalState::Density(m) => m.clone(),
        }
    }
}

/// A local operator given by its matrix on `support` consecutive factors.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorDef {
    pub name: String,
    pub support: usize,
    pub matrix: Array2<C64>,
    /// Odd fermion parity; only ever set on Fermion sites.
    pub fermionic: bool,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn def(name: &str, matrix: Array2<C64>) -> OperatorDef {
    OperatorDef {
        name: name.to_string(),
        support: 1,
        matrix,
        fermionic: false,
    }
}

fn swap_matrix(d: usize) -> Array2<C64> {
    let mut m = Array2::zeros((d * d, d * d));
    for i in 0..d {
        for j in 0..d {
            m[[j * d + i, i * d + j]] = c(1.0);
        }
    }
    m
}

/// Names of built-in operators acting on more than one site.
const TWO_SITE_BUILTINS: [&str; 2] = ["Swap", "CZ"];

/// The predefined operators of one site kind.
pub fn builtin_operators(kind: SiteKind) -> Vec<OperatorDef> {
    let i = C64::new(0.0, 1.0);
    let z = c(0.0);
    let d = kind.dim();
    let mut ops = vec![def("Id", identity(d))];
    match kind {
        SiteKind::Qubit => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            ops.push(def("X", array![[z, c(1.0)], [c(1.0), z]]));
            ops.push(def("Y", array![[z, -i], [i, z]]));
            ops.push(def("Z", array![[c(1.0), z], [z, c(-1.0)]]));
            ops.push(def("Sp", array![[z, c(1.0)], [z, z]]));
            ops.push(def("Sm", array![[z, z], [c(1.0), z]]));
            ops.push(def("H", array![[c(h), c(h)], [c(h), c(-h)]]));
            let mut cz = identity(4);
            cz[[3, 3]] = c(-1.0);
            ops.push(OperatorDef {
                name: "CZ".into(),
                support: 2,
                matrix: cz,
                fermionic: false,
            });
        }
        SiteKind::Boson(d) => {
            let mut a = Array2::zeros((d, d));
            let mut n = Array2::zeros((d, d));
            for k in 1..d {
                a[[k - 1, k]] = c((k as f64).sqrt());
                n[[k, k]] = c(k as f64);
            }
            ops.push(def("A", a));
            ops.push(def("N", n));
        }
        SiteKind::Fermion => {
            ops.push(OperatorDef {
                fermionic: true,
                ..def("C", array![[z, c(1.0)], [z, z]])
            });
            ops.push(def("N", array![[z, z], [z, c(1.0)]]));
            ops.push(def("F", array![[c(1.0), z], [z, c(-1.0)]]));
        }
    }
    ops.push(OperatorDef {
        name: "Swap".into(),
        support: 2,
        matrix: swap_matrix(d),
        fermionic: false,
    });
    ops
}

/// User-registered operator, optionally restricted to one site kind.
#[derive(Clone, Debug)]
struct UserOperator {
    def: OperatorDef,
    kind: Option<SiteKind>,
}

/// Operator lookup by name and site kinds: built-ins plus user definitions.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    user: Vec<UserOperator>,
}

const BUILTIN_NAMES: [&str; 13] = ["Id", "X", "Y", "Z", "Sp", "Sm", "H", "Swap", "CZ", "A", "N", "C", "F"];

impl Registry {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Register a user operator given by its matrix. With `kind = None` the
    /// operator applies to any site whose dimensions match.
    pub fn add(&mut self, def: OperatorDef, kind: Option<SiteKind>) -> Result<()> {
        if BUILTIN_NAMES.contains(&def.name.as_str()) || self.user.iter().any(|u| u.def.name == def.name) {
            return Err(Error::invalid(format!("operator `{}` is already defined", def.name)));
        }
        if def.support == 0 {
            return Err(Error::invalid("operator support must be at least 1"));
        }
        let (r, cdim) = def.matrix.dim();
        if r != cdim {
            return Err(Error::DimensionMismatch(format!(
                "operator `{}` matrix is not square",
                def.name
            )));
        }
        if let Some(k) = kind {
            let expected = k.dim().pow(def.support as u32);
            if r != expected {
                return Err(Error::DimensionMismatch(format!(
                    "operator `{}` on {} sites of kind {k} needs a {expected}x{expected} matrix",
                    def.name, def.support
                )));
            }
            if def.fermionic && !k.is_fermion() {
                return Err(Error::invalid("fermionic operators are only allowed on Fermion sites"));
            }
        }
        self.user.push(UserOperator { def, kind });
        Ok(())
    }

    /// Number of sites a named operator acts on, if the name is known.
    pub fn arity(&self, name: &str) -> Option<usize> {
        if TWO_SITE_BUILTINS.contains(&name) {
            return Some(2);
        }
        if BUILTIN_NAMES.contains(&name) {
            return Some(1);
        }
        self.user.iter().find(|u| u.def.name == name).map(|u| u.def.support)
    }

    /// Resolve `name` on sites of the given kinds (one per factor).
    pub fn lookup(&self, name: &str, kinds: &[SiteKind]) -> Result<OperatorDef> {
        let unknown = || {
            let ks: Vec<String> = kinds.iter().map(|k| k.to_string()).collect();
            Error::UnknownOperator(format!("{name} on [{}]", ks.join(", ")))
        };
        if let Some(u) = self.user.iter().find(|u| u.def.name == name) {
            if kinds.len() != u.def.support {
                return Err(unknown());
            }
            let dim: usize = kinds.iter().map(|k| k.dim()).product();
            let kind_ok = u.kind.map_or(true, |k| kinds.iter().all(|x| *x == k));
            if !kind_ok || dim != u.def.matrix.nrows() {
                return Err(unknown());
            }
            return Ok(u.def.clone());
        }
        let first = *kinds.first().ok_or_else(unknown)?;
        if !kinds.iter().all(|k| *k == first) {
            return Err(unknown());
        }
        builtin_operators(first)
            .into_iter()
            .find(|d| d.name == name && d.support == kinds.len())
            .ok_or_else(unknown)
    }

    pub fn is_defined_for(&self, name: &str, kind: SiteKind) -> bool {
        self.lookup(name, &[kind]).is_ok()
    }
}
