//! Declarative simulation runs.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! name = "dephasing"            # output directory
//!
//! [parameters]                  # numbers visible in every expression
//! n = 40
//! gamma = 1.0
//!
//! [definitions]                 # named expressions, optionally with parameters
//! hamiltonian = "-sum(i=1..n-1, dag(C)(i)C(i+1) + dag(C)(i+1)C(i))"
//! dissipators = "sum(i=1..n, Dissipator(sqrt(4*gamma)*N)(i))"
//!
//! [[phases]]
//! type = "CreateState"
//! rep = "Mixed"                 # or "Pure"
//! system = "Fermion"            # or a list such as ["Qubit", "Boson(5)"]
//! sites = "n"
//! pattern = ["Emp", "Occ"]      # cycled; or `state = "Occ"` / a full list
//!
//! [[phases]]
//! type = "Evolve"
//! duration = 4.0
//! time_step = 0.05
//! evolver = "-im*hamiltonian + dissipators"
//! limits = { cutoff = 1e-30, maxdim = 100 }
//! measures = [
//!     { file = "density.dat", values = ["N"] },
//!     { file = "OSEE.dat", values = ["EE(div(n, 2))"] },
//! ]
//! ```
//!
//! Other phases: `ToMixed`, `Gates` (`gates`, `limits`, `final_measures`),
//! `PartialTrace` (`keep`, 1-based) and `Repeat` (`count` and nested
//! `phases`). A graph state is created with `graph = "complete"` or
//! `graph = [[1, 2], [2, 3]]` instead of a state name.
//!
//! Every measure file starts with `#` header lines and then holds one row per
//! epoch (or per site, or per matrix entry): `t re im`, `t site re im` or
//! `t i j re im`, with one `re im` pair per listed value. The run clock
//! advances by `duration` in `Evolve` phases and by one per `Gates` phase.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::Deserialize;

use crate::dsl::{local_matrix, parse, parse_scalar, OpExpr, ParseContext, Registry, SiteKind};
use crate::error::{Error, Result};
use crate::evolution::{apply_gates_report, evolve, EvolutionPlan, GateLayer};
use crate::measure::{trace, trace_error, MeasureSpec, MeasureValue};
use crate::mpo::{lower_evolver, lower_observable, WVariant};
use crate::state::{graph_state, Rep, State, System};
use crate::tensor::TruncationLimits;

// ---------------------------------------------------------------------------
// Raw schema

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    #[serde(default)]
    definitions: BTreeMap<String, String>,
    phases: Vec<RawPhase>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Int(usize),
    Expr(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGraph {
    Named(String),
    Edges(Vec<(usize, usize)>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimits {
    cutoff: f64,
    maxdim: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasureFile {
    file: String,
    values: Vec<String>,
    #[serde(default)]
    normalize: bool,
}

#[derive(Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum RawPhase {
    CreateState {
        #[serde(default = "mixed")]
        rep: String,
        system: OneOrMany,
        sites: Option<Number>,
        state: Option<OneOrMany>,
        pattern: Option<Vec<String>>,
        graph: Option<RawGraph>,
        limits: Option<RawLimits>,
    },
    ToMixed {},
    Evolve {
        duration: f64,
        time_step: f64,
        order: Option<usize>,
        variant: Option<String>,
        evolver: String,
        limits: RawLimits,
        #[serde(default)]
        measures: Vec<RawMeasureFile>,
        measure_period: Option<usize>,
    },
    Gates {
        name: Option<String>,
        gates: String,
        limits: RawLimits,
        #[serde(default)]
        final_measures: Vec<RawMeasureFile>,
    },
    PartialTrace {
        keep: Vec<usize>,
    },
    Repeat {
        count: usize,
        phases: Vec<RawPhase>,
    },
}

fn mixed() -> String {
    "Mixed".into()
}

// ---------------------------------------------------------------------------
// Validated config

/// How the initial state is built.
#[derive(Clone, Debug)]
pub enum Initial {
    /// One local state name per site.
    Product(Vec<String>),
    /// Graph state with 0-based edges.
    Graph(Vec<(usize, usize)>, TruncationLimits),
}

/// A data file and the values written to it.
#[derive(Clone, Debug)]
pub struct MeasureFile {
    pub file: String,
    pub values: Vec<MeasureSpec>,
    /// Divide operator expectations by the trace.
    pub normalize: bool,
}

#[derive(Clone, Debug)]
pub struct EvolveSpec {
    pub duration: f64,
    pub time_step: f64,
    pub order: usize,
    pub variant: WVariant,
    pub evolver: OpExpr,
    pub limits: TruncationLimits,
    pub measures: Vec<MeasureFile>,
    pub measure_period: usize,
}

#[derive(Clone, Debug)]
pub struct GatesSpec {
    pub name: String,
    pub gates: OpExpr,
    pub limits: TruncationLimits,
    pub final_measures: Vec<MeasureFile>,
}

#[derive(Clone, Debug)]
pub enum Phase {
    CreateState {
        rep: Rep,
        system: System,
        initial: Initial,
    },
    ToMixed,
    Evolve(EvolveSpec),
    Gates(GatesSpec),
    /// 0-based sites to keep.
    PartialTrace(Vec<usize>),
    Repeat(usize, Vec<Phase>),
}

impl Phase {
    fn label(&self) -> &'static str {
        match self {
            Phase::CreateState { .. } => "CreateState",
            Phase::ToMixed => "ToMixed",
            Phase::Evolve(_) => "Evolve",
            Phase::Gates(_) => "Gates",
            Phase::PartialTrace(_) => "PartialTrace",
            Phase::Repeat(..) => "Repeat",
        }
    }
}

/// A parsed and validated simulation.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub name: String,
    pub context: ParseContext,
    pub phases: Vec<Phase>,
    /// The configuration text, copied verbatim into the output directory.
    pub source: String,
}

/// Read and validate a configuration file.
pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parse and validate configuration text.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if raw.name.trim().is_empty() {
        return Err(Error::Config("`name` must not be empty".into()));
    }
    if raw.name.contains(['/', '\\']) || raw.name == "." || raw.name == ".." {
        return Err(Error::Config(format!(
            "`name` must be a plain directory name, got `{}`",
            raw.name
        )));
    }
    if raw.phases.is_empty() {
        return Err(Error::Config("`phases` must not be empty".into()));
    }
    let mut ctx = ParseContext::new(Registry::builtin());
    for (k, v) in &raw.parameters {
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter `{k}` is not finite")));
        }
        ctx = ctx.with_param(k, *v);
    }
    for (head, body) in &raw.definitions {
        ctx.define(head, body)
            .map_err(|e| Error::Config(format!("definition `{head}`: {e}")))?;
    }
    let mut v = Validator {
        ctx,
        current: None,
        files: HashMap::new(),
        next_id: 0,
    };
    let phases = v.phases(&raw.phases, "phases")?;
    Ok(SimConfig {
        name: raw.name,
        context: v.ctx,
        phases,
        source: text.to_string(),
    })
}

struct Validator {
    ctx: ParseContext,
    /// Representation and system the next phase will see.
    current: Option<(Rep, System)>,
    /// Which phase declared each data file.
    files: HashMap<String, usize>,
    next_id: usize,
}

fn limits(raw: &RawLimits) -> Result<TruncationLimits> {
    TruncationLimits::new(raw.cutoff, raw.maxdim)
}

impl Validator {
    fn phases(&mut self, raw: &[RawPhase], path: &str) -> Result<Vec<Phase>> {
        raw.iter()
            .enumerate()
            .map(|(k, p)| {
                let here = format!("{path}[{}]", k + 1);
                self.phase(p, &here).map_err(|e| match e {
                    Error::Config(m) => Error::Config(m),
                    other => Error::Config(format!("{here}: {other}")),
                })
            })
            .collect()
    }

    fn state(&self) -> Result<&(Rep, System)> {
        self.current
            .as_ref()
            .ok_or_else(|| Error::invalid("no state yet; start with CreateState"))
    }

    fn local_ctx(&self) -> ParseContext {
        let mut c = self.ctx.clone();
        c.n_sites = self.current.as_ref().map(|(_, s)| s.len());
        c
    }

    fn number(&self, n: &Number) -> Result<usize> {
        match n {
            Number::Int(k) => Ok(*k),
            Number::Expr(t) => {
                let v = parse_scalar(t, &self.ctx)?;
                if v.im != 0.0 || v.re < 0.0 || v.re.fract() != 0.0 {
                    return Err(Error::invalid(format!("`{t}` is not a nonnegative integer")));
                }
                Ok(v.re as usize)
            }
        }
    }

    fn phase(&mut self, raw: &RawPhase, here: &str) -> Result<Phase> {
        self.next_id += 1;
        let id = self.next_id;
        match raw {
            RawPhase::CreateState {
                rep,
                system,
                sites,
                state,
                pattern,
                graph,
                limits: lim,
            } => {
                let rep = match rep.as_str() {
                    "Pure" => Rep::Pure,
                    "Mixed" => Rep::Mixed,
                    other => return Err(Error::invalid(format!("rep must be Pure or Mixed, got `{other}`"))),
                };
                let kinds: Vec<SiteKind> = match system {
                    OneOrMany::One(k) => {
                        let kind: SiteKind = k.parse()?;
                        let n = sites
                            .as_ref()
                            .ok_or_else(|| Error::invalid("`sites` is required with a single site kind"))?;
                        vec![kind; self.number(n)?]
                    }
                    OneOrMany::Many(ks) => {
                        if sites.is_some() {
                            return Err(Error::invalid("`sites` conflicts with a list of site kinds"));
                        }
                        ks.iter().map(|k| k.parse()).collect::<Result<_>>()?
                    }
                };
                let sys = System::new(kinds)?;
                let n = sys.len();
                let given = state.is_some() as u8 + pattern.is_some() as u8 + graph.is_some() as u8;
                if given != 1 {
                    return Err(Error::invalid("give exactly one of `state`, `pattern`, `graph`"));
                }
                let initial = if let Some(g) = graph {
                    if sys.kinds().iter().any(|k| *k != SiteKind::Qubit) {
                        return Err(Error::invalid("graph states need qubit sites"));
                    }
                    let edges = match g {
                        RawGraph::Named(s) if s == "complete" => crate::state::complete_graph(n),
                        RawGraph::Named(s) => return Err(Error::invalid(format!("unknown graph `{s}`"))),
                        RawGraph::Edges(es) => es
                            .iter()
                            .map(|&(a, b)| {
                                if a == 0 || b == 0 || a > n || b > n || a == b {
                                    Err(Error::invalid(format!("edge ({a}, {b}) invalid for {n} sites")))
                                } else {
                                    Ok((a - 1, b - 1))
                                }
                            })
                            .collect::<Result<_>>()?,
                    };
                    let l = lim
                        .as_ref()
                        .map(limits)
                        .transpose()?
                        .unwrap_or_else(TruncationLimits::exact);
                    Initial::Graph(edges, l)
                } else {
                    if lim.is_some() {
                        return Err(Error::invalid("`limits` only applies to graph states"));
                    }
                    let names: Vec<String> = match (state, pattern) {
                        (Some(OneOrMany::One(s)), _) => vec![s.clone(); n],
                        (Some(OneOrMany::Many(v)), _) => {
                            if v.len() != n {
                                return Err(Error::invalid(format!("{} state names for {n} sites", v.len())));
                            }
                            v.clone()
                        }
                        (None, Some(p)) if !p.is_empty() => (0..n).map(|i| p[i % p.len()].clone()).collect(),
                        _ => return Err(Error::invalid("`pattern` must not be empty")),
                    };
                    for (i, name) in names.iter().enumerate() {
                        let st = sys.kind(i).local_state(name)?;
                        if matches!(st, crate::dsl::LocalState::Density(_)) && rep == Rep::Pure {
                            return Err(Error::invalid(format!("`{name}` needs a mixed representation")));
                        }
                    }
                    Initial::Product(names)
                };
                self.current = Some((rep, sys.clone()));
                Ok(Phase::CreateState {
                    rep,
                    system: sys,
                    initial,
                })
            }
            RawPhase::ToMixed {} => {
                let (_, sys) = self.state()?.clone();
                self.current = Some((Rep::Mixed, sys));
                Ok(Phase::ToMixed)
            }
            RawPhase::Evolve {
                duration,
                time_step,
                order,
                variant,
                evolver,
                limits: lim,
                measures,
                measure_period,
            } => {
                let (rep, sys) = self.state()?.clone();
                let ctx = self.local_ctx();
                let e = parse(evolver, &ctx).map_err(|e| Error::Config(format!("{here}.evolver: {e}")))?;
                let ts = lower_evolver(&e, &sys, rep, &ctx.registry)
                    .map_err(|e| Error::Config(format!("{here}.evolver: {e}")))?;
                let spec = EvolveSpec {
                    duration: *duration,
                    time_step: *time_step,
                    order: order.unwrap_or(4),
                    variant: variant.as_deref().unwrap_or("WII").parse()?,
                    evolver: e,
                    limits: limits(lim)?,
                    measures: self.measure_files(measures, id, &format!("{here}.measures"))?,
                    measure_period: measure_period.unwrap_or(1),
                };
                // checks duration, step, order and period
                let mut plan = EvolutionPlan::new(ts, spec.duration, spec.time_step, spec.limits);
                plan.order = spec.order;
                plan.measure_period = spec.measure_period;
                evolve_check(&plan)?;
                Ok(Phase::Evolve(spec))
            }
            RawPhase::Gates {
                name,
                gates,
                limits: lim,
                final_measures,
            } => {
                let (rep, sys) = self.state()?.clone();
                let ctx = self.local_ctx();
                let g = parse(gates, &ctx).map_err(|e| Error::Config(format!("{here}.gates: {e}")))?;
                let l = limits(lim)?;
                let layer = GateLayer::new(&g, &sys, &ctx.registry, l)
                    .map_err(|e| Error::Config(format!("{here}.gates: {e}")))?;
                if rep == Rep::Pure
                    && layer
                        .factors
                        .iter()
                        .any(|f| matches!(f, crate::evolution::GateFactor::Channel { .. }))
                {
                    return Err(Error::Config(format!("{here}.gates: channel on a pure state")));
                }
                Ok(Phase::Gates(GatesSpec {
                    name: name.clone().unwrap_or_else(|| "gates".into()),
                    gates: g,
                    limits: l,
                    final_measures: self.measure_files(final_measures, id, &format!("{here}.final_measures"))?,
                }))
            }
            RawPhase::PartialTrace { keep } => {
                let (rep, sys) = self.state()?.clone();
                if rep != Rep::Mixed {
                    return Err(Error::invalid("PartialTrace needs a mixed state"));
                }
                let mut zero = Vec::with_capacity(keep.len());
                for &k in keep {
                    if k == 0 || k > sys.len() {
                        return Err(Error::invalid(format!("site {k} outside 1..{}", sys.len())));
                    }
                    zero.push(k - 1);
                }
                let mut sorted = zero.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != zero.len() || sorted.is_empty() {
                    return Err(Error::invalid("`keep` must list distinct sites"));
                }
                let kinds = sorted.iter().map(|&i| sys.kind(i)).collect();
                self.current = Some((rep, System::new(kinds)?));
                Ok(Phase::PartialTrace(sorted))
            }
            RawPhase::Repeat { count, phases } => {
                if phases.is_empty() {
                    return Err(Error::invalid("Repeat needs phases"));
                }
                let before = self.current.clone();
                let inner = self.phases(phases, &format!("{here}.phases"))?;
                if *count > 1
                    && self.current.as_ref().map(|(r, s)| (*r, s.kinds().to_vec()))
                        != before.as_ref().map(|(r, s)| (*r, s.kinds().to_vec()))
                {
                    return Err(Error::invalid("repeated phases must leave the system unchanged"));
                }
                if *count == 0 {
                    self.current = before;
                }
                Ok(Phase::Repeat(*count, inner))
            }
        }
    }

    fn measure_files(&mut self, raw: &[RawMeasureFile], id: usize, here: &str) -> Result<Vec<MeasureFile>> {
        let (rep, sys) = self.state()?.clone();
        let ctx = self.local_ctx();
        let mut out = Vec::with_capacity(raw.len());
        for f in raw {
            if f.file.is_empty() || f.file.contains(['/', '\\']) || f.file == "log" || f.file == "config.copy" {
                return Err(Error::Config(format!("{here}: invalid file name `{}`", f.file)));
            }
            if let Some(&owner) = self.files.get(&f.file) {
                if owner != id {
                    return Err(Error::Config(format!("{here}: file `{}` declared twice", f.file)));
                }
                return Err(Error::Config(format!("{here}: file `{}` listed twice", f.file)));
            }
            self.files.insert(f.file.clone(), id);
            if f.values.is_empty() {
                return Err(Error::Config(format!("{here}: `{}` has no values", f.file)));
            }
            let mut values = Vec::with_capacity(f.values.len());
            for text in &f.values {
                let spec = MeasureSpec::parse(text, &ctx)
                    .and_then(|m| check_measure(&m, &sys, rep, &ctx.registry).map(|_| m))
                    .map_err(|e| Error::Config(format!("{here}: `{}` value `{text}`: {e}", f.file)))?;
                values.push(spec);
            }
            let shape = shape_of(&values[0]);
            if values.iter().any(|v| shape_of(v) != shape) {
                return Err(Error::Config(format!(
                    "{here}: `{}` mixes values of different shapes",
                    f.file
                )));
            }
            out.push(MeasureFile {
                file: f.file.clone(),
                values,
                normalize: f.normalize,
            });
        }
        Ok(out)
    }
}

fn evolve_check(plan: &EvolutionPlan) -> Result<()> {
    if !(plan.time_step.is_finite() && plan.time_step > 0.0) {
        return Err(Error::invalid("time_step must be positive"));
    }
    if !(plan.duration.is_finite() && plan.duration >= 0.0) {
        return Err(Error::invalid("duration must be nonnegative"));
    }
    if plan.measure_period == 0 {
        return Err(Error::invalid("measure_period must be at least 1"));
    }
    crate::evolution::substep_coefficients(plan.order).map(|_| ())
}

fn check_measure(m: &MeasureSpec, sys: &System, rep: Rep, registry: &Registry) -> Result<()> {
    let defined_somewhere = |e: &OpExpr| -> Result<()> {
        let ok = sys.kinds().iter().any(|k| local_matrix(e, &[*k], registry).is_ok());
        if ok {
            Ok(())
        } else {
            local_matrix(e, &[sys.kind(0)], registry).map(|_| ())
        }
    };
    match m {
        MeasureSpec::Expr(e) => lower_observable(e, sys, rep, registry).map(|_| ()),
        MeasureSpec::Broadcast(e) => defined_somewhere(e),
        MeasureSpec::Correlation(a, b) => {
            defined_somewhere(a)?;
            defined_somewhere(b)
        }
        MeasureSpec::EE(k) if *k >= sys.len() => {
            Err(Error::invalid(format!("EE({k}) needs a bond in 1..{}", sys.len() - 1)))
        }
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Shape {
    Scalar,
    Sites,
    Matrix,
}

fn shape_of(m: &MeasureSpec) -> Shape {
    match m {
        MeasureSpec::Broadcast(_) | MeasureSpec::Linkdim => Shape::Sites,
        MeasureSpec::Correlation(..) => Shape::Matrix,
        _ => Shape::Scalar,
    }
}

// ---------------------------------------------------------------------------
// Running

/// Bookkeeping of one measured epoch.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub phase: String,
    pub time: f64,
    pub max_linkdim: usize,
    pub maxdim: usize,
    pub trace_error: f64,
}

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
    pub state: Option<State>,
}

struct Log {
    out: BufWriter<File>,
}

impl Log {
    fn line(&mut self, msg: &str) {
        log::info!("{msg}");
        // the log is best effort; a failing write must not mask the run's result
        let _ = writeln!(self.out, "{msg}");
    }
}

/// Writes rows of measured values with a `#` header.
pub struct DataFile {
    out: BufWriter<File>,
    path: PathBuf,
}

impl DataFile {
    /// Create `path` and write the header lines.
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        for h in header {
            writeln!(out, "# {h}")?;
        }
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    /// Write one row of numbers; non-finite values are rejected.
    pub fn row(&mut self, leading: &[String], values: &[C64]) -> Result<()> {
        if let Some(bad) = values.iter().find(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!(
                "{} row {} has value {bad}",
                self.path.display(),
                leading.join(" ")
            )));
        }
        let mut line = leading.join(" ");
        for v in values {
            let _ = write!(line, " {:.16e} {:.16e}", v.re, v.im);
        }
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn fmt_time(t: f64) -> String {
    format!("{t:.10e}")
}

struct Runner<'a> {
    cfg: &'a SimConfig,
    dir: PathBuf,
    log: Log,
    files: BTreeMap<String, DataFile>,
    clock: f64,
    epochs: Vec<EpochRecord>,
    warnings: Vec<String>,
}

impl Runner<'_> {
    fn file(&mut self, spec: &MeasureFile) -> Result<&mut DataFile> {
        if !self.files.contains_key(&spec.file) {
            let shape = shape_of(&spec.values[0]);
            let lead = match shape {
                Shape::Scalar => "t",
                Shape::Sites => "t site",
                Shape::Matrix => "t i j",
            };
            let mut cols = lead.to_string();
            for v in &spec.values {
                let _ = write!(cols, " re[{v}] im[{v}]");
            }
            let header = vec![
                format!("run: {}", self.cfg.name),
                format!(
                    "values: {}",
                    spec.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
                ),
                format!("normalized: {}", spec.normalize),
                format!("columns: {cols}"),
            ];
            let df = DataFile::create(&self.dir.join(&spec.file), &header)?;
            self.files.insert(spec.file.clone(), df);
        }
        Ok(self.files.get_mut(&spec.file).expect("just inserted"))
    }

    fn write_measures(&mut self, files: &[MeasureFile], s: &State, time: f64) -> Result<()> {
        let registry = &self.cfg.context.registry;
        for spec in files {
            let tr = if spec.normalize { trace(s) } else { C64::new(1.0, 0.0) };
            let mut vals = Vec::with_capacity(spec.values.len());
            for v in &spec.values {
                let raw = v.measure(s, registry)?;
                let scale = matches!(
                    v,
                    MeasureSpec::Expr(_) | MeasureSpec::Broadcast(_) | MeasureSpec::Correlation(..)
                );
                vals.push(if scale && spec.normalize { divide(raw, tr) } else { raw });
            }
            let t = fmt_time(time);
            let df = self.file(spec)?;
            match &vals[0] {
                MeasureValue::Scalar(_) => {
                    let row: Vec<C64> = vals.iter().map(|v| as_scalar(v)).collect();
                    df.row(&[t], &row)?;
                }
                MeasureValue::Sites(_) | MeasureValue::Bonds(_) => {
                    let cols: Vec<Vec<Option<C64>>> = vals.iter().map(as_sites).collect();
                    for i in 0..cols[0].len() {
                        let row: Option<Vec<C64>> = cols.iter().map(|c| c.get(i).copied().flatten()).collect();
                        if let Some(row) = row {
                            df.row(&[t.clone(), (i + 1).to_string()], &row)?;
                        }
                    }
                }
                MeasureValue::Matrix(m0) => {
                    let (r, c) = m0.dim();
                    for i in 0..r {
                        for j in 0..c {
                            let row: Vec<C64> = vals
                                .iter()
                                .map(|v| match v {
                                    MeasureValue::Matrix(m) => m[[i, j]],
                                    _ => unreachable!("shapes checked at load"),
                                })
                                .collect();
                            df.row(&[t.clone(), (i + 1).to_string(), (j + 1).to_string()], &row)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, phase: &str, time: f64, s: &State, maxdim: usize, discarded: Option<f64>) {
        let rec = EpochRecord {
            phase: phase.to_string(),
            time,
            max_linkdim: s.max_bond_dim(),
            maxdim,
            trace_error: trace_error(s),
        };
        let mut line = format!(
            "  t = {:.6} maxlinkdim = {} maxdim = {} trace_error = {:.3e}",
            rec.time, rec.max_linkdim, rec.maxdim, rec.trace_error
        );
        if let Some(d) = discarded {
            let _ = write!(line, " discarded = {d:.3e}");
        }
        self.log.line(&line);
        self.epochs.push(rec);
    }

    fn phases(&mut self, phases: &[Phase], mut state: Option<State>, depth: usize) -> Result<Option<State>> {
        for p in phases {
            let indent = "  ".repeat(depth);
            self.log
                .line(&format!("{indent}phase {} at t = {:.6}", p.label(), self.clock));
            let start = Instant::now();
            state = Some(self.phase(p, state, depth)?);
            self.log.line(&format!(
                "{indent}phase {} done in {:.3} s",
                p.label(),
                start.elapsed().as_secs_f64()
            ));
        }
        Ok(state)
    }

    fn phase(&mut self, p: &Phase, state: Option<State>, depth: usize) -> Result<State> {
        let need = |s: Option<State>| s.ok_or_else(|| Error::invalid("no state"));
        match p {
            Phase::CreateState { rep, system, initial } => match initial {
                Initial::Product(names) => {
                    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                    State::product(*rep, system, &refs)
                }
                Initial::Graph(edges, l) => graph_state(*rep, system.len(), edges, l),
            },
            Phase::ToMixed => {
                let s = need(state)?;
                match s.rep() {
                    Rep::Mixed => Ok(s),
                    Rep::Pure => s.mix(),
                }
            }
            Phase::PartialTrace(keep) => need(state)?.partial_trace(keep),
            Phase::Evolve(spec) => {
                let s = need(state)?;
                let ts = lower_evolver(&spec.evolver, s.system(), s.rep(), &self.cfg.context.registry)?;
                let mut plan = EvolutionPlan::new(ts, spec.duration, spec.time_step, spec.limits);
                plan.order = spec.order;
                plan.variant = spec.variant;
                plan.measure_period = spec.measure_period;
                let t0 = self.clock;
                let out = evolve(&s, &plan, |ep| {
                    let t = t0 + ep.time;
                    self.write_measures(&spec.measures, ep.state, t)?;
                    self.record("Evolve", t, ep.state, spec.limits.maxdim, Some(ep.discarded));
                    Ok(())
                })?;
                self.clock = t0 + spec.duration;
                Ok(out)
            }
            Phase::Gates(spec) => {
                let s = need(state)?;
                let layer = GateLayer::new(&spec.gates, s.system(), &self.cfg.context.registry, spec.limits)?;
                for w in &layer.warnings {
                    self.log.line(&format!("warning: {}: {w}", spec.name));
                    self.warnings.push(w.clone());
                }
                let (out, disc) = apply_gates_report(&s, &layer)?;
                self.clock += 1.0;
                self.write_measures(&spec.final_measures, &out, self.clock)?;
                self.record(&spec.name, self.clock, &out, spec.limits.maxdim, Some(disc));
                Ok(out)
            }
            Phase::Repeat(count, inner) => {
                let mut s = state;
                for k in 0..*count {
                    log::debug!("repeat {}/{count}", k + 1);
                    s = self.phases(inner, s, depth + 1)?;
                }
                need(s)
            }
        }
    }
}

fn as_scalar(v: &MeasureValue) -> C64 {
    match v {
        MeasureValue::Scalar(c) => *c,
        _ => unreachable!("shapes checked at load"),
    }
}

fn as_sites(v: &MeasureValue) -> Vec<Option<C64>> {
    match v {
        MeasureValue::Sites(x) => x.clone(),
        MeasureValue::Bonds(b) => b.iter().map(|&d| Some(C64::new(d as f64, 0.0))).collect(),
        _ => unreachable!("shapes checked at load"),
    }
}

fn divide(v: MeasureValue, tr: C64) -> MeasureValue {
    match v {
        MeasureValue::Scalar(c) => MeasureValue::Scalar(c / tr),
        MeasureValue::Sites(x) => MeasureValue::Sites(x.into_iter().map(|c| c.map(|c| c / tr)).collect()),
        MeasureValue::Matrix(m) => MeasureValue::Matrix(m.mapv(|c| c / tr)),
        other => other,
    }
}

/// Execute `cfg` inside `out_root/<name>/`.
///
/// Data files and the log are flushed even when a phase fails; the error is
/// returned afterwards.
pub fn run(cfg: &SimConfig, out_root: &Path) -> Result<RunReport> {
    let dir = out_root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.copy"), &cfg.source)?;
    let log = Log {
        out: BufWriter::new(File::create(dir.join("log"))?),
    };
    let mut runner = Runner {
        cfg,
        dir: dir.clone(),
        log,
        files: BTreeMap::new(),
        clock: 0.0,
        epochs: Vec::new(),
        warnings: Vec::new(),
    };
    runner.log.line(&format!("run `{}`", cfg.name));
    let start = Instant::now();
    let result = runner.phases(&cfg.phases, None, 0);
    let mut flush_err = None;
    for f in runner.files.values_mut() {
        if let Err(e) = f.flush() {
            flush_err.get_or_insert(e);
        }
    }
    match &result {
        Ok(_) => runner
            .log
            .line(&format!("finished in {:.3} s", start.elapsed().as_secs_f64())),
        Err(e) => runner.log.line(&format!("error: {e}")),
    }
    let _ = runner.log.out.flush();
    let state = result?;
    if let Some(e) = flush_err {
        return Err(e);
    }
    Ok(RunReport {
        files: runner.files.keys().map(|f| dir.join(f)).collect(),
        dir,
        epochs: runner.epochs,
        warnings: runner.warnings,
        state,
    })
}

/// Human-readable outline of a configuration (used by `--dry-run`).
pub fn describe(cfg: &SimConfig) -> String {
    fn go(out: &mut String, phases: &[Phase], depth: usize) {
        for p in phases {
            let pad = "  ".repeat(depth);
            let _ = match p {
                Phase::CreateState { rep, system, initial } => {
                    let init = match initial {
                        Initial::Product(_) => "product".to_string(),
                        Initial::Graph(e, _) => format!("graph with {} edges", e.len()),
                    };
                    writeln!(out, "{pad}CreateState {rep} {} sites, {init}", system.len())
                }
                Phase::Evolve(e) => writeln!(
                    out,
                    "{pad}Evolve duration {} step {} order {} {:?} maxdim {} files [{}]",
                    e.duration,
                    e.time_step,
                    e.order,
                    e.variant,
                    e.limits.maxdim,
                    e.measures
                        .iter()
                        .map(|m| m.file.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                Phase::Gates(g) => writeln!(out, "{pad}Gates {} maxdim {}", g.name, g.limits.maxdim),
                Phase::Repeat(n, inner) => {
                    let r = writeln!(out, "{pad}Repeat {n}x");
                    go(out, inner, depth + 1);
                    r
                }
                other => writeln!(out, "{pad}{}", other.label()),
            };
        }
    }
    let mut out = format!("{}\n", cfg.name);
    go(&mut out, &cfg.phases, 1);
    out
}
