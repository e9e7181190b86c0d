//! Run configuration: a TOML file with `mesh`, `problem`, `constraint`,
//! `solver`, `schedule` and `output` sections. Parsing is strict. Unknown
//! keys and out-of-range values are collected, and all of them are reported
//! together.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::constraints::{ConstraintSpec, IntegrandH, PointwiseMap, Relation, SetKind};
use crate::continuation::Schedule;
use crate::error::{Error, Result};
use crate::functionals::{Coefficient, ConstantTensor, DensityF, DensityG};
use crate::mesh::Mesh;
use crate::solver::{Problem, SolveConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub dim: usize,
    pub extent: Vec<(f64, f64)>,
    pub cells: Vec<usize>,
}

impl MeshConfig {
    pub fn build(&self) -> Result<Mesh> {
        Mesh::build(self.dim, &self.extent, &self.cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Falls back to `SUPINF_OUT`, then `out`.
    pub dir: Option<PathBuf>,
    pub formats: Vec<String>,
}

impl OutputConfig {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub problem: Problem,
    pub solver: SolveConfig,
    pub schedule: Schedule,
    pub output: OutputConfig,
}

pub const DEFAULT_CELLS: usize = 256;
pub const DEFAULT_STEPS: usize = 6;
const FORMATS: [&str; 2] = ["csv", "field"];

/// Walks one table, consuming keys so leftovers can be reported as unknown.
struct Section<'a> {
    path: String,
    table: Table,
    errs: &'a mut Vec<String>,
}

impl<'a> Section<'a> {
    fn new(path: &str, table: Table, errs: &'a mut Vec<String>) -> Section<'a> {
        Section { path: path.to_string(), table, errs }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn err(&mut self, k: &str, msg: impl std::fmt::Display) {
        let key = self.key(k);
        self.errs.push(format!("`{key}`: {msg}"));
    }

    fn take(&mut self, k: &str) -> Option<Value> {
        self.table.remove(k)
    }

    fn float(&mut self, k: &str) -> Option<f64> {
        match self.take(k)? {
            Value::Float(v) => Some(v),
            Value::Integer(v) => Some(v as f64),
            Value::String(s) if s == "inf" => Some(f64::INFINITY),
            other => {
                self.err(k, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn float_in(&mut self, k: &str, default: f64, ok: impl Fn(f64) -> bool, rule: &str) -> f64 {
        match self.float(k) {
            Some(v) if ok(v) => v,
            Some(v) => {
                self.err(k, format!("{v} is out of range ({rule})"));
                default
            }
            None => default,
        }
    }

    fn uint(&mut self, k: &str) -> Option<u64> {
        match self.take(k)? {
            Value::Integer(v) if v >= 0 => Some(v as u64),
            other => {
                self.err(k, format!("expected a nonnegative integer, got {other}"));
                None
            }
        }
    }

    fn string(&mut self, k: &str) -> Option<String> {
        match self.take(k)? {
            Value::String(s) => Some(s),
            other => {
                self.err(k, format!("expected a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn floats(&mut self, k: &str) -> Option<Vec<f64>> {
        match self.take(k)? {
            Value::Array(a) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Float(x) => out.push(x),
                        Value::Integer(x) => out.push(x as f64),
                        other => {
                            self.err(k, format!("expected numbers, found {}", other.type_str()));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            other => {
                self.err(k, format!("expected an array, got {}", other.type_str()));
                None
            }
        }
    }

    /// A number (constant) or an array (table over the first axis of the mesh).
    fn coefficient(&mut self, k: &str, lo: f64, hi: f64) -> Option<Coefficient> {
        match self.table.get(k) {
            Some(Value::Array(_)) => {
                let values = self.floats(k)?;
                if values.is_empty() {
                    self.err(k, "table must not be empty");
                    return None;
                }
                Some(Coefficient::Table { lo, hi, values })
            }
            Some(_) => self.float(k).map(Coefficient::Constant),
            None => None,
        }
    }

    fn sub(&mut self, k: &str) -> Option<Table> {
        match self.take(k)? {
            Value::Table(t) => Some(t),
            other => {
                self.err(k, format!("expected a table, got {}", other.type_str()));
                None
            }
        }
    }

    fn require(&mut self, k: &str, what: &str) {
        self.err(k, format!("missing ({what})"));
    }

    /// Reports every key not consumed, by its full dotted name.
    fn finish(self) {
        for (k, v) in &self.table {
            unknown(&self.key(k), v, self.errs);
        }
    }
}

fn unknown(key: &str, v: &Value, errs: &mut Vec<String>) {
    match v {
        Value::Table(t) if !t.is_empty() => {
            for (k, v) in t {
                unknown(&format!("{key}.{k}"), v, errs);
            }
        }
        _ => errs.push(format!("unknown key `{key}`")),
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Table = toml::from_str(text).map_err(|e| Error::Config(vec![format!("TOML syntax: {e}")]))?;
    let mut errs = Vec::new();
    let mut top = Section::new("", root, &mut errs);
    let mesh_t = top.sub("mesh").unwrap_or_default();
    let problem_t = top.sub("problem").unwrap_or_default();
    let constraint_v = top.take("constraint");
    let solver_t = top.sub("solver").unwrap_or_default();
    let schedule_t = top.sub("schedule").unwrap_or_default();
    let output_t = top.sub("output").unwrap_or_default();
    top.finish();

    let mesh = parse_mesh(mesh_t, &mut errs);
    let (lo, hi) = mesh.extent.first().copied().unwrap_or((0.0, 1.0));
    let mut problem = parse_problem(problem_t, mesh.dim, lo, hi, &mut errs);
    let constraint_tables: Vec<(String, Table)> = match constraint_v {
        None => Vec::new(),
        Some(Value::Table(t)) => vec![("constraint".into(), t)],
        Some(Value::Array(a)) => a
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| match v {
                Value::Table(t) => Some((format!("constraint[{i}]"), t)),
                _ => {
                    errs.push(format!("`constraint[{i}]`: expected a table"));
                    None
                }
            })
            .collect(),
        Some(other) => {
            errs.push(format!("`constraint`: expected a table or array of tables, got {}", other.type_str()));
            Vec::new()
        }
    };
    for (path, t) in constraint_tables {
        if let Some(spec) = parse_constraint(&path, t, problem.components, lo, hi, &mut errs) {
            problem.constraints.push(spec);
        }
    }
    let solver = parse_solver(solver_t, &mut errs);
    let schedule = parse_schedule(schedule_t, mesh.dim, &mut errs);
    let output = parse_output(output_t, &mut errs);

    if errs.is_empty() {
        if let Ok(m) = mesh.build() {
            if let Err(e) = problem.validate(&m) {
                errs.push(e.to_string());
            }
        }
    }
    if errs.is_empty() {
        Ok(RunConfig { mesh, problem, solver, schedule, output })
    } else {
        Err(Error::Config(errs))
    }
}

fn parse_mesh(t: Table, errs: &mut Vec<String>) -> MeshConfig {
    let mut s = Section::new("mesh", t, errs);
    let dim = match s.uint("dim") {
        Some(d @ 1..=2) => d as usize,
        Some(d) => {
            s.err("dim", format!("{d} is out of range (1 or 2)"));
            1
        }
        None => 1,
    };
    let extent = match s.take("extent") {
        None => vec![(0.0, 1.0); dim],
        Some(v) => {
            let pairs: Option<Vec<(f64, f64)>> = v.as_array().and_then(|a| {
                a.iter()
                    .map(|p| {
                        let p = p.as_array()?;
                        let num = |v: &Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
                        match p.as_slice() {
                            [a, b] => Some((num(a)?, num(b)?)),
                            _ => None,
                        }
                    })
                    .collect()
            });
            match pairs {
                Some(p) if p.len() == dim && p.iter().all(|(a, b)| a.is_finite() && b.is_finite() && a < b) => p,
                _ => {
                    s.err("extent", format!("expected {dim} pairs [lo, hi] with lo < hi"));
                    vec![(0.0, 1.0); dim]
                }
            }
        }
    };
    let cells = match s.take("cells") {
        None => vec![DEFAULT_CELLS; dim],
        Some(Value::Integer(n)) if n >= 2 => vec![n as usize; dim],
        Some(Value::Array(a)) if a.len() == dim && a.iter().all(|v| v.as_integer().is_some_and(|n| n >= 2)) => {
            a.iter().map(|v| v.as_integer().unwrap_or(2) as usize).collect()
        }
        Some(_) => {
            s.err("cells", format!("expected an integer >= 2 or {dim} such integers"));
            vec![DEFAULT_CELLS; dim]
        }
    };
    s.finish();
    MeshConfig { dim, extent, cells }
}

fn parse_problem(t: Table, dim: usize, lo: f64, hi: f64, errs: &mut Vec<String>) -> Problem {
    let mut s = Section::new("problem", t, errs);
    let components = match s.uint("components") {
        Some(n @ 1..=8) => n as usize,
        Some(n) => {
            s.err("components", format!("{n} is out of range (1..=8)"));
            1
        }
        None => 1,
    };
    let f_name = s.string("f").unwrap_or_else(|| "dirichlet".into());
    let coefficient = s.coefficient("coefficient", lo, hi);
    let tensor = s.take("tensor");
    let f = match f_name.as_str() {
        "dirichlet" => DensityF::Dirichlet,
        "gradient_norm" => DensityF::GradientNorm,
        "weighted_dirichlet" => match coefficient {
            Some(c) => DensityF::WeightedDirichlet(c),
            None => {
                s.require("coefficient", "weighted_dirichlet needs a number or table");
                DensityF::Dirichlet
            }
        },
        "tensor" => {
            let rows: Option<Vec<Vec<f64>>> = tensor.as_ref().and_then(|v| {
                v.as_array()?
                    .iter()
                    .map(|r| {
                        r.as_array()?.iter().map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64))).collect()
                    })
                    .collect()
            });
            match rows.map(ConstantTensor::new) {
                Some(Ok(t)) => DensityF::Tensor(t),
                Some(Err(e)) => {
                    s.err("tensor", e);
                    DensityF::Dirichlet
                }
                None => {
                    s.require("tensor", "a square array of numbers");
                    DensityF::Dirichlet
                }
            }
        }
        other => {
            s.err("f", format!("unknown density `{other}` (dirichlet, weighted_dirichlet, tensor, gradient_norm)"));
            DensityF::Dirichlet
        }
    };
    if f_name != "tensor" && tensor.is_some() {
        s.err("tensor", "only used with f = \"tensor\"");
    }
    let g_const = s.float("g_const");
    let g = match s.string("g").as_deref() {
        None => None,
        Some("abs") => Some(DensityG::Abs),
        Some("quad") => Some(DensityG::Quad),
        Some("const") => match g_const {
            Some(c) if c >= 0.0 && c.is_finite() => Some(DensityG::Const(c)),
            Some(c) => {
                s.err("g_const", format!("{c} is out of range (finite, >= 0)"));
                None
            }
            None => {
                s.require("g_const", "g = \"const\" needs its value");
                None
            }
        },
        Some(other) => {
            s.err("g", format!("unknown density `{other}` (abs, quad, const)"));
            None
        }
    };
    let cap = s.float_in("G", f64::INFINITY, |v| v >= 0.0, ">= 0");
    if g.is_none() && cap.is_finite() {
        s.require("g", "a cap G needs a density g");
    }
    let _ = dim;
    s.finish();
    let mut pb = Problem::new(components, f);
    if let Some(g) = g {
        pb = pb.with_cap(g, cap);
    }
    pb
}

fn parse_relation(s: &mut Section, default: Relation) -> Relation {
    match s.string("relation").as_deref() {
        None => default,
        Some("le") | Some("<=") => Relation::Le,
        Some("ge") | Some(">=") => Relation::Ge,
        Some("eq") | Some("=") => Relation::Eq,
        Some(other) => {
            s.err("relation", format!("unknown relation `{other}` (le, ge, eq)"));
            default
        }
    }
}

fn parse_map(s: &mut Section, components: usize, lo: f64, hi: f64) -> Option<PointwiseMap> {
    let map = s.string("map");
    let component = s.uint("component").map(|c| c as usize).unwrap_or(0);
    let height = s.coefficient("height", lo, hi);
    let coeffs = s.floats("coeffs");
    let offset = s.float("offset").unwrap_or(0.0);
    let radius = s.float("radius");
    match map.as_deref() {
        Some("sphere") => Some(PointwiseMap::SphereGap { radius: radius.unwrap_or(1.0) }),
        Some("lower_obstacle") | Some("upper_obstacle") => {
            let Some(height) = height else {
                s.require("height", "obstacles need a height");
                return None;
            };
            Some(if map.as_deref() == Some("lower_obstacle") {
                PointwiseMap::LowerObstacle { component, height }
            } else {
                PointwiseMap::UpperObstacle { component, height }
            })
        }
        Some("linear") => match coeffs {
            Some(c) if c.len() == components => Some(PointwiseMap::Linear { coeffs: c, offset }),
            _ => {
                s.err("coeffs", format!("linear maps need {components} coefficients"));
                None
            }
        },
        Some(other) => {
            s.err("map", format!("unknown map `{other}` (sphere, lower_obstacle, upper_obstacle, linear)"));
            None
        }
        None => {
            s.require("map", "sphere, lower_obstacle, upper_obstacle or linear");
            None
        }
    }
}

fn parse_constraint(
    path: &str,
    t: Table,
    components: usize,
    lo: f64,
    hi: f64,
    errs: &mut Vec<String>,
) -> Option<ConstraintSpec> {
    let mut s = Section::new(path, t, errs);
    let kind = s.string("kind").unwrap_or_else(|| "none".into());
    let spec = match kind.as_str() {
        "none" => None,
        "holonomic" => parse_map(&mut s, components, lo, hi).map(ConstraintSpec::Holonomic),
        "unilateral" => parse_map(&mut s, components, lo, hi).map(ConstraintSpec::Unilateral),
        "inclusion_ball" | "ball" => {
            let r = s.float_in("radius", 1.0, |v| v > 0.0 && v.is_finite(), "finite, > 0");
            Some(ConstraintSpec::Inclusion(SetKind::Ball { radius: r }))
        }
        "inclusion_box" | "box" => {
            let lower = s.floats("lower");
            let upper = s.floats("upper");
            match (lower, upper) {
                (Some(lower), Some(upper)) => Some(ConstraintSpec::Inclusion(SetKind::Box { lower, upper })),
                _ => {
                    s.require("lower", "box constraints need `lower` and `upper` arrays");
                    None
                }
            }
        }
        "isoperimetric" => {
            let h_name = s.string("h").unwrap_or_else(|| "mass".into());
            let bound = s.float("H");
            let relation = parse_relation(&mut s, Relation::Le);
            let h = IntegrandH::from_name(&h_name);
            if h.is_none() {
                s.err("h", format!("unknown integrand `{h_name}`"));
            }
            if bound.is_none() {
                s.require("H", "the integral bound");
            }
            match (h, bound) {
                (Some(h), Some(bound)) if bound.is_finite() => Some(ConstraintSpec::Isoperimetric { h, bound, relation }),
                (Some(_), Some(b)) => {
                    s.err("H", format!("{b} must be finite"));
                    None
                }
                _ => None,
            }
        }
        other => {
            s.err(
                "kind",
                format!("unknown constraint kind `{other}` (none, holonomic, unilateral, inclusion_ball, inclusion_box, isoperimetric)"),
            );
            None
        }
    };
    s.finish();
    spec
}

fn parse_solver(t: Table, errs: &mut Vec<String>) -> SolveConfig {
    let d = SolveConfig::default();
    let mut s = Section::new("solver", t, errs);
    let pos = |v: f64| v > 0.0 && v.is_finite();
    let cfg = SolveConfig {
        inner_tol: s.float_in("inner_tol", d.inner_tol, pos, "> 0"),
        outer_tol: s.float_in("outer_tol", d.outer_tol, pos, "> 0"),
        max_outer: s.uint("max_outer").map_or(d.max_outer, |v| v as usize),
        max_inner: s.uint("max_inner").map_or(d.max_inner, |v| v as usize),
        penalty_init: s.float_in("penalty_init", d.penalty_init, pos, "> 0"),
        penalty_growth: s.float_in("penalty_growth", d.penalty_growth, |v| v > 1.0 && v.is_finite(), "> 1"),
        multiplier_init: s.float_in("multiplier_init", d.multiplier_init, |v| v >= 0.0 && v.is_finite(), ">= 0"),
        seed: s.uint("seed").unwrap_or(d.seed),
        memory: s.uint("memory").map_or(d.memory, |v| v as usize),
    };
    s.finish();
    if let Err(Error::Config(e)) = cfg.validate() {
        errs.extend(e.into_iter().map(|m| format!("solver: {m}")));
    }
    cfg
}

fn parse_schedule(t: Table, dim: usize, errs: &mut Vec<String>) -> Schedule {
    let d = Schedule::default_for(dim, DEFAULT_STEPS);
    let mut s = Section::new("schedule", t, errs);
    let n = dim as f64;
    let p0 = s.float_in("p0", d.p0, |v| v > n && v.is_finite(), &format!("> n = {dim}"));
    let gamma = s.float_in("gamma", d.gamma, |v| v > 1.0 && v.is_finite(), "> 1");
    let steps = match s.uint("steps") {
        Some(0) => {
            s.err("steps", "0 is out of range (>= 1)");
            d.steps
        }
        Some(v) => v as usize,
        None => d.steps,
    };
    s.finish();
    Schedule { p0, gamma, steps }
}

fn parse_output(t: Table, errs: &mut Vec<String>) -> OutputConfig {
    let mut s = Section::new("output", t, errs);
    let dir = s.string("dir").map(PathBuf::from);
    let formats = match s.take("formats") {
        None => FORMATS.iter().map(|f| f.to_string()).collect(),
        Some(Value::Array(a)) => {
            let mut out = Vec::new();
            for v in a {
                match v.as_str() {
                    Some(f) if FORMATS.contains(&f) => out.push(f.to_string()),
                    _ => s.err("formats", format!("unknown format {v} (csv, field)")),
                }
            }
            out
        }
        Some(_) => {
            s.err("formats", "expected an array of strings");
            Vec::new()
        }
    };
    s.finish();
    OutputConfig { dir, formats }
}
