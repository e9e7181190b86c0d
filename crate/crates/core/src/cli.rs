//! Command-line front end: `solve`, `sweep`, `check` and `oracle`.
//!
//! Exit status is 0 when every invariant holds, 1 when a check fails and 2
//! when the run could not be carried out (bad config, infeasible problem,
//! I/O). In the last two cases a `failures.json` list is written next to the
//! other artifacts when an output directory is known.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use crate::config::{self, RunConfig};
use crate::constraints::{self, ConstraintSpec, IntegrandH, Relation};
use crate::continuation::{self, ContinuationTrace};
use crate::error::{Error, Result};
use crate::functionals::{DensityF, DensityG};
use crate::kkt::{self, Tolerances};
use crate::mesh::{Field, Mesh};
use crate::oracle::{self, OracleProblem, SearchSpace};
use crate::solver::{self, Check, Problem, RawMultipliers, SolveState, WarmStart};

#[derive(Debug, Parser)]
#[command(name = "supinf", version, about = "Lp continuation for constrained supremal problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve at a single exponent and dump the state.
    Solve(SolveArgs),
    /// Run the continuation schedule of one or more configs.
    Sweep(SweepArgs),
    /// Recompute residuals and identities from a dumped state.
    Check(CheckArgs),
    /// Print certified reference values.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Exponent; defaults to the schedule's `p0`.
    #[arg(long)]
    pub p: Option<f64>,
    /// Field dump used as the starting point.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    #[arg(long, env = "SUPINF_OUT")]
    pub out: Option<PathBuf>,
    /// Write `wall_ms = 0` so outputs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub config: Vec<PathBuf>,
    #[arg(long, env = "SUPINF_OUT")]
    pub out: Option<PathBuf>,
    /// Independent configs run in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub state: PathBuf,
    /// Defaults to 10 * solver.inner_tol of the dumped config.
    #[arg(long)]
    pub kkt_tol: Option<f64>,
    #[arg(long, default_value_t = 1e-12)]
    pub mass_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub slack_tol: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// One of the names listed by `--case all`, or `all`.
    #[arg(long)]
    pub case: String,
    /// Exponent for the brute-force cases.
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub check: String,
    pub detail: String,
}

impl Failure {
    fn new(check: impl Into<String>, detail: impl Into<String>) -> Failure {
        Failure { check: check.into(), detail: detail.into() }
    }
}

struct Outcome {
    dir: Option<PathBuf>,
    failures: Vec<Failure>,
}

pub const STATE_HEADER: [&str; 10] =
    ["p", "F_p", "G_p", "mu", "psi_norm", "kkt_res", "slack", "feasibility", "outer_iters", "wall_ms"];

pub const TRACE_HEADER: [&str; 19] = [
    "j",
    "p",
    "F_p",
    "F_inf_of_up",
    "G_p",
    "mu",
    "Lambda",
    "M",
    "psi_norm",
    "kkt_res",
    "slack",
    "sigma_mass",
    "tau_mass",
    "pairing_1",
    "pairing_x",
    "pairing_x2",
    "pairing_bump",
    "outer_iters",
    "wall_ms",
];

pub const ORACLE_CASES: [&str; 6] = ["lp_parabola", "p2_parabola", "triangle", "trapezoid", "tiny_eq", "tiny_cap"];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let (command, dir_hint) = match &cli.command {
        Command::Solve(a) => ("solve", a.out.clone()),
        Command::Sweep(a) => ("sweep", a.out.clone()),
        Command::Check(a) => ("check", Some(a.state.clone())),
        Command::Oracle(_) => ("oracle", None),
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
        Command::Oracle(a) => run_oracle(a),
    };
    let (code, dir, failures) = match result {
        Ok(o) if o.failures.is_empty() => return 0,
        Ok(o) => (1, o.dir, o.failures),
        Err(e) => {
            let kind = match e {
                Error::Infeasible(_) => "compatibility",
                Error::Config(_) => "config",
                _ => "error",
            };
            (2, dir_hint, vec![Failure::new(kind, e.to_string())])
        }
    };
    for f in &failures {
        eprintln!("FAIL {}: {}", f.check, f.detail);
    }
    if let Some(dir) = dir.filter(|d| d.is_dir()) {
        if let Err(e) = write_failures(&dir, command, &failures) {
            eprintln!("could not write failures.json: {e}");
        }
    }
    code
}

fn write_failures(dir: &Path, command: &str, failures: &[Failure]) -> Result<()> {
    let list: Vec<_> =
        failures.iter().map(|f| serde_json::json!({ "check": f.check, "detail": f.detail })).collect();
    let doc = serde_json::json!({ "command": command, "failures": list });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.into()))?;
    fs::write(dir.join("failures.json"), text + "\n")?;
    Ok(())
}

fn out_dir(flag: Option<&PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.cloned().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path) -> Result<(String, RunConfig, Mesh)> {
    let text = fs::read_to_string(path)?;
    let cfg = config::parse_config_str(&text)?;
    let mesh = cfg.mesh.build()?;
    Ok((text, cfg, mesh))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn state_row(s: &SolveState, timing: bool) -> Vec<String> {
    vec![
        num(s.p),
        num(s.f_p),
        num(s.g_p),
        num(s.raw.mu),
        num(s.rescaled.psi_norm),
        num(s.kkt.residual),
        num(s.slack),
        num(s.feasibility),
        s.outer_iters.to_string(),
        num(if timing { s.wall_ms } else { 0.0 }),
    ]
}

fn multipliers_text(raw: &RawMultipliers) -> String {
    let mut s = String::from("# supinf-multipliers\n");
    for (k, v) in [
        ("lambda", raw.lambda),
        ("mu", raw.mu),
        ("objective_scale", raw.objective_scale),
        ("cap_scale", raw.cap_scale),
    ] {
        s += &format!("{k} {}\n", num(v));
    }
    for b in &raw.psi.blocks {
        let values: Vec<String> = b.values.iter().map(|v| num(*v)).collect();
        s += &format!("psi {} {}\n", values.len(), values.join(" "));
    }
    s
}

/// Reads `multipliers.txt`; `psi` blocks are matched to the constraint
/// layout of `problem` at `field`.
fn parse_multipliers(text: &str, problem: &Problem, mesh: &Mesh, field: &Field) -> Result<RawMultipliers> {
    let bad = |m: String| Error::FieldFormat(format!("multipliers.txt: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("# supinf-multipliers") {
        return Err(bad("missing header".into()));
    }
    let mut scalars = HashMap::new();
    let mut blocks = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let mut tok = line.split_whitespace();
        let key = tok.next().unwrap_or_default();
        let vals: std::result::Result<Vec<f64>, _> = tok.map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| bad(format!("{line}: {e}")))?;
        if key == "psi" {
            match vals.split_first() {
                Some((n, rest)) if *n as usize == rest.len() => blocks.push(rest.to_vec()),
                _ => return Err(bad(format!("bad psi line: {line}"))),
            }
        } else if vals.len() == 1 {
            scalars.insert(key.to_string(), vals[0]);
        } else {
            return Err(bad(format!("bad line: {line}")));
        }
    }
    let get = |k: &str| scalars.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
    let rows = constraints::underlying_rows(&problem.constraints, mesh, &mesh.sample(field)?)?;
    let mut psi = rows.zeros_like();
    if psi.blocks.len() != blocks.len() {
        return Err(Error::KindMismatch(format!("{} psi blocks for {} constraint blocks", blocks.len(), psi.blocks.len())));
    }
    for (b, v) in psi.blocks.iter_mut().zip(blocks) {
        if b.values.len() != v.len() {
            return Err(Error::KindMismatch(format!("psi block of {} values, expected {}", v.len(), b.values.len())));
        }
        b.values = v;
    }
    Ok(RawMultipliers {
        lambda: get("lambda")?,
        mu: get("mu")?,
        psi,
        objective_scale: get("objective_scale")?,
        cap_scale: get("cap_scale")?,
    })
}

fn write_state(dir: &Path, cfg: &RunConfig, text: &str, mesh: &Mesh, s: &SolveState, timing: bool) -> Result<()> {
    if cfg.output.wants("csv") {
        let mut w = csv_writer(&dir.join("state.csv"))?;
        w.write_record(STATE_HEADER).map_err(csv_err)?;
        w.write_record(state_row(s, timing)).map_err(csv_err)?;
        w.flush()?;
    }
    if cfg.output.wants("field") {
        fs::write(dir.join("u.field"), s.field.to_dump(mesh))?;
    }
    fs::write(dir.join("multipliers.txt"), multipliers_text(&s.raw))?;
    fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn check_failures(checks: &[Check]) -> Vec<Failure> {
    checks.iter().filter(|c| !c.passed).map(|c| Failure::new(&c.name, &c.detail)).collect()
}

fn solve(a: &SolveArgs) -> Result<Outcome> {
    let (text, cfg, mesh) = load(&a.config)?;
    let dir = out_dir(a.out.as_ref(), &cfg);
    fs::create_dir_all(&dir)?;
    let p = a.p.unwrap_or(cfg.schedule.p0);
    let field = match &a.warm {
        Some(path) => Some(Field::from_dump(&fs::read_to_string(path)?, &mesh)?),
        None => None,
    };
    if let Some(f) = &field {
        let (f_p, g_p) = solver::energies(&cfg.problem, &mesh, f, p)?;
        println!("warm field: F_p = {}, G_p = {}", num(f_p), num(g_p));
    }
    let warm = WarmStart { field, ..WarmStart::default() };
    let mut state = solver::solve_p(&cfg.problem, &mesh, p, &cfg.solver, &warm)?;
    let tol = Tolerances { kkt: 10.0 * cfg.solver.inner_tol, ..Tolerances::default() };
    state.checks.extend(kkt::diagnostics(&state, &cfg.problem, &mesh, &tol)?);
    write_state(&dir, &cfg, &text, &mesh, &state, !a.no_timing)?;
    println!(
        "p = {}  F_p = {}  G_p = {}  kkt = {:.3e}  outer = {}  converged = {}",
        state.p, num(state.f_p), num(state.g_p), state.kkt.residual, state.outer_iters, state.converged
    );
    Ok(Outcome { failures: check_failures(&state.checks), dir: Some(dir) })
}

fn write_trace(dir: &Path, trace: &ContinuationTrace, timing: bool) -> Result<()> {
    let mut w = csv_writer(&dir.join("trace.csv"))?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in &trace.records {
        let mut row = vec![r.j.to_string()];
        row.extend(
            [
                r.p,
                r.f_p,
                r.f_inf_of_up,
                r.g_p,
                r.mu,
                r.lambda,
                r.m,
                r.psi_norm,
                r.kkt_res,
                r.slack,
                r.sigma.mass(),
                r.tau.mass(),
            ]
            .map(num),
        );
        row.extend(r.pairings.map(num));
        row.push(r.outer_iters.to_string());
        row.push(num(if timing { r.wall_ms } else { 0.0 }));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn sweep_one(path: &Path, dir: &Path, timing: bool) -> Result<Vec<Failure>> {
    let (text, cfg, mesh) = load(path)?;
    fs::create_dir_all(dir)?;
    let trace = continuation::run_schedule(&cfg.problem, &mesh, &cfg.schedule, &cfg.solver)?;
    write_trace(dir, &trace, timing)?;
    if let Some(last) = trace.states.last() {
        write_state(dir, &cfg, &text, &mesh, last, timing)?;
    }
    for r in &trace.records {
        println!("{}: p = {:<8} F_p = {}  M = {:.3e}  kkt = {:.3e}", path.display(), r.p, num(r.f_p), r.m, r.kkt_res);
    }
    let mut failures: Vec<Failure> = trace.flags.iter().map(|f| Failure::new("trace", f)).collect();
    if let Some(why) = &trace.aborted {
        failures.push(Failure::new("aborted", why));
    }
    Ok(failures)
}

fn sweep(a: &SweepArgs) -> Result<Outcome> {
    let root = match &a.out {
        Some(d) => d.clone(),
        None => load(&a.config[0]).map(|(_, cfg, _)| out_dir(None, &cfg))?,
    };
    let dirs: Vec<PathBuf> = if a.config.len() == 1 {
        vec![root.clone()]
    } else {
        a.config
            .iter()
            .enumerate()
            .map(|(i, c)| root.join(c.file_stem().map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned())))
            .collect()
    };
    fs::create_dir_all(&root)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<Failure>>>>> = Mutex::new((0..dirs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..a.jobs.clamp(1, dirs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= dirs.len() {
                    break;
                }
                let r = sweep_one(&a.config[i], &dirs[i], !a.no_timing);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut failures = Vec::new();
    let results = results.into_inner().expect("results lock");
    for (i, r) in results.into_iter().enumerate() {
        let name = a.config[i].display().to_string();
        match r.expect("every job ran") {
            Ok(f) => failures.extend(f.into_iter().map(|f| Failure::new(format!("{name}: {}", f.check), f.detail))),
            Err(e) if a.config.len() == 1 => return Err(e),
            Err(e) => failures.push(Failure::new(format!("{name}: error"), e.to_string())),
        }
    }
    Ok(Outcome { failures, dir: Some(root) })
}

fn read_state_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let row = r
        .records()
        .next()
        .ok_or_else(|| Error::FieldFormat("state.csv has no data row".into()))?
        .map_err(csv_err)?;
    header
        .iter()
        .zip(row.iter())
        .map(|(k, v)| {
            v.parse::<f64>()
                .map(|x| (k.to_string(), x))
                .map_err(|e| Error::FieldFormat(format!("state.csv `{k}`: {e}")))
        })
        .collect()
}

fn check(a: &CheckArgs) -> Result<Outcome> {
    let dir = &a.state;
    let (_, cfg, mesh) = load(&dir.join("config.toml"))?;
    let recorded = read_state_csv(&dir.join("state.csv"))?;
    let field = Field::from_dump(&fs::read_to_string(dir.join("u.field"))?, &mesh)?;
    let pb = &cfg.problem;
    let rec = |k: &str| recorded.get(k).copied().ok_or_else(|| Error::FieldFormat(format!("state.csv lacks `{k}`")));
    let p = rec("p")?;
    let (f_p, g_p) = solver::energies(pb, &mesh, &field, p)?;
    let mut checks = Vec::new();
    for (name, ours, theirs) in [("F_p_roundtrip", f_p, rec("F_p")?), ("G_p_roundtrip", g_p, rec("G_p")?)] {
        let gap = (ours - theirs).abs();
        checks.push(Check::new(
            name,
            gap <= 1e-14 * ours.abs().max(1.0),
            format!("recomputed {}, recorded {}", num(ours), num(theirs)),
        ));
    }
    let s = mesh.sample(&field)?;
    let violation = constraints::underlying_rows(&pb.constraints, &mesh, &s)?.violation();
    let feasibility = constraints::eval_Q(&pb.constraints, &field, &mesh)?.norm(&mesh);
    let tol = cfg.solver.outer_tol;
    checks.push(Check::new(
        "feasibility",
        violation <= tol && feasibility <= tol,
        format!("row violation {violation:.3e}, |Q| = {feasibility:.3e}"),
    ));
    checks.push(Check::new("cap", g_p - pb.cap <= tol, format!("G_p - G = {:.3e}", g_p - pb.cap)));
    let raw = parse_multipliers(&fs::read_to_string(dir.join("multipliers.txt"))?, pb, &mesh, &field)?;
    let rescaled = kkt::rescale(&raw, f_p, g_p, p)?;
    let tol = Tolerances {
        kkt: a.kkt_tol.unwrap_or(10.0 * cfg.solver.inner_tol),
        mass: a.mass_tol,
        slack: a.slack_tol,
    };
    checks.extend(kkt::diagnose(pb, &mesh, &field, p, g_p, &rescaled, &tol)?);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(Outcome { failures: check_failures(&checks), dir: Some(dir.clone()) })
}

fn mass(v: f64, relation: Relation) -> ConstraintSpec {
    ConstraintSpec::Isoperimetric { h: IntegrandH::Component { index: 0, scale: 1.0 }, bound: v, relation }
}

fn brute(problem: Problem, p: f64) -> Result<Vec<(String, f64)>> {
    let mesh = Mesh::unit_interval(6)?;
    let op = OracleProblem::new(problem, mesh, SearchSpace::Grid { lo: -1.0, hi: 1.0, resolution: 15 })?;
    let r = oracle::brute_force(&op, p)?;
    Ok(vec![("p".into(), p), ("F_p".into(), r.value), ("feasible_points".into(), r.feasible as f64)])
}

/// Certified values of a named oracle case as `(key, value)` pairs.
pub fn oracle_case(name: &str, p: Option<f64>) -> Result<Vec<(String, f64)>> {
    let mesh = Mesh::unit_interval(256)?;
    let slope = |v: f64, cap: f64| -> Result<Vec<(String, f64)>> {
        let (s, field) = oracle::analytic_1d_isoperimetric(v, cap, &mesh)?;
        Ok(vec![("V".into(), v), ("G".into(), cap), ("F_inf".into(), s), ("u_max".into(), field.sup_norm())])
    };
    match name {
        "lp_parabola" => {
            let mut out: Vec<(String, f64)> =
                [1.0, 2.0, 4.0, 8.0].iter().map(|&p: &f64| (format!("F_{p}"), (2.0 * p + 1.0).powf(-1.0 / p))).collect();
            out.push(("F_inf".into(), 1.0));
            Ok(out)
        }
        "p2_parabola" => {
            let v = 1.0 / 12.0;
            let (field, f2) = oracle::analytic_1d_p2(v, &mesh)?;
            Ok(vec![("V".into(), v), ("F_2".into(), f2), ("u_max".into(), field.sup_norm())])
        }
        "triangle" => slope(0.2, 10.0),
        "trapezoid" => slope(0.75, 1.0),
        "tiny_eq" => brute(Problem::new(1, DensityF::GradientNorm).with_constraint(mass(1.0 / 12.0, Relation::Eq)), p.unwrap_or(2.0)),
        "tiny_cap" => brute(
            Problem::new(1, DensityF::GradientNorm).with_cap(DensityG::Abs, 1.0).with_constraint(mass(0.6, Relation::Ge)),
            p.unwrap_or(4.0),
        ),
        other => Err(Error::Config(vec![format!("unknown oracle case `{other}` (one of {}, all)", ORACLE_CASES.join(", "))])),
    }
}

fn run_oracle(a: &OracleArgs) -> Result<Outcome> {
    let names: Vec<&str> = if a.case == "all" { ORACLE_CASES.to_vec() } else { vec![a.case.as_str()] };
    for name in names {
        for (k, v) in oracle_case(name, a.p)? {
            println!("{name} {k} {}", num(v));
        }
    }
    Ok(Outcome { failures: Vec::new(), dir: None })
}
