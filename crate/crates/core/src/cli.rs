//! Problem files, command dispatch and canonical reports behind the
//! `whitstrat` binary. Everything here is pure: the binary reads files,
//! calls [`run`], and writes what comes back.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::kuo::{limit_points, LimitKind, Mode};
use crate::params::Params;
use crate::polycore::{parse_poly, Polynomial};
use crate::refine::{certify, initial_strata, refine_pair, stratify_named, RefineError, StratificationCertificate};
use crate::semivariety::{filtrate, BasicSet, Membership, Semivariety, Stratum};
use crate::whitney::{approach, classify_triple, probe_sing, GridSpec, Status, WhitneyError};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Whitney(#[from] WhitneyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Parse,
    Filtrate,
    CheckPair,
    KuoTrace,
    Refine,
    Stratify,
    Certify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Parse => "parse",
            Command::Filtrate => "filtrate",
            Command::CheckPair => "check-pair",
            Command::KuoTrace => "kuo-trace",
            Command::Refine => "refine",
            Command::Stratify => "stratify",
            Command::Certify => "certify",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Command, CliError> {
        Ok(match s {
            "parse" => Command::Parse,
            "filtrate" => Command::Filtrate,
            "check-pair" => Command::CheckPair,
            "kuo-trace" => Command::KuoTrace,
            "refine" => Command::Refine,
            "stratify" => Command::Stratify,
            "certify" => Command::Certify,
            _ => return Err(CliError::Usage(format!("unknown command `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub equations: Vec<String>,
    #[serde(default)]
    pub inequalities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub id: String,
    pub dim: usize,
    pub pieces: Vec<PieceSpec>,
    /// Each exclusion is a union of pieces removed from the carrier.
    #[serde(default)]
    pub exclusions: Vec<Vec<PieceSpec>>,
    #[serde(default)]
    pub seed_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GridDecl {
    Points {
        points: Vec<Vec<f64>>,
    },
    Segment {
        from: Vec<f64>,
        to: Vec<f64>,
        n: usize,
    },
    Lattice {
        origin: Vec<f64>,
        axes: Vec<Vec<f64>>,
        counts: Vec<usize>,
    },
}

impl GridDecl {
    pub fn spec(&self) -> GridSpec {
        match self.clone() {
            GridDecl::Points { points } => GridSpec::Points(points),
            GridDecl::Segment { from, to, n } => GridSpec::Segment { from, to, n },
            GridDecl::Lattice { origin, axes, counts } => GridSpec::Lattice { origin, axes, counts },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub big: String,
    pub small: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub ambient_dim: usize,
    pub variables: Vec<String>,
    pub pieces: Vec<PieceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<StratumSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<GridDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Params>,
}

/// A validated problem: the file in canonical form plus compiled objects.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub set: Semivariety,
    pub strata: Vec<Stratum>,
}

impl Problem {
    pub fn from_json(text: &str) -> Result<Problem, CliError> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| {
            CliError::Input(format!(
                "invalid problem file at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        Problem::new(file)
    }

    pub fn new(file: ProblemFile) -> Result<Problem, CliError> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let m = file.ambient_dim;
        if file.variables.len() != m {
            return Err(CliError::Input(format!(
                "ambient_dim is {m} but {} variables are declared",
                file.variables.len()
            )));
        }
        for (k, v) in file.variables.iter().enumerate() {
            if file.variables[..k].contains(v) {
                return Err(CliError::Input(format!("variable `{v}` declared twice")));
            }
        }
        if file.pieces.is_empty() {
            return Err(CliError::Input("the problem declares no pieces".into()));
        }
        let vars = &file.variables;
        let set = compile_set(&file.pieces, vars, "pieces")?;
        let mut strata = Vec::new();
        for (k, s) in file.strata.iter().enumerate() {
            let at = format!("strata[{k}]");
            if strata.iter().any(|t: &Stratum| t.id == s.id) {
                return Err(CliError::Input(format!("{at}: duplicate stratum id `{}`", s.id)));
            }
            if s.dim > m {
                return Err(CliError::Input(format!("{at}: dim {} exceeds ambient_dim {m}", s.dim)));
            }
            let mut st = Stratum::new(
                s.id.clone(),
                s.dim,
                compile_set(&s.pieces, vars, &format!("{at}.pieces"))?,
            );
            st.exclusions = s
                .exclusions
                .iter()
                .enumerate()
                .map(|(e, p)| compile_set(p, vars, &format!("{at}.exclusions[{e}]")))
                .collect::<Result<_, _>>()?;
            for (q, p) in s.seed_points.iter().enumerate() {
                check_point(p, m, &format!("{at}.seed_points[{q}]"))?;
            }
            st.seed_points = s.seed_points.clone();
            strata.push(st);
        }
        for (q, p) in file.points.iter().enumerate() {
            check_point(p, m, &format!("points[{q}]"))?;
        }
        for (g, grid) in file.grids.iter().enumerate() {
            let ok = match grid {
                GridDecl::Points { points } => points.iter().all(|p| p.len() == m),
                GridDecl::Segment { from, to, .. } => from.len() == m && to.len() == m,
                GridDecl::Lattice { origin, axes, counts } => {
                    origin.len() == m && axes.len() == counts.len() && axes.iter().all(|a| a.len() == m)
                }
            };
            if !ok {
                return Err(CliError::Input(format!(
                    "grids[{g}]: coordinates do not match ambient_dim {m}"
                )));
            }
        }
        if let Some(pair) = &file.pair {
            for id in [&pair.big, &pair.small] {
                if !file.strata.iter().any(|s| &s.id == id) {
                    return Err(CliError::Input(format!("pair names undeclared stratum `{id}`")));
                }
            }
        }
        let mut canonical = file;
        canonicalize(&mut canonical, &set, &strata);
        Ok(Problem {
            file: canonical,
            set,
            strata,
        })
    }

    /// Parameters of the file (defaults when absent).
    pub fn params(&self) -> Params {
        self.file.params.clone().unwrap_or_default()
    }

    /// Base points: the command line wins, then declared points, then grids.
    pub fn base_points(&self, opts: &Options) -> Vec<Vec<f64>> {
        if !opts.x.is_empty() {
            return opts.x.clone();
        }
        if !self.file.points.is_empty() {
            return self.file.points.clone();
        }
        self.file.grids.iter().flat_map(|g| g.spec().points()).collect()
    }
}

fn check_point(p: &[f64], m: usize, at: &str) -> Result<(), CliError> {
    if p.len() != m {
        return Err(CliError::Input(format!(
            "{at}: expected {m} coordinates, got {}",
            p.len()
        )));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Input(format!("{at}: coordinates must be finite")));
    }
    Ok(())
}

fn compile_set(pieces: &[PieceSpec], vars: &[String], at: &str) -> Result<Semivariety, CliError> {
    let m = vars.len();
    let parse = |list: &[String], what: &str, k: usize| -> Result<Vec<Polynomial>, CliError> {
        list.iter()
            .enumerate()
            .map(|(q, text)| {
                parse_poly(text, vars).map_err(|e| CliError::Input(format!("{at}[{k}].{what}[{q}] `{text}`: {e}")))
            })
            .collect()
    };
    let pieces = pieces
        .iter()
        .enumerate()
        .map(|(k, p)| {
            BasicSet::new(
                parse(&p.equations, "equations", k)?,
                parse(&p.inequalities, "inequalities", k)?,
                m,
            )
            .map_err(|e| CliError::Input(format!("{at}[{k}]: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Semivariety { pieces, ambient_dim: m })
}

fn piece_specs(s: &Semivariety, vars: &[String]) -> Vec<PieceSpec> {
    s.pieces
        .iter()
        .map(|p| PieceSpec {
            equations: p.equations.iter().map(|q| q.to_text(vars)).collect(),
            inequalities: p.inequalities.iter().map(|q| q.to_text(vars)).collect(),
        })
        .collect()
}

/// Rewrites every polynomial in normal form and fills in default
/// parameters, so that equal problems serialize identically.
fn canonicalize(file: &mut ProblemFile, set: &Semivariety, strata: &[Stratum]) {
    let vars = file.variables.clone();
    file.pieces = piece_specs(set, &vars);
    for (spec, st) in file.strata.iter_mut().zip(strata) {
        spec.pieces = piece_specs(&st.carrier, &vars);
        spec.exclusions = st.exclusions.iter().map(|e| piece_specs(e, &vars)).collect();
    }
    file.params = Some(file.params.clone().unwrap_or_default());
}

/// Command-line overrides. `None` keeps the value from the problem file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Options {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub tol_rank: Option<f64>,
    pub tol_kuo: Option<f64>,
    /// `(r0, gamma, n_shells)`.
    pub radii: Option<(f64, f64, usize)>,
    pub shells_probes: Option<usize>,
    pub max_depth: Option<usize>,
    pub dump_traces: bool,
    /// Contents of the certificate file for `certify`.
    pub certificate: Option<String>,
    pub x: Vec<Vec<f64>>,
    pub big: Option<String>,
    pub small: Option<String>,
}

impl Options {
    fn apply(&self, mut p: Params) -> Params {
        if let Some(s) = self.seed {
            p.seed = s;
        }
        if let Some(t) = self.tol_rank {
            p.tol_rank = t;
        }
        if let Some(t) = self.tol_kuo {
            p.tol_kuo = t;
        }
        if let Some((r0, gamma, n)) = self.radii {
            p.r0 = r0;
            p.gamma = gamma;
            p.n_shells = n;
        }
        if let Some(n) = self.shells_probes {
            p.probes_per_shell = n;
        }
        if let Some(d) = self.max_depth {
            p.max_depth = d;
        }
        p
    }

    fn echo(&self) -> Value {
        json!({
            "mode": self.mode.map(Mode::as_str),
            "seed": self.seed,
            "tol_rank": self.tol_rank,
            "tol_kuo": self.tol_kuo,
            "radii": self.radii.map(|(r0, g, n)| json!([r0, g, n])),
            "shells_probes": self.shells_probes,
            "max_depth": self.max_depth,
            "dump_traces": self.dump_traces,
            "x": self.x,
            "big": self.big,
            "small": self.small,
        })
    }
}

/// Parses `r0,gamma,n`.
pub fn parse_radii(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected r0,gamma,n but got `{s}`"));
    }
    let r0: f64 = parts[0].parse().map_err(|_| format!("bad r0 `{}`", parts[0]))?;
    let gamma: f64 = parts[1].parse().map_err(|_| format!("bad gamma `{}`", parts[1]))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| format!("bad shell count `{}`", parts[2]))?;
    if !(r0 > 0.0 && gamma > 0.0 && gamma < 1.0 && n > 0) {
        return Err("need r0 > 0, 0 < gamma < 1 and n > 0".into());
    }
    Ok((r0, gamma, n))
}

/// Parses a comma-separated point such as `0,0,1.5`.
pub fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|c| {
            let c = c.trim();
            c.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad coordinate `{c}`"))
        })
        .collect()
}

/// Result of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// Canonical JSON report.
    pub report: String,
    /// Human-readable lines (also embedded in the report).
    pub summary: Vec<String>,
    /// Extra files as `(name, contents)`.
    pub artifacts: Vec<(String, String)>,
}

struct Partial {
    status: &'static str,
    exit_code: i32,
    result: Value,
    summary: Vec<String>,
    artifacts: Vec<(String, String)>,
}

/// Runs `command` on the problem text. `input` is echoed in the report.
pub fn run(command: Command, input: &str, problem_text: &str, opts: &Options) -> Result<Outcome, CliError> {
    let problem = Problem::from_json(problem_text)?;
    let params = opts.apply(problem.params());
    let mode = opts.mode.unwrap_or(Mode::B);
    let part = match command {
        Command::Parse => cmd_parse(&problem),
        Command::Filtrate => cmd_filtrate(&problem, &params)?,
        Command::CheckPair => cmd_check_pair(&problem, opts, mode, &params)?,
        Command::KuoTrace => cmd_kuo_trace(&problem, opts, &params)?,
        Command::Refine => cmd_refine(&problem, opts, mode, &params)?,
        Command::Stratify => cmd_stratify(&problem, mode, &params)?,
        Command::Certify => cmd_certify(&problem, opts, &params)?,
    };
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command.as_str(),
        "input": input,
        "flags": opts.echo(),
        "params": params,
        "status": part.status,
        "exit_code": part.exit_code,
        "result": part.result,
        "summary": part.summary,
    });
    Ok(Outcome {
        exit_code: part.exit_code,
        report: canonical_json(&report),
        summary: part.summary,
        artifacts: part.artifacts,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(", "))
}

fn cmd_parse(problem: &Problem) -> Partial {
    let f = &problem.file;
    Partial {
        status: "ok",
        exit_code: EXIT_OK,
        result: to_value(f),
        summary: vec![format!(
            "{} variables, {} pieces, {} declared strata, {} base points",
            f.variables.len(),
            f.pieces.len(),
            f.strata.len(),
            f.points.len()
        )],
        artifacts: Vec::new(),
    }
}

fn cmd_filtrate(problem: &Problem, params: &Params) -> Result<Partial, CliError> {
    const SHOWN: usize = 8;
    let f = filtrate(&problem.set, None, params).map_err(RefineError::from)?;
    let vars = &problem.file.variables;
    let levels: Vec<Value> = f
        .levels
        .iter()
        .map(|l| {
            json!({
                "dim": l.dim,
                "pieces": piece_specs(&l.set, vars),
                "samples": l.samples.len(),
                "sample_points": l.samples.iter().take(SHOWN).collect::<Vec<_>>(),
            })
        })
        .collect();
    let dims: Vec<usize> = f.levels.iter().map(|l| l.dim).collect();
    Ok(Partial {
        status: "ok",
        exit_code: EXIT_OK,
        result: json!({ "levels": levels }),
        summary: vec![format!("filtration dimensions {dims:?}")],
        artifacts: Vec::new(),
    })
}

/// Declared strata, or the filtration differences when none are declared.
fn strata_of(problem: &Problem, params: &Params) -> Result<Vec<Stratum>, CliError> {
    if !problem.strata.is_empty() {
        return Ok(problem.strata.clone());
    }
    let f = filtrate(&problem.set, None, params).map_err(RefineError::from)?;
    Ok(initial_strata(&f, params))
}

/// Big stratum: flag, then the declared pair, then the highest dimension.
/// Small stratum: flag, then the declared pair, then the highest-dimensional
/// lower stratum containing `x`.
fn select_pair(
    strata: &[Stratum],
    problem: &Problem,
    opts: &Options,
    x: &[f64],
    params: &Params,
) -> Result<(usize, usize), CliError> {
    let find = |id: &str| {
        strata
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| CliError::Input(format!("no stratum named `{id}`")))
    };
    let pair = problem.file.pair.as_ref();
    let big = match opts.big.as_deref().or(pair.map(|p| p.big.as_str())) {
        Some(id) => find(id)?,
        None => (0..strata.len())
            .max_by(|&a, &b| strata[a].dim.cmp(&strata[b].dim).then(b.cmp(&a)))
            .ok_or_else(|| CliError::Input("no strata".into()))?,
    };
    let small = match opts.small.as_deref().or(pair.map(|p| p.small.as_str())) {
        Some(id) => find(id)?,
        None => (0..strata.len())
            .filter(|&k| strata[k].dim < strata[big].dim)
            .filter(|&k| strata[k].membership(x, params).is_ok_and(|m| m != Membership::Outside))
            .max_by(|&a, &b| strata[a].dim.cmp(&strata[b].dim).then(b.cmp(&a)))
            .ok_or_else(|| CliError::Input(format!("no stratum below {} contains {}", strata[big].id, fmt_point(x))))?,
    };
    Ok((big, small))
}

fn need_points(problem: &Problem, opts: &Options) -> Result<Vec<Vec<f64>>, CliError> {
    let pts = problem.base_points(opts);
    if pts.is_empty() {
        return Err(CliError::Usage(
            "no base points: pass --x or declare points or grids".into(),
        ));
    }
    let m = problem.file.ambient_dim;
    for p in &pts {
        check_point(p, m, "--x")?;
    }
    Ok(pts)
}

/// Whitney errors that mean the input is wrong rather than undecided.
fn input_error(e: &WhitneyError) -> bool {
    matches!(
        e,
        WhitneyError::NotOnSmallStratum(_) | WhitneyError::DimensionMismatch(..)
    )
}

fn cmd_check_pair(problem: &Problem, opts: &Options, mode: Mode, params: &Params) -> Result<Partial, CliError> {
    let strata = strata_of(problem, params)?;
    let points = need_points(problem, opts)?;
    let mut entries = Vec::new();
    let mut summary = Vec::new();
    let (mut irregular, mut undecided) = (0, 0);
    for x in &points {
        let (b, s) = select_pair(&strata, problem, opts, x, params)?;
        let (big, small) = (&strata[b], &strata[s]);
        match classify_triple(big, small, x, params) {
            Ok(v) => {
                let st = v.status(mode);
                match st {
                    Status::Irregular => irregular += 1,
                    Status::Inconclusive => undecided += 1,
                    Status::Regular => {}
                }
                summary.push(format!(
                    "({}, {}) at {}: a {}, b {}",
                    big.id,
                    small.id,
                    fmt_point(x),
                    v.a.status.as_str(),
                    v.b.status.as_str()
                ));
                entries.push(json!({ "x": x, "big": big.id, "small": small.id, "verdict": v }));
            }
            Err(e) if input_error(&e) => return Err(CliError::Input(format!("{}: {e}", fmt_point(x)))),
            Err(e) => {
                if !matches!(e, WhitneyError::NotInFrontier(_)) {
                    undecided += 1;
                }
                summary.push(format!("({}, {}) at {}: {e}", big.id, small.id, fmt_point(x)));
                entries.push(json!({ "x": x, "big": big.id, "small": small.id, "error": e.to_string() }));
            }
        }
    }
    let (status, exit_code) = if irregular > 0 {
        ("irregular", EXIT_NEGATIVE)
    } else if undecided > 0 {
        ("inconclusive", EXIT_INCONCLUSIVE)
    } else {
        ("regular", EXIT_OK)
    };
    Ok(Partial {
        status,
        exit_code,
        result: json!({ "mode": mode, "points": entries }),
        summary,
        artifacts: Vec::new(),
    })
}

fn cmd_kuo_trace(problem: &Problem, opts: &Options, params: &Params) -> Result<Partial, CliError> {
    let strata = strata_of(problem, params)?;
    let points = need_points(problem, opts)?;
    let mut entries = Vec::new();
    let mut summary = Vec::new();
    let mut artifacts = Vec::new();
    let mut failed = 0;
    for (k, x) in points.iter().enumerate() {
        let (b, s) = select_pair(&strata, problem, opts, x, params)?;
        let (big, small) = (&strata[b], &strata[s]);
        match approach(big, small, x, params) {
            Ok(ap) => {
                let scalars = |kind, tol| -> Vec<f64> {
                    limit_points(&ap.trace, kind, tol)
                        .map(|cs| cs.iter().filter_map(|c| c.scalar()).collect())
                        .unwrap_or_default()
                };
                let la = scalars(LimitKind::KuoA, params.cluster_tol_scalar);
                let lb = scalars(LimitKind::KuoB, params.cluster_tol_scalar);
                let planes = limit_points(&ap.trace, LimitKind::Planes, params.cluster_tol_plane)
                    .map(|c| c.len())
                    .unwrap_or(0);
                let name = format!("trace_{k}.csv");
                summary.push(format!(
                    "({}, {}) at {}: {} samples in {} shells, Kuo limits a {la:?} b {lb:?}",
                    big.id,
                    small.id,
                    fmt_point(x),
                    ap.trace.entries.len(),
                    ap.trace.populated_shells().len()
                ));
                entries.push(json!({
                    "x": x,
                    "big": big.id,
                    "small": small.id,
                    "radii": ap.trace.radii,
                    "samples": ap.trace.entries.len(),
                    "populated_shells": ap.trace.populated_shells(),
                    "limits_a": la,
                    "limits_b": lb,
                    "plane_clusters": planes,
                    "csv": if opts.dump_traces { Some(name.clone()) } else { None },
                }));
                if opts.dump_traces {
                    artifacts.push((name, ap.trace.to_csv()));
                }
            }
            Err(e) if input_error(&e) => return Err(CliError::Input(format!("{}: {e}", fmt_point(x)))),
            Err(e) => {
                failed += 1;
                summary.push(format!("({}, {}) at {}: {e}", big.id, small.id, fmt_point(x)));
                entries.push(json!({ "x": x, "big": big.id, "small": small.id, "error": e.to_string() }));
            }
        }
    }
    let (status, exit_code) = if failed > 0 {
        ("incomplete", EXIT_INCONCLUSIVE)
    } else {
        ("ok", EXIT_OK)
    };
    Ok(Partial {
        status,
        exit_code,
        result: json!({ "traces": entries }),
        summary,
        artifacts,
    })
}

fn cmd_refine(problem: &Problem, opts: &Options, mode: Mode, params: &Params) -> Result<Partial, CliError> {
    let strata = strata_of(problem, params)?;
    let points = need_points(problem, opts)?;
    let (b, s) = select_pair(&strata, problem, opts, &points[0], params)?;
    let (big, small) = (&strata[b], &strata[s]);
    let probe = probe_sing(big, small, &GridSpec::Points(points), params)?;
    let head = format!("({}, {})", big.id, small.id);
    let (status, exit_code, result, summary) = match refine_pair(big, small, &probe, mode, params) {
        Ok(r) => {
            let all = r.contained.iter().all(|&c| c);
            let ids: Vec<String> = r.strata.iter().map(|n| n.stratum().id.clone()).collect();
            let line = format!(
                "{head}: {} new strata {ids:?}, monotonicity deficit {:.3e} over {} points",
                ids.len(),
                r.monotonicity.max_deficit,
                r.monotonicity.checked
            );
            let (st, code) = if all {
                ("refined", EXIT_OK)
            } else {
                ("incomplete", EXIT_INCONCLUSIVE)
            };
            (
                st,
                code,
                json!({ "probe": probe, "refinement": r.summary() }),
                vec![line],
            )
        }
        Err(RefineError::NoIrregularPoints(_)) => (
            "regular",
            EXIT_OK,
            json!({ "probe": probe, "refinement": Value::Null }),
            vec![format!(
                "{head}: no {}-irregular point, nothing to refine",
                mode.as_str()
            )],
        ),
        Err(e @ (RefineError::Whitney(_) | RefineError::Semi(_) | RefineError::Poly(_))) => return Err(e.into()),
        Err(e) => (
            "incomplete",
            EXIT_INCONCLUSIVE,
            json!({ "probe": probe, "refinement": Value::Null, "error": e.to_string() }),
            vec![format!("{head}: {e}")],
        ),
    };
    Ok(Partial {
        status,
        exit_code,
        result,
        summary,
        artifacts: Vec::new(),
    })
}

fn cert_exit(status: crate::refine::CertStatus) -> i32 {
    use crate::refine::CertStatus::*;
    match status {
        Certified => EXIT_OK,
        Refuted => EXIT_NEGATIVE,
        Incomplete => EXIT_INCONCLUSIVE,
    }
}

fn cmd_stratify(problem: &Problem, mode: Mode, params: &Params) -> Result<Partial, CliError> {
    let c = stratify_named(&problem.set, &problem.file.variables, mode, params)?;
    let mut summary = vec![format!("{} after {} rounds", c.status.as_str(), c.rounds)];
    summary.extend(
        c.strata
            .iter()
            .map(|s| format!("{} (dim {}): {}", s.id, s.dim, s.origin)),
    );
    summary.extend(c.diagnostics.iter().cloned());
    // Irregular points of the last round stand as witnesses for a refusal.
    let witnesses: Vec<Value> = c
        .pairs
        .iter()
        .flat_map(|p| {
            p.points
                .iter()
                .filter(|q| {
                    let s = match mode {
                        Mode::A => q.a,
                        Mode::B => q.b,
                    };
                    s == Some(Status::Irregular)
                })
                .map(move |q| json!({ "big": p.big, "small": p.small, "x": q.x, "kuo_a": q.kuo_a, "kuo_b": q.kuo_b }))
        })
        .collect();
    Ok(Partial {
        status: c.status.as_str(),
        exit_code: cert_exit(c.status),
        result: json!({ "certificate": c, "witnesses": witnesses }),
        summary,
        artifacts: vec![("certificate.json".into(), canonical_json(&to_value(&c)))],
    })
}

fn cmd_certify(problem: &Problem, opts: &Options, params: &Params) -> Result<Partial, CliError> {
    let text = opts
        .certificate
        .as_deref()
        .ok_or_else(|| CliError::Usage("certify needs --certificate FILE".into()))?;
    let c: StratificationCertificate = serde_json::from_str(text).map_err(|e| {
        CliError::Input(format!(
            "invalid certificate at line {}, column {}: {e}",
            e.line(),
            e.column()
        ))
    })?;
    if c.variables != problem.file.variables {
        return Err(CliError::Input(format!(
            "certificate variables {:?} differ from the problem's {:?}",
            c.variables, problem.file.variables
        )));
    }
    let r = certify(&c, &problem.set, params)?;
    let mut summary = vec![format!(
        "{} with seed {}: {} cloud points, {} triples re-checked",
        r.status.as_str(),
        r.seed,
        r.cloud_points,
        r.rechecked
    )];
    summary.extend(r.diagnostics.iter().cloned());
    summary.extend(r.frontier_mismatches.iter().cloned());
    Ok(Partial {
        status: r.status.as_str(),
        exit_code: cert_exit(r.status),
        result: to_value(&r),
        summary,
        artifacts: Vec::new(),
    })
}

/// Pretty JSON with sorted keys and every float written with 17
/// significant digits, so equal values always give equal bytes.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                let _ = write!(out, "{:.16e}", n.as_f64().unwrap_or(f64::NAN));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) if a.iter().all(is_scalar) => {
            out.push('[');
            for (k, x) in a.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_value(out, x, indent);
            }
            out.push(']');
        }
        Value::Array(a) => {
            out.push_str("[\n");
            for (k, x) in a.iter().enumerate() {
                pad(out, indent + 1);
                write_value(out, x, indent + 1);
                out.push_str(if k + 1 < a.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (k, key) in keys.iter().enumerate() {
                pad(out, indent + 1);
                out.push_str(&Value::String((*key).clone()).to_string());
                out.push_str(": ");
                write_value(out, &m[*key], indent + 1);
                out.push_str(if k + 1 < keys.len() { ",\n" } else { "\n" });
            }
            pad(out, indent);
            out.push('}');
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANE_LINE: &str = r#"{
        "schema_version": 1,
        "ambient_dim": 3,
        "variables": ["x", "y", "z"],
        "pieces": [{"equations": ["z"]}]
    }"#;

    #[test]
    fn undeclared_variable_is_named() {
        let text = PLANE_LINE.replace("[\"z\"]}", "[\"z + w\"]}");
        let err = Problem::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("`w`"), "{err}");
        assert!(err.contains("pieces[0].equations[0]"), "{err}");
    }

    #[test]
    fn variable_count_must_match() {
        let text = PLANE_LINE.replace("\"ambient_dim\": 3", "\"ambient_dim\": 2");
        assert!(Problem::from_json(&text).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let p = Problem::from_json(&PLANE_LINE.replace("[\"z\"]}", "[\"2*z + z - z\"]}")).unwrap();
        let text = canonical_json(&to_value(&p.file));
        let q = Problem::from_json(&text).unwrap();
        assert_eq!(p.file, q.file);
        assert_eq!(text, canonical_json(&to_value(&q.file)));
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = canonical_json(&json!({"b": 0.1, "a": [1, 2.5]}));
        assert_eq!(
            s,
            "{\n  \"a\": [1, 2.5000000000000000e0],\n  \"b\": 1.0000000000000001e-1\n}\n"
        );
    }

    #[test]
    fn radii_and_points_parse() {
        assert_eq!(parse_radii("0.01,0.25,12").unwrap(), (0.01, 0.25, 12));
        assert!(parse_radii("0.01,2,12").is_err());
        assert_eq!(parse_point("0, 0,1.5").unwrap(), vec![0.0, 0.0, 1.5]);
        assert!(parse_point("0,a").is_err());
    }
}
