use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;
use relu_maxcut::dataset::{classify_dataset, generate_synthetic, load_dataset, ClassTag, Dataset, Format};
use relu_maxcut::dual::{geometric_ratio, CLASSIFY_TOL};
use relu_maxcut::loss::LossModel;
use relu_maxcut::maxcut::{gw_round, maxcut_bruteforce, sdp_relaxation, BRUTE_CAP};
use relu_maxcut::network::{evaluate_network, Network};
use relu_maxcut::oracle::{exact_dual_with, exact_primal, Arch};
use relu_maxcut::primal::{
    certify, solve_primal_geo, solve_primal_negcorr, solve_primal_ortho, ApproxResult, NegcorrConfig,
};
use relu_maxcut::Error;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

#[derive(Parser, Debug)]
#[command(name = "relu-maxcut", version, about = "Convex-duality solvers and certificates for two-layer ReLU training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify a dataset as orthogonal separable, negatively correlated or general.
    Classify(Common),
    /// Train an approximately optimal network and certify its objective.
    Solve(SolveArgs),
    /// Re-evaluate a saved network (or solve report) on a dataset.
    Verify(VerifyArgs),
    /// Exact primal and dual values by activation-pattern enumeration.
    Oracle(Common),
    /// Brute force, SDP relaxation and Goemans-Williamson rounding on a matrix.
    Maxcut(MaxcutArgs),
    /// Sweep seeds on synthetic data and compare against the exact value.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum LossArg {
    Maxmargin,
    Hinge,
    General,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum FamilyArg {
    SquaredHinge,
    Hinge,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Auto,
    Ortho,
    Negcorr,
    Geo,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Ortho,
    Negcorr,
    General,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Dataset file (.csv or .json).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "maxmargin")]
    loss: LossArg,
    /// Loss family used with `--loss general`.
    #[arg(long, value_enum, default_value = "squared-hinge")]
    family: FamilyArg,
    /// Regularization strength for hinge and general losses.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Approx {
    #[arg(long, value_enum, default_value = "auto")]
    method: MethodArg,
    /// Ratio `c ≤ min(c*, 1/c*)` for the geometric-ratio method.
    #[arg(long)]
    c: Option<f64>,
    /// Ellipsoid accuracy for the dual solve.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    eps0: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Fixed rounding sample count per block.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    approx: Approx,
}

#[derive(Args, Debug, Clone, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Network JSON, or a report written by `solve`.
    #[arg(long)]
    network: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct MaxcutArgs {
    #[command(flatten)]
    common: Common,
    /// Rounding samples.
    #[arg(long, default_value_t = 1000)]
    k: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    approx: Approx,
    #[arg(long, value_enum, default_value = "negcorr")]
    kind: KindArg,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, kind: "usage", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match e {
            Error::WrongRegime(_) => (3, "regime_mismatch"),
            Error::MalformedRow { .. }
            | Error::BadLabel { .. }
            | Error::ZeroSample(_)
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch(_)
            | Error::NotPsd(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => (2, "usage"),
            _ => (4, "solver_failure"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn loss_model(c: &Common) -> Outcome<LossModel> {
    if c.loss.is_penalized() && !(c.beta > 0.0 && c.beta.is_finite()) {
        return Err(Failure::usage(format!("--beta must be positive, got {}", c.beta)));
    }
    Ok(match (c.loss, c.family) {
        (LossArg::Maxmargin, _) => LossModel::MaxMargin,
        (LossArg::Hinge, _) | (LossArg::General, FamilyArg::Hinge) => LossModel::Hinge { beta: c.beta },
        (LossArg::General, FamilyArg::SquaredHinge) => LossModel::squared_hinge(c.beta),
    })
}

impl LossArg {
    fn is_penalized(self) -> bool {
        !matches!(self, LossArg::Maxmargin)
    }
}

fn load_input(c: &Common) -> Outcome<Dataset> {
    let path = c.input.as_ref().ok_or_else(|| Failure::usage("--input is required"))?;
    Ok(load_dataset(path, Format::from_path(path))?)
}

fn fingerprint(ds: &Dataset) -> Value {
    let hash = Sha256::digest(ds.to_json_string().as_bytes());
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    json!({ "n": ds.n(), "d": ds.d(), "sha256": hex })
}

fn tag_name(t: ClassTag) -> &'static str {
    match t {
        ClassTag::OrthogonalSeparable => "orthogonal_separable",
        ClassTag::NegativeCorrelation => "negative_correlation",
        ClassTag::General => "general",
    }
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn classify(c: &Common) -> Outcome<Value> {
    let ds = load_input(c)?;
    let class = classify_dataset(&ds, CLASSIFY_TOL);
    Ok(json!({
        "dataset": fingerprint(&ds),
        "regime": tag_name(class.tag),
        "witness": class.witness,
    }))
}

fn pick_method(ds: &Dataset, m: MethodArg) -> MethodArg {
    if m != MethodArg::Auto {
        return m;
    }
    match classify_dataset(ds, CLASSIFY_TOL).tag {
        ClassTag::OrthogonalSeparable => MethodArg::Ortho,
        ClassTag::NegativeCorrelation => MethodArg::Negcorr,
        ClassTag::General => MethodArg::Geo,
    }
}

fn approximate(ds: &Dataset, loss: &LossModel, c: &Common, a: &Approx) -> Outcome<(MethodArg, ApproxResult)> {
    let method = pick_method(ds, a.method);
    let r = match method {
        MethodArg::Ortho => solve_primal_ortho(ds, loss, c.tol)?,
        MethodArg::Negcorr => {
            let cfg = NegcorrConfig {
                eps0: a.eps0,
                delta: a.delta,
                seed: c.seed,
                k: a.k,
                tol: c.tol,
                eps: a.eps,
                ..NegcorrConfig::default()
            };
            solve_primal_negcorr(ds, loss, &cfg)?
        }
        MethodArg::Geo => {
            let cc = a.c.ok_or_else(|| Failure::usage("the geometric-ratio method needs --c"))?;
            solve_primal_geo(ds, cc, loss, a.eps)?
        }
        MethodArg::Auto => unreachable!(),
    };
    Ok((method, r))
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Auto => "auto",
        MethodArg::Ortho => "ortho",
        MethodArg::Negcorr => "negcorr",
        MethodArg::Geo => "geo",
    }
}

fn solve(s: &SolveArgs) -> Outcome<Value> {
    let ds = load_input(&s.common)?;
    let loss = loss_model(&s.common)?;
    let (method, r) = approximate(&ds, &loss, &s.common, &s.approx)?;
    Ok(json!({
        "dataset": fingerprint(&ds),
        "regime": r.regime,
        "method": method_name(method),
        "p": finite(r.p),
        "lower": finite(r.lower),
        "factor": finite(r.factor),
        "ratio_bound": finite(r.ratio_bound),
        "certificate": r.certificate,
        "network": r.network.as_ref().map(|n| n.to_json()),
        "diagnostics": serde_json::to_value(&r).map_err(Error::from)?,
    }))
}

fn verify(v: &VerifyArgs) -> Outcome<Value> {
    let ds = load_input(&v.common)?;
    let loss = loss_model(&v.common)?;
    let text = std::fs::read_to_string(&v.network).map_err(Error::from)?;
    let doc: Value = serde_json::from_str(&text).map_err(Error::from)?;
    // a solve report carries the network next to its claimed values
    let report = doc.get("network").filter(|n| n.is_object()).map(|_| &doc);
    let net = Network::from_json(report.map_or(&doc, |r| &r["network"]))?;
    let ev = match evaluate_network(&net, &ds, &loss) {
        Ok(ev) => ev,
        Err(e @ Error::DimensionMismatch(_)) => {
            return Ok(json!({ "dataset": fingerprint(&ds), "valid": false, "failure": e.to_string() }));
        }
        Err(e) => return Err(e.into()),
    };
    let mut failures = Vec::new();
    if !ev.feasible && matches!(loss, LossModel::MaxMargin) {
        failures.push("margin constraints violated".to_string());
    }
    let mut certificate = Value::Null;
    if let Some(r) = report {
        let claimed = r["p"].as_f64();
        if let Some(p) = claimed {
            if (p - ev.objective).abs() > 1e-9 * (1.0 + p.abs()) {
                failures.push(format!("reported p = {p} but the network achieves {}", ev.objective));
            }
        }
        if let (Some(lower), Some(bound)) = (r["lower"].as_f64(), r["ratio_bound"].as_f64()) {
            let c = certify(ev.objective, lower, 1.0 / bound);
            if !c.accepted {
                failures.push(c.reason.clone().unwrap_or_default());
            }
            certificate = serde_json::to_value(&c).map_err(Error::from)?;
        }
    }
    Ok(json!({
        "dataset": fingerprint(&ds),
        "valid": failures.is_empty(),
        "failure": if failures.is_empty() { Value::Null } else { json!(failures.join("; ")) },
        "evaluation": ev,
        "certificate": certificate,
    }))
}

fn oracle(c: &Common) -> Outcome<Value> {
    let ds = load_input(c)?;
    let loss = loss_model(c)?;
    let relu = exact_primal(&ds, &loss, Arch::Relu)?;
    let gated = exact_primal(&ds, &loss, Arch::GatedRelu)?;
    let dual = exact_dual_with(&ds, &loss)?;
    let ratio = geometric_ratio(&ds, &dual.lambda).ok();
    Ok(json!({
        "dataset": fingerprint(&ds),
        "regime": tag_name(classify_dataset(&ds, CLASSIFY_TOL).tag),
        "p_relu": relu.p,
        "p_gated": gated.p,
        "d": dual.d,
        "lambda": dual.lambda,
        "c_star": ratio.as_ref().map(|g| finite(g.c_star)),
        "patterns": relu.patterns,
        "network": relu.network.to_json(),
    }))
}

fn read_matrix(path: &Path) -> Outcome<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = if Format::from_path(path) == Format::Json {
        serde_json::from_str(&std::fs::read_to_string(path).map_err(Error::from)?).map_err(Error::from)?
    } else {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Failure::usage(e.to_string()))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Failure::usage(e.to_string()))?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| Failure::usage(format!("matrix entry: {e}")))?);
        }
        rows
    };
    let m = rows.len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(Failure::usage("matrix must be square"));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

fn maxcut(a: &MaxcutArgs) -> Outcome<Value> {
    let path = a.common.input.as_ref().ok_or_else(|| Failure::usage("--input is required"))?;
    let q = read_matrix(path)?;
    let brute = if q.nrows() <= BRUTE_CAP {
        let (v, z) = maxcut_bruteforce(&q)?;
        json!({ "value": v, "z": z })
    } else {
        Value::Null
    };
    let sdp = sdp_relaxation(&q, a.common.tol)?;
    let gw = gw_round(&sdp.z, &q, a.k, a.common.seed)?;
    let best = gw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "m": q.nrows(),
        "brute": brute,
        "sdp": { "objective": sdp.objective, "upper_bound": sdp.upper_bound, "primal_residual": sdp.primal_residual },
        "gw": { "k": gw.k, "mean": gw.mean, "stderr": gw.stderr, "best": finite(best) },
    }))
}

#[derive(Serialize)]
struct Row {
    seed: u64,
    p: Option<f64>,
    #[serde(rename = "P_exact")]
    p_exact: Option<f64>,
    ratio: Option<f64>,
    feasible: bool,
    error: Option<String>,
}

fn experiment_row(e: &ExperimentArgs, loss: &LossModel, seed: u64) -> Row {
    let kind = match e.kind {
        KindArg::Ortho => ClassTag::OrthogonalSeparable,
        KindArg::Negcorr => ClassTag::NegativeCorrelation,
        KindArg::General => ClassTag::General,
    };
    let run = || -> Outcome<(f64, f64, bool)> {
        let ds = generate_synthetic(kind, e.n, e.d, seed)?;
        let exact = exact_primal(&ds, loss, Arch::Relu)?;
        let mut approx = e.approx.clone();
        if approx.c.is_none() && pick_method(&ds, approx.method) == MethodArg::Geo {
            let dual = exact_dual_with(&ds, loss)?;
            let g = geometric_ratio(&ds, &dual.lambda)?;
            approx.c = Some(0.9 * g.c_star.min(1.0 / g.c_star));
        }
        let common = Common { seed, ..e.common.clone() };
        let (_, r) = approximate(&ds, loss, &common, &approx)?;
        let feasible = r.evaluation.as_ref().is_some_and(|ev| ev.feasible);
        Ok((r.p, exact.p, feasible))
    };
    match run() {
        Ok((p, big_p, feasible)) => {
            Row { seed, p: Some(p), p_exact: Some(big_p), ratio: Some(p / big_p), feasible, error: None }
        }
        Err(f) => Row { seed, p: None, p_exact: None, ratio: None, feasible: false, error: Some(f.message) },
    }
}

fn experiment(e: &ExperimentArgs) -> Outcome<(Value, Option<String>)> {
    let loss = loss_model(&e.common)?;
    let start = e.common.seed;
    let rows: Vec<Row> = (start..start + e.seeds).into_par_iter().map(|s| experiment_row(e, &loss, s)).collect();
    let csv = match e.common.format {
        FormatArg::Csv => {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
            let mut s = String::from("seed,p,P_exact,ratio,feasible\n");
            for r in &rows {
                s.push_str(&format!("{},{},{},{},{}\n", r.seed, opt(r.p), opt(r.p_exact), opt(r.ratio), r.feasible));
            }
            Some(s)
        }
        FormatArg::Json => None,
    };
    Ok((json!({ "rows": rows }), csv))
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Classify(_) => "classify",
        Command::Solve(_) => "solve",
        Command::Verify(_) => "verify",
        Command::Oracle(_) => "oracle",
        Command::Maxcut(_) => "maxcut",
        Command::Experiment(_) => "experiment",
    }
}

fn common(c: &Command) -> &Common {
    match c {
        Command::Classify(c) | Command::Oracle(c) => c,
        Command::Solve(s) => &s.common,
        Command::Verify(v) => &v.common,
        Command::Maxcut(m) => &m.common,
        Command::Experiment(e) => &e.common,
    }
}

fn options(c: &Command) -> Value {
    let v = match c {
        Command::Classify(c) | Command::Oracle(c) => serde_json::to_value(c),
        Command::Solve(s) => serde_json::to_value(s),
        Command::Verify(v) => serde_json::to_value(v),
        Command::Maxcut(m) => serde_json::to_value(m),
        Command::Experiment(e) => serde_json::to_value(e),
    };
    v.unwrap_or(Value::Null)
}

fn emit(text: &str, output: Option<&PathBuf>) -> ExitCode {
    match output {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                let body = json!({ "schema": "v1", "error": { "kind": "usage", "message": e.to_string() } });
                println!("{body}");
                return ExitCode::from(2);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = json!({ "schema": "v1", "error": { "kind": "usage", "message": e.kind().to_string(), "detail": e.to_string() } });
            println!("{body}");
            return ExitCode::from(2);
        }
    };
    let com = common(&cli.command).clone();
    if com.threads == 0 {
        println!("{}", json!({ "schema": "v1", "error": { "kind": "usage", "message": "--threads must be at least 1" } }));
        return ExitCode::from(2);
    }
    // ignore the error when a pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(com.threads).build_global();

    let name = subcommand_name(&cli.command);
    let command = json!({ "argv": argv[1..], "subcommand": name, "options": options(&cli.command) });
    let started = Instant::now();
    let result = match &cli.command {
        Command::Classify(c) => classify(c).map(|v| (v, None)),
        Command::Solve(s) => solve(s).map(|v| (v, None)),
        Command::Verify(v) => verify(v).map(|v| (v, None)),
        Command::Oracle(c) => oracle(c).map(|v| (v, None)),
        Command::Maxcut(m) => maxcut(m).map(|v| (v, None)),
        Command::Experiment(e) => experiment(e),
    };
    let wall = started.elapsed().as_secs_f64();
    match result {
        Ok((_, Some(csv))) => emit(&csv, com.output.as_ref()),
        Ok((body, None)) => {
            let mut report = json!({ "schema": "v1", "command": command, "seed": com.seed, "wall_time_s": wall });
            if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
                r.extend(b);
            }
            let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            emit(&text, com.output.as_ref())
        }
        Err(f) => {
            let body = json!({
                "schema": "v1",
                "command": command,
                "error": { "kind": f.kind, "message": f.message },
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("error serializes"));
            ExitCode::from(f.code)
        }
    }
}
