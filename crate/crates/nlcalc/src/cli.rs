//! Command-line front end: flag parsing, config-file merging, experiment
//! execution, and report emission.
//!
//! Flags override fields of an optional JSON config file (`--config`).
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (non-finite values), 1 anything else. Failures print a
//! machine-readable JSON record to stderr.

use crate::analysis::{
    self, convergence_sweep, geometric_radii, maximal_bound_check, reports_to_csv, SweepConfig,
};
use crate::error::Error;
use crate::fields::{AnalyticField, BoxDomain, Lq};
use crate::kernel::Kernel;
use crate::operators::{EvalPath, NonlocalOperatorSpec, OperatorKind};
use crate::quadrature::build_rule;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "nlcalc",
    version,
    about = "Nonlocal divergence/gradient/curl operators and convergence studies"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Print kernel normalization, moment, and L^a norm tables as CSV
    CheckKernel(CmdArgs),
    /// Evaluate one nonlocal operator value at a point
    Eval(CmdArgs),
    /// Run a delta-sweep convergence study
    Converge(CmdArgs),
    /// Compute the maximal-function L^b report for a field
    Maximal(CmdArgs),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::CheckKernel(_) => "check-kernel",
            Cmd::Eval(_) => "eval",
            Cmd::Converge(_) => "converge",
            Cmd::Maximal(_) => "maximal",
        }
    }

    fn args(&self) -> &CmdArgs {
        match self {
            Cmd::CheckKernel(a) | Cmd::Eval(a) | Cmd::Converge(a) | Cmd::Maximal(a) => a,
        }
    }
}

/// All experiment parameters. Every flag maps to exactly one field here.
#[derive(Debug, Clone, Args, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CmdArgs {
    /// JSON config file; explicit flags override its fields
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Worker thread cap (results are identical for any value)
    #[arg(long)]
    pub threads: Option<usize>,

    /// Spatial dimension (1, 2, or 3)
    #[arg(long)]
    pub n: Option<usize>,

    /// Kernel exponent, 0 < p < n
    #[arg(long)]
    pub p: Option<f64>,

    /// Horizon radius
    #[arg(long)]
    pub delta: Option<f64>,

    /// Horizon ladder for sweeps, comma separated, decreasing
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,

    /// L^q exponents ("1", "2", "inf"), comma separated
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<String>>,

    /// Builtin field name (constant, linear, quadratic, gaussian, bump, trig-bump)
    #[arg(long)]
    pub field: Option<String>,

    /// Row-major coefficient matrix for the linear field
    #[arg(long = "A", value_delimiter = ',', allow_hyphen_values = true)]
    pub a: Option<Vec<f64>>,

    /// Component values for the constant field
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub value: Option<Vec<f64>>,

    /// Window radius for bump / trig-bump fields
    #[arg(long)]
    pub radius: Option<f64>,

    /// Operator: div, grad, or curl
    #[arg(long)]
    pub op: Option<String>,

    /// Evaluation point, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,

    /// Evaluation box as lo,hi (applied to every axis)
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    pub eval_box: Option<Vec<f64>>,

    /// Grid points per axis
    #[arg(long)]
    pub resolution: Option<usize>,

    /// Radial quadrature order (default 8)
    #[arg(long)]
    pub radial_order: Option<usize>,

    /// Angular quadrature order (default 1 / 32 / 12 for n = 1 / 2 / 3)
    #[arg(long)]
    pub angular_order: Option<usize>,

    /// L^b exponent for the maximal report (b > 1)
    #[arg(long)]
    pub b: Option<f64>,

    /// Radius ladder for the maximal function, comma separated
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,

    /// CSV output path
    #[arg(long)]
    pub csv: Option<PathBuf>,

    /// JSON output path
    #[arg(long)]
    pub json: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($cli:expr, $file:expr, $($f:ident),+) => {{
        let mut out = $file;
        $(if $cli.$f.is_some() { out.$f = $cli.$f.clone(); })+
        out.config = $cli.config.clone();
        out
    }};
}

impl CmdArgs {
    /// File config overridden by explicit flags.
    pub fn merged_over(&self, file: CmdArgs) -> CmdArgs {
        merge_fields!(
            self, file, threads, n, p, delta, deltas, q, field, a, value, radius, op, at,
            eval_box, resolution, radial_order, angular_order, b, radii, csv, json
        )
    }
}

/// Serializable experiment description (config-file schema).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    #[serde(flatten)]
    pub args: CmdArgs,
}

const CONFIG_KEYS: &[&str] = &[
    "command",
    "threads",
    "n",
    "p",
    "delta",
    "deltas",
    "q",
    "field",
    "a",
    "value",
    "radius",
    "op",
    "at",
    "eval_box",
    "resolution",
    "radial_order",
    "angular_order",
    "b",
    "radii",
    "csv",
    "json",
];

/// Parses a config file, rejecting unknown keys (serde cannot enforce
/// this through the flattened struct).
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value
        .as_object()
        .ok_or_else(|| "config must be a JSON object".to_string())?;
    for key in obj.keys() {
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(format!("unknown config field {key:?}"));
        }
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliFailure {
    Config(String),
    Numerical(String),
    Other(String),
}

impl CliFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliFailure::Config(_) => 2,
            CliFailure::Numerical(_) => 3,
            CliFailure::Other(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, msg) = match self {
            CliFailure::Config(m) => ("config", m),
            CliFailure::Numerical(m) => ("numerical", m),
            CliFailure::Other(m) => ("other", m),
        };
        serde_json::json!({ "error": msg, "kind": kind, "exit": self.exit_code() }).to_string()
    }
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } | Error::Internal(_) => CliFailure::Numerical(e.to_string()),
            Error::Io(_) => CliFailure::Other(e.to_string()),
            other => CliFailure::Config(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliFailure>;

/// Entry point used by the binary.
pub fn run(cli: Cli) -> CliResult<()> {
    let name = cli.command.name();
    let cli_args = cli.command.args();
    let args = match &cli_args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliFailure::Config(format!("cannot read {}: {e}", path.display())))?;
            let file = parse_config(&text)
                .map_err(|e| CliFailure::Config(format!("bad config file: {e}")))?;
            if file.command != name {
                return Err(CliFailure::Config(format!(
                    "config file is for command {:?}, invoked {:?}",
                    file.command, name
                )));
            }
            cli_args.merged_over(file.args)
        }
        None => cli_args.clone(),
    };

    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliFailure::Config("--threads must be >= 1".into()));
        }
        // harmless if a pool already exists (e.g. in-process reuse)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }

    match cli.command {
        Cmd::CheckKernel(_) => run_check_kernel(&args),
        Cmd::Eval(_) => run_eval(&args),
        Cmd::Converge(_) => run_converge(&args),
        Cmd::Maximal(_) => run_maximal(&args),
    }
}

fn require<T: Clone>(opt: &Option<T>, flag: &str) -> CliResult<T> {
    opt.clone()
        .ok_or_else(|| CliFailure::Config(format!("missing required flag --{flag}")))
}

fn default_angular_order(n: usize) -> usize {
    match n {
        1 => 1,
        2 => 32,
        _ => 12,
    }
}

fn parse_qs(args: &CmdArgs) -> CliResult<Vec<Lq>> {
    let raw = args.q.clone().unwrap_or_else(|| vec!["2".into()]);
    raw.iter()
        .map(|s| Lq::parse(s).map_err(CliFailure::from))
        .collect()
}

fn build_field(args: &CmdArgs, n: usize, vector: bool) -> CliResult<AnalyticField> {
    let name = args.field.clone().unwrap_or_else(|| "gaussian".into());
    let field = match name.as_str() {
        "linear" if args.a.is_some() => {
            let a = args.a.clone().unwrap();
            let m = if vector { n } else { 1 };
            AnalyticField::linear(n, m, a)?
        }
        "constant" if args.value.is_some() => AnalyticField::constant(n, args.value.clone().unwrap())?,
        "bump" if args.radius.is_some() => {
            let r = args.radius.unwrap();
            if vector {
                AnalyticField::bump_vector(n, r)?
            } else {
                AnalyticField::bump_scalar(n, r)?
            }
        }
        other => {
            if vector {
                AnalyticField::builtin_vector(other, n)?
            } else {
                AnalyticField::builtin_scalar(other, n)?
            }
        }
    };
    Ok(field)
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| CliFailure::Other(e.to_string())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run_check_kernel(args: &CmdArgs) -> CliResult<()> {
    let n = require(&args.n, "n")?;
    let p = require(&args.p, "p")?;
    let delta = require(&args.delta, "delta")?;
    let m = args.radial_order.unwrap_or(8);
    let s = args.angular_order.unwrap_or_else(|| default_angular_order(n));

    let kernel = Kernel::new(n, p, delta)?;
    let rule = build_rule(n, p, delta, m, s)?;

    let mut rows: Vec<(String, f64, f64)> = vec![];
    rows.push((
        "second_moment_exact".into(),
        1.0,
        kernel.second_moment_exact(),
    ));
    for j in 0..n {
        let mut alpha = [0u8; 3];
        alpha[j] = 1;
        rows.push((
            format!("second_moment j={}", j + 1),
            1.0,
            rule.moment(&kernel, alpha, j)?,
        ));
    }
    for j in 0..n {
        rows.push((
            format!("moment |alpha|=0 j={}", j + 1),
            0.0,
            rule.moment(&kernel, [0, 0, 0], j)?,
        ));
        for i in 0..n {
            for k in i..n {
                let mut alpha = [0u8; 3];
                alpha[i] += 1;
                alpha[k] += 1;
                rows.push((
                    format!("moment alpha={:?} j={}", &alpha[..n], j + 1),
                    0.0,
                    rule.moment(&kernel, alpha, j)?,
                ));
            }
        }
    }
    // L^a norms: a = 1 is in the kernel rule's exact class
    let a1_exact = kernel.la_norm_exact(1.0)?;
    let a1_numeric = rule.integrate(|x| kernel.eval_radius(crate::kernel::norm(x)))?;
    rows.push(("la_norm a=1".into(), a1_exact, a1_numeric));
    if 1.2 < n as f64 / p {
        // |omega|^a has singularity exponent a p; integrate it with a
        // rule built for that exponent
        let a = 1.2;
        let exact = kernel.la_norm_exact(a)?;
        let aux = build_rule(n, a * p, delta, m, s)?;
        let numeric = aux
            .integrate(|x| kernel.eval_radius(crate::kernel::norm(x)).powf(a))?
            .powf(1.0 / a);
        rows.push((format!("la_norm a={a}"), exact, numeric));
    }

    let mut out = String::from("quantity,exact,numeric,abs_error\n");
    for (label, exact, numeric) in &rows {
        out.push_str(&format!(
            "{label},{exact:.16e},{numeric:.16e},{:.3e}\n",
            (exact - numeric).abs()
        ));
    }
    write_or_print(&args.csv, &out)?;
    if args.json.is_some() {
        let js = serde_json::json!({
            "n": n, "p": p, "delta": delta,
            "omega0": kernel.omega0,
            "alpha_n": kernel.alpha_n,
            "quadrature": { "radial_order": m, "angular_order": s },
            "rows": rows.iter().map(|(l, e, v)| serde_json::json!({
                "quantity": l, "exact": e, "numeric": v
            })).collect::<Vec<_>>(),
        });
        write_or_print(&args.json, &format!("{}\n", serde_json::to_string_pretty(&js).unwrap()))?;
    }
    Ok(())
}

fn run_eval(args: &CmdArgs) -> CliResult<()> {
    let n = require(&args.n, "n")?;
    let p = require(&args.p, "p")?;
    let delta = require(&args.delta, "delta")?;
    let at = require(&args.at, "at")?;
    let op = OperatorKind::parse(&require(&args.op, "op")?)?;
    if at.len() != n {
        return Err(CliFailure::Config(format!(
            "--at has {} coordinates, expected {n}",
            at.len()
        )));
    }
    let m = args.radial_order.unwrap_or(8);
    let s = args.angular_order.unwrap_or_else(|| default_angular_order(n));
    let field = build_field(args, n, op.input_components(n) > 1)?;

    let kernel = Kernel::new(n, p, delta)?;
    let rule = build_rule(n, p, delta, m, s)?;
    let spec = NonlocalOperatorSpec::new(op, kernel, rule, EvalPath::Direct)?;
    let mut out = vec![0.0; op.output_components(n)];
    spec.eval_at(&field, &at, &mut out)?;
    let rendered: Vec<String> = out.iter().map(|v| format!("{v:.16e}")).collect();
    println!("{}", rendered.join(","));
    Ok(())
}

fn run_converge(args: &CmdArgs) -> CliResult<()> {
    let n = require(&args.n, "n")?;
    let p = require(&args.p, "p")?;
    let op = OperatorKind::parse(&require(&args.op, "op")?)?;
    let deltas = args
        .deltas
        .clone()
        .unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05]);
    let qs = parse_qs(args)?;
    let field = build_field(args, n, op.input_components(n) > 1)?;

    let (lo, hi) = match &args.eval_box {
        Some(v) if v.len() == 2 => (v[0], v[1]),
        Some(v) => {
            return Err(CliFailure::Config(format!(
                "--box takes lo,hi, got {} values",
                v.len()
            )))
        }
        None => (-0.4, 0.4),
    };
    let eval_box = BoxDomain::cube(n, lo, hi)?;
    let resolution = match args.resolution {
        Some(r) => r,
        None => {
            let dmin = *deltas.last().ok_or_else(|| {
                CliFailure::Config("--deltas must not be empty".into())
            })?;
            let target = if n == 3 { dmin / 4.0 } else { dmin / 8.0 };
            ((hi - lo) / target).ceil() as usize + 1
        }
    };

    let cfg = SweepConfig {
        field: &field,
        kind: op,
        p,
        qs,
        deltas,
        eval_box,
        resolution,
        radial_order: args.radial_order.unwrap_or(8),
        angular_order: args
            .angular_order
            .unwrap_or_else(|| default_angular_order(n)),
    };
    let reports = convergence_sweep(&cfg)?;

    let csv = reports_to_csv(&reports);
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0]).unwrap()
    } else {
        serde_json::to_string_pretty(&reports).unwrap()
    };
    match (&args.csv, &args.json) {
        (None, None) => print!("{csv}"),
        (csv_path, json_path) => {
            if csv_path.is_some() {
                write_or_print(csv_path, &csv)?;
            }
            if json_path.is_some() {
                write_or_print(json_path, &format!("{json}\n"))?;
            }
            for r in &reports {
                match r.fitted_order {
                    Some(o) => println!(
                        "q={}: fitted_order={o:.4}, max_ratio={:.4e}",
                        r.q,
                        r.rows.iter().map(|x| x.ratio).fold(0.0, f64::max)
                    ),
                    None => println!("q={}: exact (errors at roundoff level)", r.q),
                }
            }
        }
    }
    Ok(())
}

fn run_maximal(args: &CmdArgs) -> CliResult<()> {
    let n = require(&args.n, "n")?;
    let b = args.b.unwrap_or(2.0);
    let field = build_field(args, n, false)?;
    let domain = match &args.eval_box {
        Some(v) if v.len() == 2 => BoxDomain::cube(n, v[0], v[1])?,
        Some(v) => {
            return Err(CliFailure::Config(format!(
                "--box takes lo,hi, got {} values",
                v.len()
            )))
        }
        None => field.support_box,
    };
    let resolution = args.resolution.unwrap_or(301);
    let radii = match &args.radii {
        Some(r) => r.clone(),
        None => {
            let half = (0..n).map(|k| domain.width(k)).fold(f64::MAX, f64::min) / 2.0;
            geometric_radii(half, 32, 1.3)
        }
    };
    let report = maximal_bound_check(&field, b, domain, resolution, &radii)?;
    let json = format!("{}\n", serde_json::to_string_pretty(&report).unwrap());
    write_or_print(&args.json, &json)?;
    Ok(())
}

// re-export for the analysis module path used above
pub use analysis::ConvergenceReport;
