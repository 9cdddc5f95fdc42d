//! Command-line front end.
//!
//! ```text
//! mgcc section analyze --config <file>
//! mgcc tandem solve    --config <file>
//! mgcc tandem sweep    --config <file>
//! mgcc oracle compare  --config <file>
//! ```
//!
//! Exit codes: 0 success, 1 domain error, 2 config error, 3 iteration
//! non-convergence.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagram::{FundamentalDiagram, SectionSpec};
use crate::error::Error;
use crate::format::sig12;
use crate::oracle::{self, OracleComparison};
use crate::section::{
    performance_measures, stationary_flow_form, stationary_speed_form,
};
use crate::tandem::{SolveMode, SolverOptions, Tandem, TandemConfig, TandemSolution};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mgcc", version, about = "Stationary analysis of M/G/c/c road sections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single-section analysis.
    Section {
        #[command(subcommand)]
        action: SectionAction,
    },
    /// Two sections in tandem.
    Tandem {
        #[command(subcommand)]
        action: TandemAction,
    },
    /// Comparison against the exact joint Markov chain.
    Oracle {
        #[command(subcommand)]
        action: OracleAction,
    },
}

#[derive(Debug, Subcommand)]
enum SectionAction {
    /// Stationary distribution and performance report.
    Analyze(ConfigArg),
}

#[derive(Debug, Subcommand)]
enum TandemAction {
    /// Solve the tandem at one arrival rate.
    Solve(ConfigArg),
    /// Solve over a range of arrival rates.
    Sweep(ConfigArg),
}

#[derive(Debug, Subcommand)]
enum OracleAction {
    Compare(ConfigArg),
}

#[derive(Debug, clap::Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Bisection,
    Iteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    #[default]
    Flow,
    Speed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub path: PathBuf,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Sweep {
    /// `from, from + step, ...` up to and including `to`.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.from + k as f64 * self.step).collect()
    }
}

/// JSON run configuration shared by all commands.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sections: Vec<SectionSpec>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_sweep: Option<Sweep>,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub form: Form,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub theta0: Option<f64>,
    pub output: Output,
}

enum Rates {
    Single(f64),
    Sweep(Vec<f64>),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        match (self.lambda, self.lambda_sweep) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either lambda or lambda_sweep, not both".into()))
            }
            (None, None) => return Err(CliError::Config("missing lambda or lambda_sweep".into())),
            (Some(l), None) if !l.is_finite() => {
                return Err(CliError::Config(format!("lambda must be finite, got {l}")))
            }
            (None, Some(s)) => {
                if !(s.step > 0.0) {
                    return Err(CliError::Config(format!("sweep step must be > 0, got {}", s.step)));
                }
                if !(s.from <= s.to) || !s.from.is_finite() || !s.to.is_finite() {
                    return Err(CliError::Config(format!(
                        "sweep needs from <= to, got {} .. {}",
                        s.from, s.to
                    )));
                }
            }
            _ => {}
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(CliError::Config(format!("tol must be > 0, got {tol}")));
            }
        }
        if self.max_iter == Some(0) {
            return Err(CliError::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    fn rates(&self) -> Rates {
        match (self.lambda, self.lambda_sweep) {
            (Some(l), _) => Rates::Single(l),
            (None, Some(s)) => Rates::Sweep(s.points()),
            (None, None) => unreachable!("validated"),
        }
    }

    fn section_count(&self, expected: usize) -> Result<(), CliError> {
        if self.sections.len() != expected {
            return Err(CliError::Config(format!(
                "command needs exactly {expected} section(s), got {}",
                self.sections.len()
            )));
        }
        Ok(())
    }

    fn tandem(&self, lambda: f64) -> Result<TandemConfig, CliError> {
        self.section_count(2)?;
        let s1 = self.sections[0].diagram()?;
        let s2 = self.sections[1].diagram()?;
        Ok(TandemConfig::new(s1, s2, lambda)?)
    }

    fn options(&self, cfg: &TandemConfig) -> SolverOptions {
        let defaults = SolverOptions::for_config(cfg);
        SolverOptions {
            tol: self.tol.unwrap_or(defaults.tol),
            max_iter: self.max_iter.unwrap_or(defaults.max_iter),
            theta0: self.theta0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Model(Error::NonConvergence { .. }) => EXIT_NON_CONVERGENCE,
            CliError::Model(_) | CliError::Io { .. } => EXIT_DOMAIN,
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("mgcc: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: &Command) -> Result<(), CliError> {
    let (arg, action): (&ConfigArg, fn(&RunConfig, &str) -> Result<(), CliError>) = match command {
        Command::Section {
            action: SectionAction::Analyze(a),
        } => (a, section_analyze),
        Command::Tandem {
            action: TandemAction::Solve(a),
        } => (a, tandem_solve),
        Command::Tandem {
            action: TandemAction::Sweep(a),
        } => (a, tandem_sweep),
        Command::Oracle {
            action: OracleAction::Compare(a),
        } => (a, oracle_compare),
    };
    let text = fs::read_to_string(&arg.config).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", arg.config.display()))
    })?;
    let cfg = RunConfig::parse(&text)?;
    action(&cfg, &config_hash(&text))
}

fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn csv_header(hash: &str, columns: &str) -> String {
    format!("# config-sha256: {hash}\n{columns}\n")
}

/// `<path minus extension>.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn section_analyze(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    cfg.section_count(1)?;
    let lambda = match cfg.rates() {
        Rates::Single(l) => l,
        Rates::Sweep(_) => {
            return Err(CliError::Config("section analyze takes a single lambda".into()))
        }
    };
    let spec = &cfg.sections[0];
    let dist = match cfg.form {
        Form::Flow => stationary_flow_form(lambda, &spec.diagram()?)?,
        Form::Speed => stationary_speed_form(lambda, &spec.params()?, &spec.model)?,
    };
    if !dist.is_normalized() {
        return Err(Error::Contract("distribution failed the normalization check".into()).into());
    }
    let report = performance_measures(lambda, &dist);
    let out = &cfg.output;
    let body = match out.format {
        OutputFormat::Json => to_json(&dist),
        OutputFormat::Csv => {
            let mut s = csv_header(hash, "n,prob");
            for (n, p) in dist.probs().iter().enumerate() {
                s.push_str(&format!("{n},{}\n", sig12(*p)));
            }
            s
        }
    };
    write(&out.path, &body)?;
    write(&sibling(&out.path, "report.json"), &to_json(&report))
}

fn solve(cfg: &RunConfig, tandem: &TandemConfig) -> Result<TandemSolution, Error> {
    let opts = cfg.options(tandem);
    let model = Tandem::new(tandem.clone());
    match cfg.solver {
        SolverKind::Bisection => model.solve_bisection(opts.tol),
        SolverKind::Iteration => {
            let theta0 = opts.theta0.unwrap_or(tandem.lambda());
            model.solve_iteration(theta0, opts.max_iter, opts.tol)
        }
    }
}

#[derive(Serialize)]
struct FailedSolve<'a> {
    lambda: f64,
    error: String,
    trace: &'a [f64],
}

/// Writes the iterate trace of a failed solve and passes the error on.
fn report_failure(path: &Path, lambda: f64, err: Error) -> CliError {
    if let Error::NonConvergence { trace, .. } = &err {
        let doc = FailedSolve {
            lambda,
            error: err.to_string(),
            trace,
        };
        if let Err(io) = write(path, &to_json(&doc)) {
            return io;
        }
    }
    err.into()
}

fn tandem_solve(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let lambda = match cfg.rates() {
        Rates::Single(l) => l,
        Rates::Sweep(_) => return Err(CliError::Config("tandem solve takes a single lambda".into())),
    };
    let tandem = cfg.tandem(lambda)?;
    let out = &cfg.output;
    let solution =
        solve(cfg, &tandem).map_err(|e| report_failure(&sibling(&out.path, "trace.json"), lambda, e))?;
    check_solution(&solution)?;
    let body = match out.format {
        OutputFormat::Json => to_json(&solution),
        OutputFormat::Csv => sweep_csv(hash, &[SweepRow::from(&solution)]),
    };
    write(&out.path, &body)
}

fn check_solution(solution: &TandemSolution) -> Result<(), CliError> {
    if solution.p1.is_normalized() && solution.p2.is_normalized() {
        Ok(())
    } else {
        Err(Error::Contract("tandem distribution failed the normalization check".into()).into())
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub theta: f64,
    pub delta: f64,
    pub mode: SolveMode,
    pub p1_block: f64,
    pub p2_block: f64,
    pub n1_mean: f64,
    pub n2_mean: f64,
    pub w1_hours: Option<f64>,
    pub w2_hours: Option<f64>,
    pub residual: f64,
}

impl From<&TandemSolution> for SweepRow {
    fn from(s: &TandemSolution) -> Self {
        Self {
            lambda: s.lambda,
            theta: s.theta,
            delta: s.delta,
            mode: s.mode,
            p1_block: s.section1.blocking_probability,
            p2_block: s.section2.blocking_probability,
            n1_mean: s.section1.expected_count,
            n2_mean: s.section2.expected_count,
            w1_hours: s.section1.expected_time,
            w2_hours: s.section2.expected_time,
            residual: s.residual,
        }
    }
}

pub const SWEEP_COLUMNS: &str =
    "lambda,theta,delta,mode,p1_block,p2_block,n1_mean,n2_mean,w1_hours,w2_hours,residual";

fn opt(x: Option<f64>) -> String {
    x.map(sig12).unwrap_or_default()
}

fn sweep_csv(hash: &str, rows: &[SweepRow]) -> String {
    let mut s = csv_header(hash, SWEEP_COLUMNS);
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            sig12(r.lambda),
            sig12(r.theta),
            sig12(r.delta),
            r.mode.as_str(),
            sig12(r.p1_block),
            sig12(r.p2_block),
            sig12(r.n1_mean),
            sig12(r.n2_mean),
            opt(r.w1_hours),
            opt(r.w2_hours),
            sig12(r.residual),
        ));
    }
    s
}

fn tandem_sweep(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let rates = match cfg.rates() {
        Rates::Single(l) => vec![l],
        Rates::Sweep(points) => points,
    };
    let configs = rates
        .iter()
        .map(|&l| cfg.tandem(l))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<TandemSolution, Error>> =
        configs.par_iter().map(|t| solve(cfg, t)).collect();
    let out = &cfg.output;
    let mut rows = Vec::with_capacity(results.len());
    for (lambda, result) in rates.iter().zip(results) {
        let solution =
            result.map_err(|e| report_failure(&sibling(&out.path, "trace.json"), *lambda, e))?;
        check_solution(&solution)?;
        rows.push(SweepRow::from(&solution));
    }
    let body = match out.format {
        OutputFormat::Json => to_json(&rows),
        OutputFormat::Csv => sweep_csv(hash, &rows),
    };
    write(&out.path, &body)
}

fn oracle_compare(cfg: &RunConfig, hash: &str) -> Result<(), CliError> {
    let (rates, single) = match cfg.rates() {
        Rates::Single(l) => (vec![l], true),
        Rates::Sweep(points) => (points, false),
    };
    let reports = rates
        .par_iter()
        .map(|&l| {
            let tandem = cfg.tandem(l)?;
            let tol = cfg.options(&tandem).tol;
            oracle::compare(&tandem, tol).map_err(CliError::from)
        })
        .collect::<Result<Vec<OracleComparison>, CliError>>()?;
    let out = &cfg.output;
    let body = match out.format {
        OutputFormat::Json if single => to_json(&reports[0]),
        OutputFormat::Json => to_json(&reports),
        OutputFormat::Csv => {
            let mut s = csv_header(hash, "lambda,tv_p1,tv_p2,theta_decomposition,theta_joint");
            for r in &reports {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    sig12(r.lambda),
                    sig12(r.tv_p1),
                    sig12(r.tv_p2),
                    sig12(r.theta_decomposition),
                    sig12(r.theta_joint)
                ));
            }
            s
        }
    };
    write(&out.path, &body)
}

/// Diagram of the `index`-th section of a config, for callers embedding the
/// config format.
pub fn section_diagram(cfg: &RunConfig, index: usize) -> Result<FundamentalDiagram, CliError> {
    let spec = cfg
        .sections
        .get(index)
        .ok_or_else(|| CliError::Config(format!("no section at index {index}")))?;
    Ok(spec.diagram()?)
}
