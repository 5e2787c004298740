//! The `urnld` command line.
//!
//! Every subcommand computes all of its outputs in memory first and writes
//! them in one pass, so a failed run leaves no partial files behind.
//! Exit codes: 0 success, 1 failed check or analysis, 2 usage or parse
//! error, 3 resource cap.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, OneOrMany, OutputFormat, SaSection};
use crate::drift::{
    equilibrium_solve, monotonicity_check, remark_condition_checks, DriftProfile, DEFAULT_TOL,
};
use crate::error::{check_cap, UrnError};
use crate::exact::{dp_rows, DEFAULT_EXACT_CAP};
use crate::ldp::{
    bound_verification, martingale_sum_exceedance, mc_tail_grid, rate_fit, Lemma31Params,
    TailEstimate, DEFAULT_WORK_CAP,
};
use crate::model::{simulate_with, CheckStatus, UrnConfig, DEFAULT_PATH_CAP};
use crate::rng::stream_rng;
use crate::sa::{condition_audit, run_sa_capped, tail_experiment, urn_as_sa, urn_as_sa_with_k};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAP: i32 = 3;

/// Rows allowed in one `paths.csv`.
const MAX_PATH_ROWS: u64 = 20_000_000;

#[derive(Debug, Parser)]
#[command(
    name = "urnld",
    version,
    about = "Nonlinear unbalanced urn experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the model conditions and the sufficient conditions for a monotone drift.
    Check(Common),
    /// Solve for the equilibrium proportion.
    Equilibrium(Common),
    /// Simulate urn paths.
    Simulate(Common),
    /// Exact distribution of the proportion, with exact tails when eps is given.
    Exact(Common),
    /// Monte Carlo tail probabilities and an exponential rate fit.
    Ldp(Common),
    /// Stochastic approximation tail experiment and condition audit.
    Sa(Common),
    /// Audit the one-step bounds and the martingale-sum bound.
    Bounds(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (`section.key = value` lines) or a run manifest.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Run even when the model conditions fail.
    #[arg(long)]
    allow_invalid: bool,
    /// Clopper-Pearson half-widths for estimates with fewer than 10 hits.
    #[arg(long)]
    exact_ci: bool,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<UrnError> for Failure {
    fn from(e: UrnError) -> Self {
        let code = match e {
            UrnError::ResourceCap { .. } => EXIT_CAP,
            UrnError::InvalidConfig(_) | UrnError::Parameter(_) | UrnError::Domain { .. } => {
                EXIT_USAGE
            }
            UrnError::InsufficientPoints { .. }
            | UrnError::RangeViolation { .. }
            | UrnError::Unsupported(_) => EXIT_FAILED,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format!("{:.16e}", if *v == 0.0 { 0.0 } else { *v }),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Num(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

struct Table {
    stem: &'static str,
    header: &'static [&'static str],
    rows: Vec<Vec<Cell>>,
}

const PATHS_HEADER: &[&str] = &["trial", "step", "y1", "y2", "t", "z", "outcome", "delta_m"];
const EXACT_HEADER: &[&str] = &["n", "k", "z", "probability"];
const TAILS_HEADER: &[&str] = &["n", "eps", "trials", "hits", "p_hat", "ci99", "provenance"];
const RATEFIT_HEADER: &[&str] = &[
    "a_hat",
    "log_c_hat",
    "r_squared",
    "points_used",
    "points_zero",
];
const BOUNDS_HEADER: &[&str] = &[
    "check_id",
    "description",
    "status",
    "worst_value",
    "worst_step",
];

/// Everything a subcommand produced, held until the run is complete.
struct Run {
    command: &'static str,
    config: ExperimentConfig,
    format: OutputFormat,
    files: Vec<(String, Vec<u8>)>,
    status: i32,
    messages: Vec<String>,
}

impl Run {
    fn table(&mut self, table: Table) -> Outcome<()> {
        let (name, bytes) = match self.format {
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(table.header).map_err(io_failure)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(Cell::csv))
                        .map_err(io_failure)?;
                }
                let bytes = w.into_inner().map_err(|e| io_failure(e.into_error()))?;
                (format!("{}.csv", table.stem), bytes)
            }
            OutputFormat::Json => {
                let records: Vec<Value> = table
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(
                            table
                                .header
                                .iter()
                                .zip(row)
                                .map(|(h, c)| (h.to_string(), c.json()))
                                .collect(),
                        )
                    })
                    .collect();
                (format!("{}.json", table.stem), pretty(&records)?)
            }
        };
        self.files.push((name, bytes));
        Ok(())
    }

    fn report<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let bytes = pretty(value)?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn fail(&mut self, message: impl Into<String>) {
        self.status = EXIT_FAILED;
        self.messages.push(message.into());
    }
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> Outcome<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::new(EXIT_FAILED, format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn io_failure<E: std::fmt::Display>(e: E) -> Failure {
    Failure::new(EXIT_FAILED, format!("write failed: {e}"))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn execute(cli: Cli) -> Outcome<i32> {
    let (name, common) = match &cli.command {
        Command::Check(c) => ("check", c),
        Command::Equilibrium(c) => ("equilibrium", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Exact(c) => ("exact", c),
        Command::Ldp(c) => ("ldp", c),
        Command::Sa(c) => ("sa", c),
        Command::Bounds(c) => ("bounds", c),
    };
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.analysis.seed = Some(seed);
    }
    if let Some(format) = common.format {
        config.output.format = Some(format);
    }
    if common.exact_ci {
        config.analysis.exact_ci = true;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    config.output.dir = Some(out.to_string_lossy().into_owned());
    let format = *config.output.format.get_or_insert(OutputFormat::Csv);

    let mut run = Run {
        command: name,
        config,
        format,
        files: Vec::new(),
        status: EXIT_OK,
        messages: Vec::new(),
    };
    let allow_invalid = common.allow_invalid;
    match &cli.command {
        Command::Check(_) => cmd_check(&mut run)?,
        Command::Equilibrium(_) => cmd_equilibrium(&mut run, allow_invalid)?,
        Command::Simulate(_) => cmd_simulate(&mut run, allow_invalid)?,
        Command::Exact(_) => cmd_exact(&mut run, allow_invalid)?,
        Command::Ldp(_) => cmd_ldp(&mut run, allow_invalid)?,
        Command::Sa(_) => cmd_sa(&mut run, allow_invalid)?,
        Command::Bounds(_) => cmd_bounds(&mut run, allow_invalid)?,
    }
    write_outputs(&out, &run)?;
    for m in &run.messages {
        eprintln!("{m}");
    }
    Ok(run.status)
}

fn write_outputs(dir: &Path, run: &Run) -> Outcome<()> {
    let manifest = json!({
        "tool": "urnld",
        "version": env!("CARGO_PKG_VERSION"),
        "command": run.command,
        "seed": run.config.analysis.seed,
        "status": run.status,
        "outputs": run.files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "config": run.config,
    });
    let manifest = pretty(&manifest)?;
    fs::create_dir_all(dir).map_err(io_failure)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let all = run
        .files
        .iter()
        .map(|(n, b)| (n.as_str(), b))
        .chain(std::iter::once(("manifest.json", &manifest)));
    for (name, bytes) in all {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(io_failure(format!("{}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(())
}

fn require_seed(config: &ExperimentConfig) -> Outcome<u64> {
    config
        .analysis
        .seed
        .ok_or_else(|| Failure::usage("this subcommand needs a seed (--seed or analysis.seed)"))
}

/// The urn described by the model section. Failed model conditions end
/// the run with exit 1 unless `allow_invalid` is set.
fn load_urn(config: &ExperimentConfig, allow_invalid: bool) -> Outcome<UrnConfig> {
    let urn = config.model()?.urn_unchecked()?;
    let report = urn.validate();
    if !report.passed() && !allow_invalid {
        let ids: Vec<&str> = report.failures().map(|c| c.id.as_str()).collect();
        return Err(Failure::new(
            EXIT_FAILED,
            format!("model conditions failed: {}", ids.join(", ")),
        ));
    }
    Ok(urn)
}

fn tolerance(config: &mut ExperimentConfig) -> Outcome<f64> {
    let tol = *config.analysis.tol.get_or_insert(DEFAULT_TOL);
    if !(tol > 0.0) {
        return Err(Failure::usage(format!(
            "analysis.tol = {tol} must be positive"
        )));
    }
    Ok(tol)
}

/// The unique equilibrium, or exit 1 listing every root found.
fn unique_equilibrium(urn: &UrnConfig, tol: f64) -> Outcome<f64> {
    let profile = DriftProfile::new(urn.matrix, urn.skew.clone());
    let report = equilibrium_solve(&profile, tol)?;
    report.y_star.ok_or_else(|| {
        Failure::new(
            EXIT_FAILED,
            format!(
                "no unique equilibrium; roots found: {:?}",
                report.roots_found
            ),
        )
    })
}

fn step_grid(config: &mut ExperimentConfig) -> Outcome<Vec<u64>> {
    let a = &mut config.analysis;
    match (&a.n_grid, a.n) {
        (Some(g), _) if !g.is_empty() => Ok(g.clone()),
        (_, Some(n)) => {
            a.n_grid = Some(vec![n]);
            Ok(vec![n])
        }
        _ => Err(Failure::usage("set analysis.n or analysis.n_grid")),
    }
}

fn eps_list(config: &ExperimentConfig) -> Outcome<Vec<f64>> {
    let eps = config.eps_values();
    if eps.is_empty() {
        return Err(Failure::usage("set analysis.eps"));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(Failure::usage(format!("eps = {e} must be positive")));
    }
    Ok(eps)
}

fn tail_rows(estimates: &[TailEstimate]) -> Vec<Vec<Cell>> {
    estimates
        .iter()
        .map(|e| {
            vec![
                Cell::Int(e.n),
                Cell::Num(e.eps),
                Cell::Int(e.trials),
                Cell::Int(e.hits),
                Cell::Num(e.p_hat),
                Cell::Num(e.ci_half_width),
                Cell::Text(e.provenance.label().into()),
            ]
        })
        .collect()
}

/// One rate-fit row per eps, in the order eps was given. A fit with fewer
/// than three positive estimates is written with empty fit columns.
fn ratefit_rows(estimates: &[TailEstimate], eps: &[f64], run: &mut Run) -> Vec<Vec<Cell>> {
    eps.iter()
        .map(|&e| {
            let subset: Vec<TailEstimate> =
                estimates.iter().filter(|t| t.eps == e).copied().collect();
            match rate_fit(&subset) {
                Ok(f) => vec![
                    Cell::Num(f.a_hat),
                    Cell::Num(f.log_c_hat),
                    Cell::Num(f.r_squared),
                    Cell::Int(f.points_used as u64),
                    Cell::Int(f.points_zero as u64),
                ],
                Err(err) => {
                    run.messages.push(format!("rate fit at eps = {e}: {err}"));
                    let used = subset.iter().filter(|t| t.p_hat > 0.0).count() as u64;
                    vec![
                        Cell::Empty,
                        Cell::Empty,
                        Cell::Empty,
                        Cell::Int(used),
                        Cell::Int(subset.len() as u64 - used),
                    ]
                }
            }
        })
        .collect()
}

fn cmd_check(run: &mut Run) -> Outcome<()> {
    let tol = tolerance(&mut run.config)?;
    let urn = run.config.model()?.urn_unchecked()?;
    let validation = urn.validate();
    let profile = DriftProfile::new(urn.matrix, urn.skew.clone());
    let monotonicity = monotonicity_check(&profile);
    let remark = remark_condition_checks(&urn.matrix, &urn.skew);
    let equilibrium = equilibrium_solve(&profile, tol)?;

    let mut failed: Vec<String> = validation.failures().map(|c| c.id.clone()).collect();
    if !monotonicity.non_increasing {
        failed.push("drift:monotone".into());
    }
    let remark_json = match &remark {
        Ok(r) => {
            if !r.passed {
                failed.extend(
                    r.inequalities
                        .iter()
                        .filter(|i| !i.holds)
                        .map(|i| format!("remark:{}", i.name)),
                );
                if r.inequalities.iter().all(|i| i.holds) {
                    failed.push("remark".into());
                }
            }
            serde_json::to_value(r).unwrap_or(Value::Null)
        }
        Err(e) => json!({ "applicable": false, "reason": e.to_string() }),
    };
    let flagged: Vec<&str> = validation
        .checks
        .iter()
        .filter(|c| c.status == CheckStatus::Flag)
        .map(|c| c.id.as_str())
        .collect();
    let report = json!({
        "passed": failed.is_empty(),
        "failed": failed,
        "flagged": flagged,
        "conditions": validation.checks,
        "monotonicity": monotonicity,
        "remark": remark_json,
        "equilibrium": equilibrium,
    });
    run.report("check.json", &report)?;
    if !failed.is_empty() {
        run.fail(format!("failed checks: {}", failed.join(", ")));
    }
    Ok(())
}

fn cmd_equilibrium(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let tol = tolerance(&mut run.config)?;
    let urn = load_urn(&run.config, allow_invalid)?;
    let profile = DriftProfile::new(urn.matrix, urn.skew.clone());
    let report = equilibrium_solve(&profile, tol)?;
    let unique = report.unique();
    let roots = report.roots_found.clone();
    run.report(
        "equilibrium.json",
        &json!({
            "unique": unique,
            "istar": [report.istar_lo, report.istar_hi],
            "y_star": report.y_star,
            "h_prime_at_root": report.h_prime_at_root,
            "stable": report.stable,
            "report": report,
        }),
    )?;
    if !unique {
        run.fail(format!("no unique equilibrium; roots found: {roots:?}"));
    }
    Ok(())
}

fn cmd_simulate(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let urn = load_urn(&run.config, allow_invalid)?;
    let seed = require_seed(&run.config)?;
    let a = &mut run.config.analysis;
    let n = *a.n.get_or_insert(100);
    let trials = *a.trials.get_or_insert(1);
    let cap = *a.cap.get_or_insert(DEFAULT_PATH_CAP);
    if trials == 0 {
        return Err(Failure::usage("analysis.trials must be at least 1"));
    }
    check_cap(n, cap)?;
    check_cap(trials.saturating_mul(n + 1), MAX_PATH_ROWS)?;

    let paths = (0..trials)
        .into_par_iter()
        .map(|trial| simulate_with(&urn, n, seed, cap, &mut stream_rng(seed, trial)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(((n + 1) * trials) as usize);
    for (trial, path) in paths.iter().enumerate() {
        for (i, s) in path.states.iter().enumerate() {
            let step = i.checked_sub(1).map(|j| &path.steps[j]);
            rows.push(vec![
                Cell::Int(trial as u64),
                Cell::Int(s.n),
                Cell::Num(s.y1),
                Cell::Num(s.y2),
                Cell::Num(s.t),
                Cell::Num(s.z),
                step.map_or(Cell::Empty, |r| Cell::Text(r.outcome.label().into())),
                step.map_or(Cell::Empty, |r| Cell::Num(r.delta_m)),
            ]);
        }
    }
    run.table(Table {
        stem: "paths",
        header: PATHS_HEADER,
        rows,
    })
}

fn cmd_exact(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let urn = load_urn(&run.config, allow_invalid)?;
    let grid = step_grid(&mut run.config)?;
    let cap = *run.config.analysis.cap.get_or_insert(DEFAULT_EXACT_CAP);
    let eps = run.config.eps_values();
    let rows_by_n = dp_rows(&urn, &grid, cap)?;

    let mut rows = Vec::new();
    for d in &rows_by_n {
        for atom in &d.support {
            rows.push(vec![
                Cell::Int(d.n),
                Cell::Int(atom.k),
                Cell::Num(atom.z),
                Cell::Num(atom.probability),
            ]);
        }
    }
    run.table(Table {
        stem: "exact",
        header: EXACT_HEADER,
        rows,
    })?;

    if !eps.is_empty() {
        let eps = eps_list(&run.config)?;
        let tol = tolerance(&mut run.config)?;
        let y_star = unique_equilibrium(&urn, tol)?;
        let mut tails = Vec::new();
        for d in &rows_by_n {
            for &e in &eps {
                tails.push(TailEstimate::exact(d.n, e, d.tail(y_star, e)));
            }
        }
        run.table(Table {
            stem: "tails",
            header: TAILS_HEADER,
            rows: tail_rows(&tails),
        })?;
        let fits = ratefit_rows(&tails, &eps, run);
        run.table(Table {
            stem: "ratefit",
            header: RATEFIT_HEADER,
            rows: fits,
        })?;
    }
    Ok(())
}

fn cmd_ldp(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let urn = load_urn(&run.config, allow_invalid)?;
    let seed = require_seed(&run.config)?;
    let grid = step_grid(&mut run.config)?;
    let eps = eps_list(&run.config)?;
    let tol = tolerance(&mut run.config)?;
    let a = &mut run.config.analysis;
    let trials = *a.trials.get_or_insert(10_000);
    let cap = *a.cap.get_or_insert(DEFAULT_WORK_CAP);
    let exact_ci = a.exact_ci;
    if trials == 0 {
        return Err(Failure::usage("analysis.trials must be at least 1"));
    }
    let y_star = unique_equilibrium(&urn, tol)?;
    let mut tails = mc_tail_grid(&urn, y_star, &grid, &eps, trials, seed, cap)?;
    if exact_ci {
        tails = tails
            .into_iter()
            .map(TailEstimate::with_exact_interval_for_rare)
            .collect();
    }
    run.table(Table {
        stem: "tails",
        header: TAILS_HEADER,
        rows: tail_rows(&tails),
    })?;
    let fits = ratefit_rows(&tails, &eps, run);
    run.table(Table {
        stem: "ratefit",
        header: RATEFIT_HEADER,
        rows: fits,
    })
}

fn cmd_sa(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let seed = require_seed(&run.config)?;
    let grid = step_grid(&mut run.config)?;
    let eps = eps_list(&run.config)?;
    let tol = tolerance(&mut run.config)?;
    let section = run.config.sa.get_or_insert_with(SaSection::default).clone();
    let (problem, x_star) = match section.synthetic()? {
        Some(p) => p,
        None => {
            let urn = load_urn(&run.config, allow_invalid)?;
            let y_star = unique_equilibrium(&urn, tol)?;
            let problem = match run.config.analysis.k_hat {
                Some(k) => urn_as_sa_with_k(&urn, k),
                None => urn_as_sa(&urn),
            };
            (problem, y_star)
        }
    };
    let a = &mut run.config.analysis;
    let trials = *a.trials.get_or_insert(10_000);
    let cap = *a.cap.get_or_insert(DEFAULT_PATH_CAP);
    let exact_ci = a.exact_ci;
    if trials == 0 {
        return Err(Failure::usage("analysis.trials must be at least 1"));
    }

    let mut experiments = Vec::new();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for &e in &eps {
        let mut x = tail_experiment(&problem, x_star, &grid, e, trials, seed)?;
        if exact_ci {
            x.upper = x
                .upper
                .into_iter()
                .map(TailEstimate::with_exact_interval_for_rare)
                .collect();
            x.lower = x
                .lower
                .into_iter()
                .map(TailEstimate::with_exact_interval_for_rare)
                .collect();
        }
        upper.extend(x.upper.iter().copied());
        lower.extend(x.lower.iter().copied());
        experiments.push(x);
    }
    let audit_n = grid.iter().copied().max().unwrap_or(0);
    let trajectory = run_sa_capped(&problem, audit_n, seed, cap)?;
    let audit = condition_audit(&trajectory);

    run.table(Table {
        stem: "tails_upper",
        header: TAILS_HEADER,
        rows: tail_rows(&upper),
    })?;
    run.table(Table {
        stem: "tails_lower",
        header: TAILS_HEADER,
        rows: tail_rows(&lower),
    })?;
    run.report(
        "sa_report.json",
        &json!({
            "x_star": x_star,
            "bounded": problem.bounded,
            "constants": problem.constants,
            "experiments": experiments,
            "audit_steps": audit_n,
            "audit": audit,
        }),
    )?;
    if !audit.passed() {
        let failed: Vec<&str> = audit
            .conditions
            .iter()
            .filter(|c| c.status == crate::sa::AuditStatus::Fail)
            .map(|c| c.condition.as_str())
            .collect();
        run.fail(format!(
            "condition audit failed: {} (recursion residual {:e})",
            failed.join(", "),
            audit.max_recursion_residual
        ));
    }
    Ok(())
}

fn cmd_bounds(run: &mut Run, allow_invalid: bool) -> Outcome<()> {
    let urn = load_urn(&run.config, allow_invalid)?;
    let seed = require_seed(&run.config)?;
    let tol = tolerance(&mut run.config)?;
    let a = &mut run.config.analysis;
    let n = *a.n.get_or_insert(10_000);
    let paths = *a.paths.get_or_insert(100);
    let trials = *a.trials.get_or_insert(10_000);
    let eps_inclusion = *a.eps_inclusion.get_or_insert(0.05);
    let beta = *a.beta.get_or_insert(std::f64::consts::E);
    let k = *a.k.get_or_insert(100.min(n.max(1)));
    let eps = match a.eps.get_or_insert(OneOrMany::One(0.5)).values().as_slice() {
        [e] => *e,
        _ => return Err(Failure::usage("bounds takes a single analysis.eps")),
    };
    let k_override = a.k_hat;
    if paths == 0 || trials == 0 {
        return Err(Failure::usage(
            "analysis.paths and analysis.trials must be at least 1",
        ));
    }
    let y_star = unique_equilibrium(&urn, tol)?;
    let report = bound_verification(&urn, n, paths, seed, y_star, eps_inclusion)?;
    let big_k = k_override.unwrap_or(report.k_hat);
    let params = Lemma31Params {
        beta,
        k,
        n,
        eps,
        big_k,
        matrix: urn.matrix,
    };
    let lemma = params.evaluate()?;
    let observed = martingale_sum_exceedance(&urn, k, n, eps, trials, seed)?;
    let lemma_ok = observed.p_hat <= lemma.bound;

    let mut rows: Vec<Vec<Cell>> = report
        .checks
        .iter()
        .map(|c| {
            vec![
                Cell::Text(c.id.clone()),
                Cell::Text(c.description.clone()),
                Cell::Text(status_label(c.status).into()),
                Cell::Num(c.worst_value),
                c.worst_step.map_or(Cell::Empty, Cell::Int),
            ]
        })
        .collect();
    rows.push(vec![
        Cell::Text("martingale_sum_bound".into()),
        Cell::Text(format!(
            "frequency of |sum_{{i=k}}^n dM/T| >= eps is at most the explicit bound {:.6e}",
            lemma.bound
        )),
        Cell::Text(
            status_label(if lemma_ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            })
            .into(),
        ),
        Cell::Num(observed.p_hat),
        Cell::Empty,
    ]);
    run.table(Table {
        stem: "bounds",
        header: BOUNDS_HEADER,
        rows,
    })?;
    run.report(
        "bounds_report.json",
        &json!({
            "report": report,
            "martingale_sum": {
                "params": params,
                "evaluation": lemma,
                "observed": observed,
                "passed": lemma_ok,
            },
        }),
    )?;
    let mut failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| c.id.clone())
        .collect();
    if !lemma_ok {
        failed.push("martingale_sum_bound".into());
    }
    if !failed.is_empty() {
        run.fail(format!("failed bounds: {}", failed.join(", ")));
    }
    Ok(())
}

fn status_label(s: CheckStatus) -> &'static str {
    match s {
        CheckStatus::Pass => "pass",
        CheckStatus::Fail => "fail",
        CheckStatus::Flag => "flag",
    }
}
