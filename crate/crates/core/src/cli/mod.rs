//! The `habitopt` command line.
//!
//! Exit codes: 0 success, 2 invalid input (including arbitrage), 3 solver
//! failure, 4 a property check failed.

pub mod io;
pub mod repro;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{sweep_csv, verify, wealth_sweep, Check, VerifyOptions};
use crate::error::{Error, Result};
use crate::generate::{generate, EndowmentSpec, Family, Scenario, ScenarioSeed, UtilityKind};
use crate::market::{check_no_arbitrage, classify_market, MarketModel};
use crate::preferences::{HabitPreferences, PreferencesSpec};
use crate::solvers::{solve, Method, Solution};
use crate::tree::AdaptedProcess;
use io::{emit, load_endowment, load_market, load_preferences, read_json, to_json, write_atomic, SolutionFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "habitopt", version, about = "Optimal consumption with habit formation on finite event trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a market for arbitrage and report payoff-space ranks and class.
    Validate(ValidateArgs),
    /// Solve for the optimal consumption plan.
    Solve(SolveArgs),
    /// Run property checks around the optimum.
    Verify(VerifyArgs),
    /// Optimal time-0 consumption over a range of initial endowments.
    Sweep(SweepArgs),
    /// Run a built-in scenario with a known answer.
    Repro(ReproArgs),
    /// Write a seeded random scenario.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also validate preferences against the market's tree.
    #[arg(long)]
    pub prefs: Option<PathBuf>,
    #[arg(long)]
    pub endow: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Input files; a scenario can instead be generated from `--seed`.
#[derive(Debug, Args)]
pub struct ProblemArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub prefs: Option<PathBuf>,
    #[arg(long)]
    pub endow: Option<PathBuf>,
    /// Generate the problem instead of reading files.
    #[arg(long, conflicts_with_all = ["model", "prefs", "endow"])]
    pub seed: Option<u64>,
    #[arg(long, default_value = "general", requires = "seed")]
    pub family: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Newton,
    Oracle,
    Closed,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Check this plan instead of solving.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Comma separated: foc, monotonicity, eta, concavity, envelope.
    #[arg(long, default_value = "foc,monotonicity,eta,concavity,envelope")]
    pub checks: String,
    /// One tolerance for every check, replacing the per-check defaults.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// `a:b:n`, `n` evenly spaced initial endowments from `a` to `b`.
    #[arg(long)]
    pub range: String,
    #[arg(long, value_enum, default_value = "csv")]
    pub emit: Emit,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// homogeneity, convexity, concavity or linearity; 3.1, 5.1 and 5.2 are
    /// accepted for the first three.
    pub scenario: String,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Gross interest factor for the linearity scenario.
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UtilityArg {
    Power,
    Log,
    Exp,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: u64,
    /// bond-only, complete, idiosyncratic, type-c, deterministic-incomplete, general.
    #[arg(long, default_value = "general")]
    pub family: String,
    #[arg(long, default_value_t = 2)]
    pub horizon: usize,
    #[arg(long, default_value_t = 2)]
    pub branching: usize,
    #[arg(long, value_enum, default_value = "power")]
    pub utility: UtilityArg,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// One-lag habit weight; drawn from the seed when absent.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub no_baseline_habit: bool,
    /// Directory receiving model.json, prefs.json and endow.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Maps an error to the exit code of its kind.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_)
        | Error::NonConvergence { .. }
        | Error::BracketFailure(_)
        | Error::InstanceTooLarge { .. }
        | Error::WrongMarketClass(_)
        | Error::WrongUtilityFamily(_)
        | Error::PreconditionViolated(_)
        | Error::DomainViolation { .. }
        | Error::DivisionByZeroSpd { .. }
        | Error::GenerationExhausted { .. } => EXIT_SOLVER,
        _ => EXIT_INVALID,
    }
}

/// Entry point: parses arguments, caps the thread pool from
/// `HABITOPT_THREADS`, runs and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HABITOPT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Validate(a) => validate(a),
        Command::Solve(a) => solve_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Repro(a) => repro_cmd(a),
        Command::Generate(a) => generate_cmd(a),
    }
}

#[derive(Debug, Serialize)]
struct ValidateReport {
    no_arbitrage: bool,
    class: crate::market::MarketClass,
    deterministic_interest: bool,
    /// `dim L_k` for `k = 1..=T`.
    ranks: Vec<usize>,
    atoms: Vec<usize>,
    preferences_valid: Option<bool>,
    endowment_valid: Option<bool>,
}

fn validate(a: &ValidateArgs) -> Result<i32> {
    let m = load_market(&a.model)?;
    check_no_arbitrage(&m)?;
    let cls = classify_market(&m)?;
    let preferences_valid = a.prefs.as_deref().map(|p| load_preferences(p, &m)).transpose()?.map(|_| true);
    let endowment_valid = a.endow.as_deref().map(|p| load_endowment(p, &m)).transpose()?.map(|_| true);
    let tree = m.tree();
    let report = ValidateReport {
        no_arbitrage: true,
        class: cls.class,
        deterministic_interest: cls.deterministic_interest,
        ranks: cls.ranks,
        atoms: (0..=tree.horizon()).map(|k| tree.n_atoms(k)).collect(),
        preferences_valid,
        endowment_valid,
    };
    emit(a.out.as_deref(), &to_json(&report)?)?;
    Ok(EXIT_OK)
}

fn load_problem(a: &ProblemArgs) -> Result<(MarketModel, HabitPreferences, AdaptedProcess)> {
    if let Some(seed) = a.seed {
        let sc = generate(&ScenarioSeed::new(seed, a.family.parse()?))?;
        return Ok((sc.market, sc.preferences, sc.endowment));
    }
    let need = |p: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        p.clone().ok_or_else(|| Error::Parse(format!("--{flag} is required without --seed")))
    };
    let m = load_market(&need(&a.model, "model")?)?;
    check_no_arbitrage(&m)?;
    let p = load_preferences(&need(&a.prefs, "prefs")?, &m)?;
    let e = load_endowment(&need(&a.endow, "endow")?, &m)?;
    Ok((m, p, e))
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Auto => Method::Auto,
        MethodArg::Newton => Method::Newton,
        MethodArg::Oracle => Method::Oracle,
        MethodArg::Closed => Method::Closed,
    }
}

fn solve_cmd(a: &SolveArgs) -> Result<i32> {
    let (m, p, e) = load_problem(&a.problem)?;
    let s = solve(&m, &p, &e, method(a.method))?;
    emit(a.out.as_deref(), &to_json(&SolutionFile::from(&s))?)?;
    Ok(EXIT_OK)
}

fn verify_cmd(a: &VerifyArgs) -> Result<i32> {
    let (m, p, e) = load_problem(&a.problem)?;
    let checks = a.checks.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<Check>>>()?;
    let opts = match a.tol {
        Some(t) if !(t > 0.0) => return Err(Error::Parse("--tol must be positive".into())),
        Some(t) => VerifyOptions::uniform(t),
        None => VerifyOptions::default(),
    };
    let base = match &a.solution {
        Some(path) => plan_from_file(&m, &p, &e, path)?,
        None => solve(&m, &p, &e, Method::Newton)?,
    };
    let report = verify(&m, &p, &e, &base, &checks, &opts)?;
    emit(a.report.as_deref(), &to_json(&report)?)?;
    Ok(if report.passed { EXIT_OK } else { EXIT_CHECK })
}

fn plan_from_file(m: &MarketModel, p: &HabitPreferences, e: &AdaptedProcess, path: &Path) -> Result<Solution> {
    let file: SolutionFile = read_json(path)?;
    let c = AdaptedProcess::from_levels(m.tree(), file.consumption)?;
    Solution::from_plan(m, p, e, c, &file.method)
}

fn parse_range(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Parse(format!("range '{s}' is not a:b:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n == 0 || !(lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

fn sweep_cmd(a: &SweepArgs) -> Result<i32> {
    let (lo, hi, n) = parse_range(&a.range)?;
    let (m, p, e) = load_problem(&a.problem)?;
    let rows = wealth_sweep(&m, &p, &e, lo, hi, n);
    let text = match a.emit {
        Emit::Csv => sweep_csv(&rows, m.horizon()),
        Emit::Json => to_json(&rows)?,
    };
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

fn repro_cmd(a: &ReproArgs) -> Result<i32> {
    let (text, passed) = match a.scenario.as_str() {
        "3.1" | "homogeneity" => {
            let r = repro::homogeneity(a.seed)?;
            (to_json(&r)?, r.passed)
        }
        "5.1" | "convexity" => {
            let r = repro::convexity()?;
            (to_json(&r)?, r.passed)
        }
        "5.2" | "concavity" => {
            let r = repro::concavity(a.seed)?;
            (to_json(&r)?, r.passed)
        }
        "linearity" => {
            let r = repro::linearity(a.gamma, a.r)?;
            (to_json(&r)?, r.passed)
        }
        other => return Err(Error::Parse(format!("unknown scenario '{other}'"))),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(if passed { EXIT_OK } else { EXIT_CHECK })
}

/// The three files of a scenario, each carrying the seed.
pub fn scenario_files(sc: &Scenario) -> Result<[(String, String); 3]> {
    let mut market = sc.market.to_spec();
    market.seed = Some(sc.seed.seed);
    let mut prefs = PreferencesSpec::from_preferences(&sc.preferences)
        .ok_or_else(|| Error::InvalidPreferences("custom utilities cannot be serialized".into()))?;
    prefs.seed = Some(sc.seed.seed);
    let endow = EndowmentSpec { eps: sc.endowment.to_levels(), seed: Some(sc.seed.seed) };
    Ok([
        ("model.json".into(), to_json(&market)?),
        ("prefs.json".into(), to_json(&prefs)?),
        ("endow.json".into(), to_json(&endow)?),
    ])
}

fn generate_cmd(a: &GenerateArgs) -> Result<i32> {
    let family: Family = a.family.parse()?;
    let utility = match a.utility {
        UtilityArg::Power => UtilityKind::Power { gamma: a.gamma },
        UtilityArg::Log => UtilityKind::Log,
        UtilityArg::Exp => UtilityKind::Exponential { gamma: a.gamma },
    };
    let seed = ScenarioSeed {
        horizon: a.horizon,
        branching: a.branching,
        utility,
        habit_weight: a.beta,
        baseline_habit: !a.no_baseline_habit,
        ..ScenarioSeed::new(a.seed, family)
    };
    let sc = generate(&seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, text) in scenario_files(&sc)? {
        write_atomic(&a.out_dir.join(name), &text)?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range("0.5:10:20").unwrap(), (0.5, 10.0, 20));
        assert!(parse_range("1:2").is_err());
        assert!(parse_range("1:2:0").is_err());
    }

    #[test]
    fn generated_files_rebuild_the_scenario() {
        let sc = generate(&ScenarioSeed::new(4, Family::Idiosyncratic)).unwrap();
        let files = scenario_files(&sc).unwrap();
        let market: crate::market::MarketSpec = serde_json::from_str(&files[0].1).unwrap();
        let m = MarketModel::from_spec(&market).unwrap();
        assert_eq!(m.to_spec().prices, sc.market.to_spec().prices);
        let prefs: PreferencesSpec = serde_json::from_str(&files[1].1).unwrap();
        let p = prefs.build(m.tree()).unwrap();
        assert_eq!(p.habit(), sc.preferences.habit());
        let endow: EndowmentSpec = serde_json::from_str(&files[2].1).unwrap();
        assert_eq!(endow.build(m.tree()).unwrap(), sc.endowment);
        assert_eq!(classify_market(&m).unwrap().class, crate::market::MarketClass::Idiosyncratic);
    }
}
