//! `evospace` command-line interface.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evospace::analysis::{
    derangement_sign_det, exen_ratio, pdg_bruteforce, pdg_closed,
};
use evospace::basis::select_bstar;
use evospace::engine::{run_evolution, write_trace_csv, write_trace_jsonl, RunHooks, RunParams};
use evospace::experiments::{random_data_pair, run_scenario, ScenarioConfig, ScenarioKind};
use evospace::frontier::{frontier_sweep, FrontierProblem};
use evospace::model::{quadratic_optimum, MutationSet, Organism, QuadraticMoments, Target};
use evospace::schedule::{compute_schedule, Schedule};
use evospace::Error;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::{resolve, MutationBlock, Resolved, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILED: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "evospace", version, about = "Evolution of vector spaces by permissible mutators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mutator loop described by a config file.
    Evolve(EvolveArgs),
    /// Run a seeded scenario.
    Experiment(ExperimentArgs),
    /// Inspect a configuration.
    Diagnose {
        #[command(subcommand)]
        what: Diagnose,
    },
    /// Efficient frontier of a single-step problem.
    Frontier {
        #[command(subcommand)]
        what: Frontier,
    },
    /// Closed forms against brute force.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct SeedArgs {
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds or a half-open range `a..b`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

impl SeedArgs {
    fn resolve(&self) -> Option<Vec<u64>> {
        self.seed.map(|s| vec![s]).or_else(|| self.seeds.clone().map(|l| l.0))
    }
}

#[derive(Args)]
struct EvolveArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Config whose `[scenario]` block is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    UnsupervisedMean,
    SupervisedLinear,
    Drift,
    Stability,
    Agnostic,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::UnsupervisedMean => ScenarioKind::UnsupervisedMean,
            ScenarioArg::SupervisedLinear => ScenarioKind::SupervisedLinear,
            ScenarioArg::Drift => ScenarioKind::Drift,
            ScenarioArg::Stability => ScenarioKind::Stability,
            ScenarioArg::Agnostic => ScenarioKind::Agnostic,
        }
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Diagnose {
    /// Quality of the best basis drawn from the mutation set.
    Basis(DiagnoseArgs),
    /// Expression-to-encoding ratio of the start organism.
    Exen(DiagnoseArgs),
    /// Fully resolved schedule.
    Schedule(DiagnoseArgs),
}

#[derive(Subcommand)]
enum Frontier {
    /// Frontier returns at several premium levels, as CSV.
    Sweep(FrontierArgs),
}

#[derive(Args)]
struct FrontierArgs {
    /// Comma-separated `delta = f - t` in gene coordinates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    delta: Vec<f64>,
    /// Row-major SPD matrix, rows separated by `;`.
    #[arg(long, allow_hyphen_values = true)]
    gamma: String,
    #[arg(long, allow_negative_numbers = true)]
    n: f64,
    #[arg(long)]
    alpha: f64,
    /// Premium levels as multiples of the minimum premium.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,5,10")]
    levels: Vec<f64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Oracle {
    /// `P_dG(z)` in closed form and by permutation enumeration.
    Pdg {
        #[arg(long)]
        dg: usize,
        #[arg(long)]
        z: f64,
    },
    /// Signed derangement count by enumeration and by determinant.
    Derangement {
        #[arg(long)]
        j: usize,
    },
}

/// Distinguishes bad input, evolution failure and everything else.
enum CliError {
    Config(String),
    Failed(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(m) => CliError::Runtime(m),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        if b <= a {
            return Err("empty seed range".into());
        }
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("{p}: {e}")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

fn parse_matrix(s: &str) -> CliResult<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|r| {
            r.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Config(format!("gamma: {e}")))?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config("gamma must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn schedule_for(r: &Resolved, cfg: &RunConfig) -> CliResult<Schedule> {
    Ok(compute_schedule(
        cfg.schedule.epsilon,
        r.knobs,
        &r.constants,
        r.horizon,
        &r.options,
    )?)
}

/// Renewal from data pairs and relative true performance for quadratic models.
struct CliHooks<'a> {
    resolved: &'a Resolved,
    renew_min_sin: Option<f64>,
    moments: Option<(QuadraticMoments, f64)>,
}

impl RunHooks for CliHooks<'_> {
    fn renew(&mut self, _: usize, _: &MutationSet, rng: &mut ChaCha8Rng) -> evospace::Result<Option<MutationSet>> {
        match self.renew_min_sin {
            Some(s) => random_data_pair(&self.resolved.dataset, s, rng).map(Some),
            None => Ok(None),
        }
    }

    fn true_performance(&self, coords: &DVector<f64>, _: &Target) -> Option<f64> {
        self.moments.as_ref().map(|(m, best)| m.performance(coords) - best)
    }
}

#[derive(Serialize)]
struct FinalOrganism<'a> {
    seed: u64,
    coords: Vec<f64>,
    steps: usize,
    failed: bool,
    perf_empirical: Option<f64>,
    perf_true: Option<f64>,
    schedule: &'a Schedule,
}

fn evolve(args: &EvolveArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config)?;
    let seeds = args.seeds.resolve().unwrap_or_else(|| cfg.run.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Config("no seeds".into()));
    }
    fs::create_dir_all(&args.out)?;
    let mut any_failed = false;
    for seed in seeds {
        let r = resolve(&cfg, seed)?;
        let schedule = schedule_for(&r, &cfg)?;
        let model = evospace::engine::EvolutionModel {
            panel: r.panel.clone(),
            generator: r.generator.clone(),
            sampler: r.sampler(seed),
        };
        let moments = if r.generator.is_quadratic() {
            let m = quadratic_optimum(&r.panel, &r.generator, &r.target, &r.dataset.as_sample())?;
            let best = m.performance(&m.optimum()?);
            Some((m, best))
        } else {
            None
        };
        let mut hooks = CliHooks {
            resolved: &r,
            renew_min_sin: match cfg.mutation {
                MutationBlock::DataPairs { min_sin } => Some(min_sin),
                _ => None,
            },
            moments,
        };
        let params = RunParams {
            alpha: schedule.alpha,
            tol: schedule.tol,
            m: schedule.m,
            steps: cfg.run.steps.unwrap_or(schedule.t as usize),
            policy: cfg.run.policy,
            seed,
            renewal_period: cfg.run.renewal_period,
            epsilon: Some(cfg.schedule.epsilon),
        };
        let f0 = Organism::new(r.start.clone(), r.mutations.df(), schedule.alpha)?;
        let result = run_evolution(&model, r.target.clone(), f0, r.mutations.clone(), &params, &mut hooks)?;
        let trace_path = match args.format {
            Format::Json => args.out.join(format!("trace_{seed}.jsonl")),
            Format::Csv => args.out.join(format!("trace_{seed}.csv")),
        };
        let w = BufWriter::new(File::create(&trace_path)?);
        match args.format {
            Format::Json => write_trace_jsonl(w, &result.trace)?,
            Format::Csv => write_trace_csv(w, &result.trace)?,
        }
        let last = result.trace.last();
        let fin = FinalOrganism {
            seed,
            coords: result.final_organism.coords().as_slice().to_vec(),
            steps: result.trace.len(),
            failed: result.failed,
            perf_empirical: last.map(|s| s.perf_empirical_after),
            perf_true: last.and_then(|s| s.perf_true_after),
            schedule: &schedule,
        };
        write_json(&args.out.join(format!("final_{seed}.json")), &fin)?;
        println!(
            "seed {seed}: {} steps{}",
            fin.steps,
            if result.failed { ", evolution failed" } else { "" }
        );
        any_failed |= result.failed;
    }
    if any_failed {
        return Err(CliError::Failed("the mutator returned no candidate".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct ArmSummary {
    label: String,
    success_fraction: f64,
    dwell_fraction: Option<f64>,
    monotone_fraction: Option<f64>,
    drift_multiplier: Option<f64>,
    seeds: usize,
}

fn experiment(args: &ExperimentArgs) -> CliResult<()> {
    let from_file = match &args.config {
        Some(p) => Some(
            RunConfig::load(p)?
                .scenario
                .ok_or_else(|| CliError::Config("config has no [scenario] block".into()))?,
        ),
        None => None,
    };
    let mut cfg = match (from_file, args.scenario) {
        (Some(c), Some(s)) if c.scenario != ScenarioKind::from(s) => {
            return Err(CliError::Config("--scenario disagrees with the config".into()))
        }
        (Some(c), _) => c,
        (None, Some(s)) => ScenarioConfig::defaults(s.into()),
        (None, None) => return Err(CliError::Config("give --scenario or --config".into())),
    };
    if let Some(s) = args.seeds.resolve() {
        cfg.seeds = s;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    let report = run_scenario(&cfg)?;
    let rows: Vec<ArmSummary> = report
        .arms
        .iter()
        .map(|a| ArmSummary {
            label: a.label.clone(),
            success_fraction: a.success_fraction,
            dwell_fraction: a.dwell_fraction,
            monotone_fraction: a.monotone_fraction,
            drift_multiplier: a.drift_multiplier,
            seeds: a.seeds.len(),
        })
        .collect();
    match args.format {
        Format::Json => print_json(&rows),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in &rows {
                w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn diagnose(what: &Diagnose) -> CliResult<()> {
    match what {
        Diagnose::Basis(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let r = resolve(&cfg, a.seed)?;
            print_json(&select_bstar(&r.mutations, r.panel.dg(), a.seed)?)
        }
        Diagnose::Exen(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let r = resolve(&cfg, a.seed)?;
            print_json(&exen_ratio(&r.start, &r.panel, &r.sampler(a.seed), 10_000)?)
        }
        Diagnose::Schedule(a) => {
            let cfg = RunConfig::load(&a.config)?;
            let r = resolve(&cfg, a.seed)?;
            print_json(&schedule_for(&r, &cfg)?)
        }
    }
}

fn frontier(args: &FrontierArgs) -> CliResult<()> {
    let problem = FrontierProblem::new(
        DVector::from_vec(args.delta.clone()),
        parse_matrix(&args.gamma)?,
        args.n,
        args.alpha,
    )?;
    let rows = frontier_sweep(&problem, &args.levels)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(["premium", "r_minus", "r_plus"]).map_err(csv_err)?;
    for (premium, lo, hi) in rows {
        w.write_record([premium.to_string(), lo.to_string(), hi.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn oracle(which: &Oracle) -> CliResult<()> {
    match which {
        Oracle::Pdg { dg, z } => {
            let closed = pdg_closed(*dg, *z)?;
            let brute = pdg_bruteforce(*dg, *z)?;
            println!("closed {closed}");
            println!("bruteforce {brute}");
            println!("equal {}", (closed - brute).abs() <= 1e-12 * closed.abs().max(1.0));
        }
        Oracle::Derangement { j } => {
            let (enumerated, det) = derangement_sign_det(*j)?;
            println!("enumeration {enumerated}");
            println!("determinant {det}");
            println!("equal {}", enumerated == det);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Evolve(a) => evolve(a),
        Command::Experiment(a) => experiment(a),
        Command::Diagnose { what } => diagnose(what),
        Command::Frontier { what: Frontier::Sweep(a) } => frontier(a),
        Command::Oracle { which } => oracle(which),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Failed(m)) => {
            eprintln!("evolution failed: {m}");
            ExitCode::from(EXIT_FAILED)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::FAILURE
        }
    }
}
