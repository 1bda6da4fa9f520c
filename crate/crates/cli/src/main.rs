use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use residual_mm::assemble::{evaluate, measure, plan, Evaluation, PlanTimings, Reconstructor};
use residual_mm::bundle::{
    read_json, write_answers, write_json, AnswerRecord, MeasurementFile, MechanismBundle,
};
use residual_mm::data::{load_csv, load_dictionary, synth, write_csv, Distribution};
use residual_mm::privacy::{to_approx_dp, to_gaussian_dp};
use residual_mm::solver::{SolverChoice, SolverKind};
use residual_mm::{build_workload, Schema, Workload, WorkloadSpec};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] residual_mm::Error),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: residual_mm::Error },
    #[error("{0}")]
    Usage(String),
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "rmm", version, about = "Plan, run, and evaluate a residual matrix mechanism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the workload, solve every subworkload, and write the bundle.
    /// Reads no data.
    Plan(PlanArgs),
    /// Run the mechanism on a CSV dataset.
    Measure(MeasureArgs),
    /// Reconstruct answers and variances from measurements.
    Answer(AnswerArgs),
    /// Privacy guarantees, predicted error, and planning cost of a bundle.
    Report(ReportArgs),
    /// Write a synthetic CSV dataset for a schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Schema JSON file, or one of the presets adult, cps, loans.
    #[arg(long)]
    schema: String,
    /// Workload spec JSON file.
    #[arg(long)]
    workload: PathBuf,
    /// Privacy budget (zCDP rho).
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value = "optimal")]
    solver: SolverKind,
    /// Also plan with the other solvers and print their predicted error.
    #[arg(long)]
    compare: bool,
    /// Cap on marginal size for the optimal and fixed-basis solvers.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// CSV with a header naming the schema's attributes.
    #[arg(long)]
    data: PathBuf,
    /// JSON map from attribute name to its category labels.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Workload to answer; defaults to the one the bundle was planned for.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Planning timings; defaults to timings.json next to the bundle.
    #[arg(long)]
    timings: Option<PathBuf>,
    /// Epsilons at which to report delta, comma separated.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    schema: String,
    #[arg(long)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zipf exponent; uniform when absent.
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Planning cost, kept apart from the bundle so the bundle stays
/// reproducible byte for byte.
#[derive(Debug, Serialize, Deserialize)]
struct TimingsFile {
    #[serde(flatten)]
    phases: PlanTimings,
    total: f64,
    peak_memory_bytes: Option<u64>,
}

#[derive(Debug, Serialize)]
struct DeltaRow {
    epsilon: f64,
    delta: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    rho: f64,
    mu: f64,
    delta: Vec<DeltaRow>,
    solver: String,
    queries: usize,
    rmse: f64,
    wrmse: f64,
    timings: Option<TimingsFile>,
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|source| CliError::Read { path: path.to_owned(), source })
}

fn load_schema(arg: &str) -> Result<Schema> {
    let path = Path::new(arg);
    if path.exists() {
        read(path)
    } else {
        Schema::preset(arg).map_err(|_| CliError::Usage(format!("{arg} is neither a schema file nor a preset")))
    }
}

fn peak_memory_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    Some(line.split_whitespace().nth(1)?.parse::<u64>().ok()? * 1024)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Core(e.into()))
}

fn choice_for(kind: SolverKind, cap: Option<usize>) -> SolverChoice {
    let mut choice = SolverChoice::new(kind);
    if let Some(cap) = cap {
        choice.cap = cap;
    }
    choice
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    if !(args.rho > 0.0 && args.rho.is_finite()) {
        return Err(CliError::Usage(format!("--rho must be positive, got {}", args.rho)));
    }
    let schema = load_schema(&args.schema)?;
    let spec: WorkloadSpec = read(&args.workload)?;
    let workload = build_workload(&schema, &spec)?;
    let choice = choice_for(args.solver, args.cap);
    let (mech, phases) = plan(&workload, &choice, args.rho)?;
    let eval = evaluate(&workload, &mech)?;

    ensure_dir(&args.out)?;
    let bundle = MechanismBundle::new(spec, choice, mech, &eval);
    write_json(&args.out.join("bundle.json"), &bundle)?;
    let timings = TimingsFile { phases, total: phases.total(), peak_memory_bytes: peak_memory_bytes() };
    write_json(&args.out.join("timings.json"), &timings)?;

    println!(
        "{} queries, {} subworkloads, solver {}",
        workload.len(),
        bundle.mechanism.plans().len(),
        args.solver
    );
    print_error_row(&args.solver.to_string(), &eval);
    if args.compare {
        for kind in [SolverKind::Optimal, SolverKind::Fourier, SolverKind::FixedBasis(Default::default())] {
            if kind.to_string() == args.solver.to_string() {
                continue;
            }
            match plan(&workload, &choice_for(kind, args.cap), args.rho).and_then(|(m, _)| evaluate(&workload, &m)) {
                Ok(e) => print_error_row(&kind.to_string(), &e),
                Err(e) => println!("{:<12} unavailable: {e}", kind.to_string()),
            }
        }
    }
    println!("wrote {}", args.out.join("bundle.json").display());
    Ok(())
}

fn print_error_row(name: &str, eval: &Evaluation) {
    println!("{name:<12} rmse {:>12.6}  wrmse {:>12.6}", eval.rmse, eval.wrmse);
}

fn cmd_measure(args: MeasureArgs) -> Result<()> {
    let bundle: MechanismBundle = read(&args.bundle)?;
    let schema = bundle.mechanism.schema();
    let dict = args.dict.as_deref().map(load_dictionary).transpose()?;
    let data = load_csv(&args.data, schema, dict.as_ref())
        .map_err(|source| CliError::Read { path: args.data.clone(), source })?;
    let measurements = measure(&bundle.mechanism, &data, args.seed)?;
    let rows: usize = measurements.values().map(|m| m.z.len()).sum();

    ensure_dir(&args.out)?;
    let path = args.out.join("measurements.json");
    write_json(&path, &MeasurementFile::new(args.seed, data.len(), measurements))?;
    println!("measured {rows} strategy queries on {} records; wrote {}", data.len(), path.display());
    Ok(())
}

fn cmd_answer(args: AnswerArgs) -> Result<()> {
    let bundle: MechanismBundle = read(&args.bundle)?;
    let file: MeasurementFile = read(&args.measurements)?;
    let measurements = file.by_key()?;
    let schema = bundle.mechanism.schema().clone();
    let workload: Workload = match &args.workload {
        Some(path) => build_workload(&schema, &read::<WorkloadSpec>(path)?)?,
        None => build_workload(&schema, &bundle.workload)?,
    };
    let rec = Reconstructor::new(&bundle.mechanism, &workload)?;
    let answers = rec.answers(&measurements)?;
    let records: Vec<AnswerRecord> = answers
        .iter()
        .zip(rec.variances())
        .enumerate()
        .map(|(query_id, (&answer, &variance))| AnswerRecord { query_id, answer, variance })
        .collect();

    ensure_dir(&args.out)?;
    let path = args.out.join("answers.jsonl");
    write_answers(&path, &records)?;
    println!("answered {} queries; wrote {}", records.len(), path.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let bundle: MechanismBundle = read(&args.bundle)?;
    let timings_path = args
        .timings
        .clone()
        .unwrap_or_else(|| args.bundle.with_file_name("timings.json"));
    let timings = if timings_path.exists() { Some(read::<TimingsFile>(&timings_path)?) } else { None };
    let mut delta = Vec::with_capacity(args.eps.len());
    for &epsilon in &args.eps {
        delta.push(DeltaRow { epsilon, delta: to_approx_dp(bundle.rho, epsilon)? });
    }
    let report = Report {
        rho: bundle.rho,
        mu: to_gaussian_dp(bundle.rho),
        delta,
        solver: bundle.solver.kind.to_string(),
        queries: bundle.predicted.queries,
        rmse: bundle.predicted.rmse,
        wrmse: bundle.predicted.wrmse,
        timings,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Core(e.into()))?);
        return Ok(());
    }
    println!("rho   {}", report.rho);
    println!("mu    {}", report.mu);
    for row in &report.delta {
        println!("eps {:<8} delta {:.6e}", row.epsilon, row.delta);
    }
    println!("solver {}, {} queries", report.solver, report.queries);
    println!("RMSE  {:.6}", report.rmse);
    println!("WRMSE {:.6}", report.wrmse);
    if let Some(t) = &report.timings {
        let mem = t
            .peak_memory_bytes
            .map(|b| format!("{:.1} MB", b as f64 / 1048576.0))
            .unwrap_or_else(|| "n/a".into());
        println!("{:>10} {:>10} {:>10} {:>10} {:>10}", "Decomp", "Solve", "Assem", "Total", "Mem");
        println!(
            "{:>9.3}s {:>9.3}s {:>9.3}s {:>9.3}s {:>10}",
            t.phases.decompose, t.phases.solve, t.phases.assemble, t.total, mem
        );
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let dist = match args.zipf {
        Some(s) => Distribution::Zipf(s),
        None => Distribution::Uniform,
    };
    let data = synth(&schema, args.records, args.seed, dist)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let file = fs::File::create(&args.out).map_err(|e| CliError::Core(e.into()))?;
    write_csv(&data, std::io::BufWriter::new(file))?;
    println!("wrote {} records to {}", data.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Answer(a) => cmd_answer(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
