use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use flowpf::bench::{self, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "flowpf", version, about = "Particle flow filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track the synthetic linear-Gaussian posterior with flow, MCL and gd.
    Synthetic(RunArgs),
    /// Rigid point-set registration: flow against gradient descent.
    Pose(RunArgs),
    /// Check the Wasserstein perturbation bound on linear fields.
    Theorem(RunArgs),
    /// Aggregate result CSVs into per-setting means and standard errors.
    Summarize {
        /// Result CSVs written by the other subcommands.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key=value` config file; flags take precedence over its settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; a manifest is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Any other config setting, e.g. `--set dims=5,20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> flowpf::Result<bool> {
    let mut overrides = Vec::new();
    for s in &args.settings {
        let (k, v) = s.split_once('=').ok_or_else(|| flowpf::Error::Config {
            key: s.clone(),
            line: 0,
            message: "expected `--set key=value`".into(),
        })?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seeds) = args.seeds {
        overrides.push(("seeds".into(), seeds));
    }
    if let Some(threads) = args.threads {
        overrides.push(("threads".into(), threads.to_string()));
    }
    if let Some(out) = &args.out {
        overrides.push(("output".into(), out.display().to_string()));
    }
    let text = args.config.as_ref().map(std::fs::read_to_string).transpose()?;
    let cfg = ExperimentConfig::resolve(kind, text.as_deref(), &overrides)?;

    let started = Instant::now();
    let output = bench::run_experiment(&cfg)?;
    let elapsed = started.elapsed().as_secs_f64();

    bench::write_csv_file(&output.records, &cfg.output_path)?;
    bench::write_manifest(&cfg, elapsed, output.passed, &bench::manifest_path(&cfg.output_path))?;
    for r in output.records.iter().filter(|r| r.status == bench::STATUS_BEST) {
        eprintln!(
            "best {} d={} n={} {}={} {}={}",
            r.method,
            r.d,
            r.n,
            if r.method == "mcl" { "epsilon" } else { "eta" },
            r.hyperparameter().map_or("-".into(), |v| format!("{v:.4e}")),
            r.metric,
            r.value.map_or("inf".into(), |v| format!("{v:.4}")),
        );
    }
    if let Some(passed) = output.passed {
        eprintln!("{}", if passed { "PASS" } else { "FAIL" });
    }
    eprintln!("wrote {} rows to {} in {elapsed:.2}s", output.records.len(), cfg.output_path.display());
    Ok(output.passed.unwrap_or(true))
}

fn summarize(inputs: &[PathBuf], out: Option<&PathBuf>) -> flowpf::Result<bool> {
    let mut records = Vec::new();
    for path in inputs {
        records.extend(bench::read_records(std::fs::File::open(path)?)?);
    }
    let rows = bench::summarize(&records);
    match out {
        Some(path) => bench::write_summary(&rows, std::io::BufWriter::new(std::fs::File::create(path)?))?,
        None => bench::write_summary(&rows, std::io::stdout().lock())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthetic(a) => run(ExperimentKind::Synthetic, a),
        Command::Pose(a) => run(ExperimentKind::Pose, a),
        Command::Theorem(a) => run(ExperimentKind::Theorem, a),
        Command::Summarize { inputs, out } => summarize(&inputs, out.as_ref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
