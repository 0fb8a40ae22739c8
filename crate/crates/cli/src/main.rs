use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use boostfgl::config::{ExperimentConfig, GraphSource};
use boostfgl::experiment::{load_source, partition_for_seed, run_experiment, run_sweep, SweepSpec};
use boostfgl::theory::{run_checks, Check, Status, TheoryConfig};

/// Fairness-aware subgraph-federated GNN simulator.
#[derive(Parser)]
#[command(name = "boostfgl", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed and write metrics, diagnostics and checkpoints.
    Run(ConfigArgs),
    /// Run the numerical checks and write theory_report.json.
    Check(CheckArgs),
    /// Run a Cartesian grid of configs and write sweep.csv.
    Sweep(SweepArgs),
    /// Write the client partition of the first seed as partition.tsv.
    Partition(ConfigArgs),
    /// Write the configured synthetic graph as nodes.tsv and edges.tsv.
    Synth(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config field by dotted path, e.g. `boost.lambda_n=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// `fedavg` or `boostfgl`.
    #[arg(long)]
    method: Option<String>,

    /// Disable node boosting.
    #[arg(long)]
    no_node: bool,

    /// Disable topology boosting.
    #[arg(long)]
    no_topo: bool,

    /// Disable trust-weighted aggregation.
    #[arg(long)]
    no_model: bool,

    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Treat inconclusive or assumptions-unmet claims as failures.
    #[arg(long)]
    strict: bool,

    /// Run only these checks: gsd, epr, dr, fedavg.
    #[arg(long)]
    only: Vec<Check>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Directory for theory_report.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep spec: `{"grid": [{"key": ..., "values": [...]}], "cap": N}`.
    #[arg(long)]
    spec: PathBuf,

    #[command(flatten)]
    config: ConfigArgs,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(m) = &self.method {
            let method: boostfgl::federation::Method = m.parse()?;
            overrides.push(format!("federation.method={}", method.as_str()));
        }
        for (flag, key) in [
            (self.no_node, "node"),
            (self.no_topo, "topo"),
            (self.no_model, "model"),
        ] {
            if flag {
                overrides.push(format!("federation.ablation.{key}=false"));
            }
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", serde_json::to_string(out)?));
        }
        let mut config = base.with_overrides(&overrides)?;
        if let Ok(raw) = std::env::var("BOOSTFGL_SEED") {
            let seed: u64 = raw
                .trim()
                .parse()
                .with_context(|| format!("BOOSTFGL_SEED={raw:?} is not an unsigned integer"))?;
            config.seeds[0] = seed;
        }
        Ok(config)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: &ConfigArgs) -> Result<ExitCode> {
    let config = args.resolve()?;
    let runs = run_experiment(&config)?;
    for run in &runs {
        if let Some(last) = run.result.history.last() {
            log::info!(
                "seed {}: overall-f1 {:?} hete-min-f1 {:?}",
                run.seed,
                last.report.overall_f1,
                last.report.hete_min_f1
            );
        }
    }
    println!("{}", config.output_dir.join("metrics.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: &CheckArgs) -> Result<ExitCode> {
    let config = TheoryConfig {
        seed: args.seed,
        ..TheoryConfig::default()
    };
    let report = run_checks(&config, &args.only)?;
    create_dir(&args.out)?;
    let path = args.out.join("theory_report.json");
    write(&path, report.to_json())?;
    for e in &report.entries {
        let status = match e.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::AssumptionsUnmet => "assumptions unmet",
            Status::Inconclusive => "inconclusive",
        };
        println!(
            "{:<7} {:<18} {}/{} evaluated, {} violated: {}",
            e.check.as_str(),
            status,
            e.evaluated,
            e.instances,
            e.violations,
            e.claim
        );
    }
    println!("{}", path.display());
    Ok(if report.succeeded(args.strict) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode> {
    let config = args.config.resolve()?;
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SweepSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec.display()))?;
    let csv = run_sweep(&config, &spec)?;
    create_dir(&config.output_dir)?;
    let resolved = serde_json::to_string_pretty(&config.to_value())? + "\n";
    write(&config.output_dir.join("config.resolved.json"), resolved)?;
    let path = config.output_dir.join("sweep.csv");
    write(&path, csv)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_partition(args: &ConfigArgs) -> Result<ExitCode> {
    let config = args.resolve()?;
    let graph = load_source(&config.graph)?;
    let partition = partition_for_seed(&config, &graph, config.seeds[0])?;
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join("partition.tsv");
    partition.save_tsv(&path)?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(args: &ConfigArgs) -> Result<ExitCode> {
    let config = args.resolve()?;
    if let GraphSource::Path(p) = &config.graph {
        bail!(
            "graph source is the directory {}, not a synthetic config",
            p.display()
        );
    }
    let graph = load_source(&config.graph)?;
    graph.save(&config.output_dir)?;
    println!("{}", config.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            // some errors already spell out their source; don't repeat it
            let mut line = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !line.ends_with(&cause) {
                    if !line.is_empty() {
                        line.push_str(": ");
                    }
                    line.push_str(&cause);
                }
            }
            eprintln!("error: {line}");
            ExitCode::from(2)
        }
    }
}
