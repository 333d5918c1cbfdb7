use std::collections::HashMap;
use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use evifuse::annealer::SolverConfig;
use evifuse::evidence::{parse_report_line, weight_of_conflict};
use evifuse::harness::{
    accounting, classification_error_rate, conflict_probability, conflicting_pair_count,
    dataset_to_lines, error_rate_constants, generate_dataset, pair_count, records_to_csv,
    records_to_json_lines, run_config, standard_grid, sweep, traces_to_csv, TraceRow,
    DATASET_SIZE, EVALUATION_WINDOW,
};
use evifuse::memory::MemoryConfig;
use evifuse::tracker::{Engine, EngineConfig};
use evifuse::Frame;

#[derive(Parser)]
#[command(name = "evifuse", about = "Evidence clustering and track fusion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of evidence reports
    Gen(GenArgs),
    /// Stream reports through the fusion engine, printing track views
    Stream(StreamArgs),
    /// Run one memory configuration of the reclustering protocol
    Run(RunArgs),
    /// Run the full memory-size study (or a restricted slice of it)
    Sweep(SweepArgs),
    /// Check the built-in combinatorial and accounting constants
    Verify,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Dataset seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of targets in the frame of discernment
    #[arg(long)]
    targets: Option<usize>,
    /// Number of reports to generate
    #[arg(long)]
    n: Option<usize>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file pre-setting any of the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct StreamArgs {
    /// Report file in `id,focal,bpn` lines (stdin when omitted)
    input: Option<PathBuf>,
    /// Number of targets in the frame of discernment
    #[arg(long)]
    targets: Option<usize>,
    /// Number of tracks to partition into (defaults to the target count)
    #[arg(long)]
    clusters: Option<usize>,
    /// Short-term memory capacity
    #[arg(long)]
    stm: Option<usize>,
    /// Long-term memory capacity
    #[arg(long)]
    ltm: Option<usize>,
    /// Solver seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file pre-setting any of the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Dataset seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of targets in the frame of discernment
    #[arg(long)]
    targets: Option<usize>,
    /// Short-term memory capacity
    #[arg(long)]
    stm: Option<usize>,
    /// Long-term memory capacity
    #[arg(long)]
    ltm: Option<usize>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Result format
    #[arg(long)]
    format: Option<Format>,
    /// Write a per-step `config,dataset,step,weight` trace to this file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// key=value file pre-setting any of the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// Number of dataset seeds (datasets 0..seeds)
    #[arg(long)]
    seeds: Option<u64>,
    /// Restrict to configurations with this short-term size
    #[arg(long)]
    stm: Option<usize>,
    /// Restrict to configurations with this long-term size
    #[arg(long)]
    ltm: Option<usize>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Result format
    #[arg(long)]
    format: Option<Format>,
    /// Write a per-step `config,dataset,step,weight` trace to this file
    #[arg(long)]
    trace: Option<PathBuf>,
    /// key=value file pre-setting any of the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => bail!("unknown format {other:?}, expected csv or json"),
        }
    }
}

/// Plain-text `key = value` file; `#` starts a comment. Explicit flags win.
struct Presets(HashMap<String, String>);

impl Presets {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (number, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    bail!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        number + 1
                    );
                };
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Presets(map))
    }

    fn fill<T: FromStr>(&self, slot: &mut Option<T>, key: &str) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if slot.is_none() {
            if let Some(raw) = self.0.get(key) {
                let parsed = raw
                    .parse()
                    .map_err(|e| anyhow::anyhow!("config key {key} = {raw:?}: {e}"))?;
                *slot = Some(parsed);
            }
        }
        Ok(())
    }

    fn fill_path(&self, slot: &mut Option<PathBuf>, key: &str) {
        if slot.is_none() {
            if let Some(raw) = self.0.get(key) {
                *slot = Some(PathBuf::from(raw));
            }
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(args),
        Command::Stream(args) => cmd_stream(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify => cmd_verify(),
    }
}

fn cmd_gen(mut args: GenArgs) -> Result<()> {
    let presets = Presets::load(args.config.as_deref())?;
    presets.fill(&mut args.seed, "seed")?;
    presets.fill(&mut args.targets, "targets")?;
    presets.fill(&mut args.n, "n")?;
    presets.fill_path(&mut args.out, "out");

    let seed = args.seed.unwrap_or(0);
    let targets = args.targets.unwrap_or(7);
    let n = args.n.unwrap_or(DATASET_SIZE);
    let dataset = generate_dataset(seed, targets, n)?;
    write_output(args.out.as_deref(), &dataset_to_lines(&dataset))
}

fn cmd_stream(mut args: StreamArgs) -> Result<()> {
    let presets = Presets::load(args.config.as_deref())?;
    presets.fill(&mut args.targets, "targets")?;
    presets.fill(&mut args.clusters, "clusters")?;
    presets.fill(&mut args.stm, "stm")?;
    presets.fill(&mut args.ltm, "ltm")?;
    presets.fill(&mut args.seed, "seed")?;
    presets.fill_path(&mut args.out, "out");
    if args.input.is_none() {
        presets.fill_path(&mut args.input, "input");
    }

    let targets = args.targets.unwrap_or(7);
    let clusters = args.clusters.unwrap_or(targets);
    let frame = Frame::new(targets)?;
    let mut engine = Engine::new(
        frame.clone(),
        EngineConfig {
            clusters,
            memory: MemoryConfig {
                short_term_capacity: args.stm.unwrap_or(10),
                long_term_capacity: args.ltm.unwrap_or(90),
            },
            solver: SolverConfig {
                rng_seed: args.seed.unwrap_or(0),
                ..SolverConfig::for_cluster_count(clusters)
            },
            prototypes: None,
        },
    )?;

    let text = match &args.input {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut buf = String::new();
            io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };

    let mut sink: Box<dyn io::Write> = match &args.out {
        Some(path) => Box::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(io::stdout().lock()),
    };
    let mut processed = 0u64;
    for (number, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = number + 1;
        let report =
            parse_report_line(&frame, raw).with_context(|| format!("line {line}: {raw:?}"))?;
        let view = engine
            .process_report(report)
            .with_context(|| format!("line {line}: {raw:?}"))?;
        serde_json::to_writer(&mut sink, &view)?;
        sink.write_all(b"\n")?;
        processed += 1;
    }
    if processed > 0 {
        serde_json::to_writer(&mut sink, &engine.permanent_view())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

fn cmd_run(mut args: RunArgs) -> Result<()> {
    let presets = Presets::load(args.config.as_deref())?;
    presets.fill(&mut args.seed, "seed")?;
    presets.fill(&mut args.targets, "targets")?;
    presets.fill(&mut args.stm, "stm")?;
    presets.fill(&mut args.ltm, "ltm")?;
    presets.fill(&mut args.format, "format")?;
    presets.fill_path(&mut args.out, "out");
    presets.fill_path(&mut args.trace, "trace");

    let seed = args.seed.unwrap_or(0);
    let targets = args.targets.unwrap_or(7);
    let stm = args.stm.unwrap_or(10);
    let ltm = args.ltm.unwrap_or(90);
    let dataset = generate_dataset(seed, targets, DATASET_SIZE)?;
    let solver = SolverConfig::for_cluster_count(targets);
    let outcome = run_config(&dataset, stm, ltm, &solver)?;

    if let Some(path) = &args.trace {
        let rows: Vec<TraceRow> = outcome
            .step_weights
            .iter()
            .enumerate()
            .map(|(i, &weight)| TraceRow {
                stm,
                ltm,
                dataset: seed,
                step: EVALUATION_WINDOW + 1 + i,
                weight,
            })
            .collect();
        fs::write(path, traces_to_csv(&rows))
            .with_context(|| format!("writing {}", path.display()))?;
    }

    let records = [outcome.record];
    let text = match args.format.unwrap_or(Format::Csv) {
        Format::Csv => records_to_csv(&records),
        Format::Json => records_to_json_lines(&records),
    };
    write_output(args.out.as_deref(), &text)
}

fn cmd_sweep(mut args: SweepArgs) -> Result<()> {
    let presets = Presets::load(args.config.as_deref())?;
    presets.fill(&mut args.seeds, "seeds")?;
    presets.fill(&mut args.stm, "stm")?;
    presets.fill(&mut args.ltm, "ltm")?;
    presets.fill(&mut args.format, "format")?;
    presets.fill_path(&mut args.out, "out");
    presets.fill_path(&mut args.trace, "trace");

    let seeds: Vec<u64> = (0..args.seeds.unwrap_or(10)).collect();
    let grid: Vec<(usize, usize)> = standard_grid()
        .into_iter()
        .filter(|&(stm, ltm)| {
            args.stm.is_none_or(|want| stm == want) && args.ltm.is_none_or(|want| ltm == want)
        })
        .collect();
    if grid.is_empty() {
        bail!("no configuration matches the stm/ltm restriction");
    }
    let solver = SolverConfig::for_cluster_count(7);
    let summary = sweep(&grid, &seeds, &solver, args.trace.is_some())?;

    if let Some(path) = &args.trace {
        fs::write(path, traces_to_csv(&summary.traces))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let text = match args.format.unwrap_or(Format::Csv) {
        Format::Csv => records_to_csv(&summary.records),
        Format::Json => records_to_json_lines(&summary.records),
    };
    write_output(args.out.as_deref(), &text)
}

fn cmd_verify() -> Result<()> {
    let constants = error_rate_constants(7, EVALUATION_WINDOW);
    let plan = accounting(&standard_grid(), 10);
    let checks: Vec<(&str, f64, f64, f64)> = vec![
        ("disjoint-capable pairs (7 targets)", pair_count(7) as f64, 8001.0, 0.0),
        ("conflicting pairs (7 targets)", conflicting_pair_count(7) as f64, 966.0, 0.0),
        ("conflict probability %", 100.0 * conflict_probability(7), 12.07, 0.05),
        ("weight of a 0.25 conflict", weight_of_conflict(0.25)?, 0.2877, 0.0005),
        ("expected random-pair weight", constants.expected_pair_weight, 0.0347, 0.0005),
        ("pairs per cluster (100-window)", constants.pairs_per_cluster, 94.9, 0.1),
        ("weight per misclassification", constants.weight_per_misclassification, 3.30, 0.01),
        ("error % at one misplaced report per cluster", classification_error_rate(7.0 * constants.weight_per_misclassification, 7, EVALUATION_WINDOW), 7.0, 0.01),
        ("sweep configurations", plan.configurations as f64, 210.0, 0.0),
        ("build-up invocations (10 datasets)", plan.buildup_invocations as f64, 135_100.0, 0.0),
        ("measurement invocations (10 datasets)", plan.measurement_invocations as f64, 52_500.0, 0.0),
        ("total invocations (10 datasets)", plan.total_invocations() as f64, 187_600.0, 0.0),
    ];

    let mut failures = Vec::new();
    for (label, got, want, tolerance) in &checks {
        let ok = (got - want).abs() <= *tolerance;
        println!(
            "{} {label}: {got} (want {want}{})",
            if ok { "ok  " } else { "FAIL" },
            if *tolerance > 0.0 {
                format!(" +/- {tolerance}")
            } else {
                String::new()
            }
        );
        if !ok {
            failures.push(*label);
        }
    }
    if !failures.is_empty() {
        bail!("{} constant(s) out of range: {}", failures.len(), failures.join(", "));
    }
    Ok(())
}
