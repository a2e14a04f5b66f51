use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depthcl::config::{default_cap, SequenceConfig};
use depthcl::dataset::{load_dataset, save_dataset};
use depthcl::error::{Error, Result};
use depthcl::harness::{evaluate_checkpoint, run_sequence, DatasetHandle, RunOptions};
use depthcl::sweep::{parse_axis, parse_value, run_sweep, Point};
use depthcl::{checkpoint, fsutil, report};
use depthcl_core::continual::StrategyKind;
use depthcl_core::data::{generate_domain, holdout_split, preset, sequence_preset, DomainSpec, SampleSource};
use depthcl_core::metrics::{Averaging, RangeCap};

/// Continual depth-completion benchmark runner.
#[derive(Parser)]
#[command(name = "depthcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset (or every dataset of a sequence) to files.
    Generate(GenerateArgs),
    /// Train a strategy through a dataset sequence.
    Run(RunArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Build summary tables and plots from run directories.
    Report(ReportArgs),
    /// Run a grid of config overrides and report them together.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Domain preset name.
    #[arg(long, conflicts_with_all = ["sequence", "spec"])]
    preset: Option<String>,
    /// Sequence preset name; writes one file per domain into --out.
    #[arg(long, conflicts_with = "spec")]
    sequence: Option<String>,
    /// TOML file holding a domain spec.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Output file, or directory with --sequence.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config strategy kind.
    #[arg(long)]
    strategy: Option<StrategyKind>,
    /// Run directory; defaults to the config's `output`, then `runs/<label>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue an interrupted run in the same directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file.
    #[arg(long, conflicts_with = "preset")]
    dataset: Option<PathBuf>,
    /// Domain preset rendered on the fly.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value_t = 2500)]
    count: usize,
    /// Seed of the rendered domain and of the holdout split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation fraction of the holdout split; 0 evaluates every sample.
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
    /// Depth range `min,max` in metres; required for dataset files.
    #[arg(long)]
    cap: Option<String>,
    #[arg(long)]
    per_pixel: bool,
    #[arg(long)]
    sequential: bool,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid axis `key=v1,v2,...` with a dotted config key; repeatable.
    #[arg(long = "grid", required = true)]
    grid: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: bool,
}

fn overrides(seed: Option<u64>, strategy: Option<StrategyKind>) -> Point {
    let mut o = Point::new();
    if let Some(s) = seed {
        o.push(("seed".into(), parse_value(&s.to_string())));
    }
    if let Some(k) = strategy {
        o.push(("strategy.kind".into(), toml::Value::String(k.name().into())));
    }
    o
}

fn parse_cap(s: &str) -> Result<RangeCap> {
    let bad = || Error::Config(format!("--cap `{s}` is not min,max"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    Ok(RangeCap::new(a, b)?)
}

fn sized(spec: DomainSpec, h: Option<usize>, w: Option<usize>) -> DomainSpec {
    let (hh, ww) = (h.unwrap_or(spec.height), w.unwrap_or(spec.width));
    spec.with_size(hh, ww)
}

fn generate(a: GenerateArgs) -> Result<()> {
    if let Some(name) = &a.sequence {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for spec in sequence_preset(name)? {
            let spec = sized(spec, a.height, a.width);
            let path = a.out.join(format!("{}.dcl", spec.name));
            save_dataset(&generate_domain(&spec, a.count, a.seed)?, &path)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let spec = match (&a.preset, &a.spec) {
        (Some(p), None) => preset(p)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        _ => return Err(Error::Config("generate needs one of --preset, --sequence or --spec".into())),
    };
    let spec = sized(spec, a.height, a.width);
    save_dataset(&generate_domain(&spec, a.count, a.seed)?, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let seq = SequenceConfig::load_with(&a.config, &overrides(a.seed, a.strategy))?;
    let cfg = seq.resolve()?;
    let out = a.out.or(seq.output.clone()).unwrap_or_else(|| PathBuf::from("runs").join(&cfg.label));
    let m = run_sequence(&cfg, &out, RunOptions { resume: a.resume, stop_after: None })?;
    println!("{} ({} datasets, complete: {})", out.display(), m.steps.len(), m.complete);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load_checkpoint(&a.checkpoint)?;
    let (data, default) = match (&a.dataset, &a.preset) {
        (Some(path), None) => (DatasetHandle::Loaded(load_dataset(path)?), None),
        (None, Some(name)) => {
            let spec = preset(name)?;
            let cap = default_cap(&spec);
            (DatasetHandle::Generated(depthcl_core::data::GeneratedDomain::new(spec, a.count, a.seed)?), Some(cap))
        }
        _ => return Err(Error::Config("eval needs one of --dataset or --preset".into())),
    };
    let cap = match (&a.cap, default) {
        (Some(s), _) => parse_cap(s)?,
        (None, Some(c)) => c,
        (None, None) => return Err(Error::Config("--cap is required for dataset files".into())),
    };
    let indices = if a.eval_fraction > 0.0 {
        holdout_split(data.len(), a.eval_fraction, a.seed)?.eval
    } else {
        (0..data.len()).collect()
    };
    let averaging = if a.per_pixel { Averaging::PerPixel } else { Averaging::PerFrame };
    let m = evaluate_checkpoint(&ckpt, &data, &indices, cap, averaging, !a.sequential)?;
    match &a.out {
        Some(path) => fsutil::write_json(path, &m)?,
        None => println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize")),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report::write_report(&a.runs, &a.out).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
        }),
        Command::Sweep(a) => (|| {
            let axes = a.grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
            let dirs = run_sweep(&a.config, &axes, &overrides(a.seed, a.strategy), &a.out, a.resume)?;
            println!("{} runs, report in {}", dirs.len(), a.out.join("report").display());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
