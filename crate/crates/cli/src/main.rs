use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Parser};
use seqdetect::asymptotics::TailCoefficient;
use seqdetect::config::parse_config;
use seqdetect::montecarlo::ExecMode;
use seqdetect::presets::{find_preset, presets, run_config, run_recursion, Outcome, Overrides};

/// Simulate, solve and check sequential detection over noisy broadcast channels.
#[derive(Debug, Parser)]
#[command(name = "seqdetect", version)]
#[command(group(ArgGroup::new("source").args(["preset", "config", "list"]).required(true)))]
struct Args {
    /// Run a named preset.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Run the task described by a JSON configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// With --config: iterate the public-belief recursion of its flip schedule instead.
    #[arg(long, requires = "config")]
    recursion: bool,

    /// Initial public belief b_1 for --recursion.
    #[arg(long, default_value_t = 0.25, requires = "recursion")]
    initial: f64,

    /// Output directory (default: out/<preset or task>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the random seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Override the number of Monte Carlo trials per hypothesis.
    #[arg(long, value_name = "N")]
    trials: Option<u64>,

    /// Override the horizon K (number of nodes).
    #[arg(long, value_name = "K")]
    nodes: Option<u64>,

    /// Cap on worker threads (1 runs sequentially).
    #[arg(long, value_name = "T")]
    threads: Option<usize>,

    /// List the presets and exit.
    #[arg(long)]
    list: bool,
}

fn mode_for(threads: Option<usize>) -> ExecMode {
    match threads {
        Some(1) => ExecMode::Sequential,
        _ => ExecMode::default(),
    }
}

fn execute(args: &Args) -> Result<Outcome> {
    let mode = mode_for(args.threads);
    if let Some(name) = &args.preset {
        let preset = find_preset(name)?;
        let overrides = Overrides {
            seed: args.seed,
            trials: args.trials,
            nodes: args.nodes,
            mode,
        };
        return preset
            .run(&overrides)
            .with_context(|| format!("preset {name}"));
    }
    let path = args.config.as_ref().expect("clap enforces a source");
    let mut parsed = parse_config(path).with_context(|| format!("reading {}", path.display()))?;
    if args.seed.is_some() || args.trials.is_some() || args.nodes.is_some() {
        let doc = &mut parsed.document;
        doc.seed = args.seed.unwrap_or(doc.seed);
        doc.trials = args.trials.unwrap_or(doc.trials);
        doc.horizon = args.nodes.unwrap_or(doc.horizon);
        parsed = parsed.document.validate()?;
    }
    for warning in &parsed.warnings {
        log::warn!("{warning}");
    }
    if args.recursion {
        Ok(run_recursion(
            &parsed,
            args.initial,
            TailCoefficient::default(),
        )?)
    } else {
        Ok(run_config(&parsed, mode)?)
    }
}

fn report(outcome: &Outcome) {
    for v in &outcome.verdicts {
        let status = if v.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {}: observed {} expected {}",
            v.check, v.observed, v.expected
        );
        if let Some(note) = &v.note {
            println!("     {note}");
        }
    }
    for note in &outcome.notes {
        println!("note: {note}");
    }
}

fn run(args: Args) -> Result<bool> {
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let outcome = execute(&args)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(&outcome.name));
    outcome
        .write_to(&dir)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    report(&outcome);
    println!(
        "wrote {} file(s) to {}",
        outcome.files.len() + 1,
        dir.display()
    );
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if args.list {
        for p in presets() {
            let criteria: Vec<String> = p.criteria.iter().map(u32::to_string).collect();
            println!("{:<22} [{}] {}", p.name, criteria.join(","), p.summary);
        }
        return ExitCode::SUCCESS;
    }
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
