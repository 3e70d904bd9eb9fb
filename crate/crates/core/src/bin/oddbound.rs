use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use oddbound::bounds::DiscrepancyMode;
use oddbound::critic::CriticMethod;
use oddbound::data::CsvMode;
use oddbound::harness::{
    self, config::SweepFile, records, sweep::Scale, ExportFormat, SingleConfig,
};
use oddbound::nn::TrainableScope;

#[derive(Parser)]
#[command(name = "oddbound", version, about = "Accuracy lower bounds under distribution shift (Dis² and ODD)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic overlap sweep; writes runs.csv, summary.csv and summary.json.
    SynthSweep(SweepArgs),
    /// Bound estimate for one `domain,label,f0,...` CSV.
    RunSingle(SingleArgs),
    /// Metrics over a per-run CSV.
    Evaluate(EvaluateArgs),
    /// Re-export a per-run CSV as runs or per-bin summary, CSV or JSON.
    Export(ExportArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// TOML key-value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<Scale>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    /// `full`, or `nonoverlap-soft` to predict from the non-overlap discrepancy.
    #[arg(long)]
    mode: Option<DiscrepancyMode>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    critic_epochs: Option<usize>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    h_epochs: Option<usize>,
    #[arg(long)]
    domain_epochs: Option<usize>,
    /// Defaults to $ODDBOUND_OUTPUT_DIR, then `out`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SingleArgs {
    csv: PathBuf,
    #[arg(long, default_value = "features")]
    mode: String,
    #[arg(long, default_value = "odd")]
    method: CriticMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long)]
    critic_epochs: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// `full`, `nonoverlap-soft` or `nonoverlap-hard` (needs `--method odd-hard`).
    #[arg(long, default_value = "full")]
    discrepancy_mode: DiscrepancyMode,
    /// Train every critic parameter instead of the last layer only.
    #[arg(long)]
    all_layers: bool,
    /// Also scale the source term of the ODD objective by s(x)₀.
    #[arg(long)]
    discount_source: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Per-run CSV from `synth-sweep`.
    runs: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    runs: PathBuf,
    /// `summary` or `runs`.
    #[arg(long, default_value = "summary")]
    what: String,
    #[arg(long, default_value = "csv")]
    format: ExportFormat,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value = "odd")]
    odd_method: CriticMethod,
    #[arg(long)]
    output: PathBuf,
}

fn synth_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let file = match &args.config {
        Some(p) => SweepFile::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => SweepFile::default(),
    };
    let flags = SweepFile {
        scale: args.scale,
        draws: args.draws,
        repeats: args.repeats,
        bins: args.bins,
        n_train: args.n_train,
        n_val: args.n_val,
        seed: args.seed,
        delta: args.delta,
        mode: args.mode,
        restarts: args.restarts,
        critic_epochs: args.critic_epochs,
        critic_lr: args.critic_lr,
        h_epochs: args.h_epochs,
        domain_epochs: args.domain_epochs,
        output_dir: args.output_dir,
        ..SweepFile::default()
    };
    let config = flags.or(file).resolve();
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let quiet = args.quiet;
    let start = std::time::Instant::now();
    let output = harness::run_sweep(&config, |done, total| {
        if !quiet && (done % 10 == 0 || done == total) {
            eprintln!("[{:>7.1}s] {done}/{total} runs", start.elapsed().as_secs_f64());
        }
    })?;
    harness::write_sweep_outputs(&output, &config, &dir)?;
    let eval = harness::evaluate_records(&output.records)?;
    print_evaluation(&eval);
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn run_single(args: SingleArgs) -> anyhow::Result<()> {
    let mode = match args.mode.as_str() {
        "features" => CsvMode::Features,
        "logits" => CsvMode::Logits,
        other => bail!("unknown mode `{other}` (expected features or logits)"),
    };
    let mut config = SingleConfig {
        mode,
        method: args.method,
        seed: args.seed,
        ..SingleConfig::default()
    };
    config.critic.restarts = args.restarts;
    config.critic.discount_source = args.discount_source;
    if args.all_layers {
        config.critic.scope = TrainableScope::All;
    }
    if let Some(e) = args.critic_epochs {
        config.critic.train.max_epochs = e;
    }
    config.bound.delta = args.delta;
    config.bound.mode = args.discrepancy_mode;
    let out = harness::run_single(&args.csv, &config)
        .with_context(|| format!("running on {}", args.csv.display()))?;
    let json = serde_json::to_string_pretty(&out)? + "\n";
    match args.output {
        Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn print_evaluation(eval: &harness::SweepEvaluation) {
    println!("method      n      mae       coverage  overest_mae");
    for (m, r) in &eval.per_method {
        println!(
            "{m:<10} {:>5}  {:.6}  {:.6}  {:.6}",
            r.n, r.mae, r.coverage, r.overestimation_mae
        );
    }
    if let Some(c) = eval.cells {
        println!(
            "validity cells: both valid {}, dis2 invalid / odd valid {}, dis2 valid / odd invalid {}, both invalid {}",
            c.both_valid, c.dis2_invalid_odd_valid, c.dis2_valid_odd_invalid, c.both_invalid
        );
    }
    if let Some(p) = eval.paired {
        let t = p.t.map(|t| format!("{t:.3}")).unwrap_or_else(|| "n/a".into());
        println!("paired odd - dis2: n {} mean {:.6} sd {:.6} t {t}", p.n, p.mean, p.sd);
    }
    println!("failed runs: {}/{}", eval.failed_runs, eval.total_runs);
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let rows = records::load_runs_csv(&args.runs)?;
    let eval = harness::evaluate_records(&rows)?;
    print_evaluation(&eval);
    if let Some(p) = args.json {
        std::fs::write(&p, serde_json::to_string_pretty(&eval)? + "\n")?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> anyhow::Result<()> {
    let rows = records::load_runs_csv(&args.runs)?;
    match args.what.as_str() {
        "summary" => {
            let summary = harness::summarize(&rows, args.bins, args.odd_method.name())?;
            records::export_summary(&summary, args.format, &args.output)?;
        }
        "runs" => records::export_runs(&rows, args.format, &args.output)?,
        other => bail!("unknown export `{other}` (expected summary or runs)"),
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SynthSweep(a) => synth_sweep(a),
        Command::RunSingle(a) => run_single(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(a) => export(a),
    }
}
