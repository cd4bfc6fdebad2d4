use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use sparselab::harness::{self, merge_json, ExperimentConfig, Grid, ReportKind, ReportOptions};

#[derive(Parser)]
#[command(name = "sparselab", version, about = "Iterative pruning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (one cell per seed).
    Run(RunArgs),
    /// Run every cell of a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Cells executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the grid's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Summarise completed runs as CSV.
    Report(ReportArgs),
    /// Dump one layer's mask (or weights) as a CSV grid.
    InspectMask {
        /// Run directory.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        iteration: usize,
        #[arg(long)]
        layer: String,
        /// Print weights (zero where pruned) instead of mask bits.
        #[arg(long)]
        weights: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// accuracy, jaccard, hamming, stability, structuredness, ensemble,
    /// agreement or trajectories.
    #[arg(long)]
    kind: String,
    /// Glob over run directories, e.g. 'runs/scaled/*'.
    #[arg(long)]
    runs: String,
    /// Reference `method` or `method/handling` for mask comparisons.
    #[arg(long)]
    reference: Option<String>,
    /// Comma-separated ensemble / agreement members.
    #[arg(long, value_delimiter = ',')]
    members: Vec<String>,
    #[arg(long)]
    iteration: Option<usize>,
    #[arg(long)]
    layer: Option<String>,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; its values take precedence over flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    scope: Option<String>,
    #[arg(long)]
    direction: Option<String>,
    #[arg(long)]
    handling: Option<String>,
    #[arg(long)]
    capture_epoch: Option<usize>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    test_limit: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn flags(&self) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put("arch", self.arch.as_ref().map(|v| json!(v)));
        put("dataset", self.dataset.as_ref().map(|v| json!(v)));
        put("seeds", self.seed.map(|v| json!([v])));
        put("epochs_per_iteration", self.epochs.map(|v| json!(v)));
        put("lr", self.lr.map(|v| json!(v)));
        put("batch_size", self.batch_size.map(|v| json!(v)));
        put("iterations", self.iterations.map(|v| json!(v)));
        put("fraction", self.fraction.map(|v| json!(v)));
        put("method", self.method.as_ref().map(|v| json!(v)));
        put("scope", self.scope.as_ref().map(|v| json!(v)));
        put("direction", self.direction.as_ref().map(|v| json!(v)));
        put("handling", self.handling.as_ref().map(|v| json!(v)));
        put("checkpoint_capture_epoch", self.capture_epoch.map(|v| json!(v)));
        put("train_limit", self.train_limit.map(|v| json!(v)));
        put("test_limit", self.test_limit.map(|v| json!(v)));
        put("output_dir", self.output_dir.as_ref().map(|v| json!(v)));
        Value::Object(m)
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut value = args.flags();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        merge_json(&mut value, serde_json::from_str(&text)?);
    }
    let cfg = ExperimentConfig::from_value(value)?;
    let data = harness::load_data(&cfg.dataset, &harness::data_root())?;
    for cell in cfg.per_seed() {
        let rec = harness::run_experiment(&cell, &data)?;
        println!("{}", cell.run_dir()?.display());
        for it in &rec.iterations {
            println!(
                "  iteration {:>2}  accuracy {:6.2}  sparsity {:.4}  effective {:.4}",
                it.iteration, it.test_accuracy, it.explicit_sparsity, it.effective_sparsity
            );
        }
    }
    Ok(())
}

fn sweep(grid: PathBuf, jobs: usize, output_dir: Option<PathBuf>) -> Result<()> {
    let mut cells = Grid::from_file(&grid)?.expand()?;
    if let Some(dir) = output_dir {
        for c in &mut cells {
            c.output_dir = dir.clone();
        }
    }
    let results = harness::run_sweep(&cells, &harness::data_root(), jobs)?;
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(rec) => println!("ok      {}", rec.run_id),
            Err(e) => {
                failed += 1;
                println!("failed  {}: {e}", r.config.run_id().unwrap_or_default());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} cells failed", results.len());
    }
    Ok(())
}

fn emit(text: &str, out: Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let kind: ReportKind = args.kind.parse()?;
    let runs = harness::select_runs(&args.runs)?;
    let mut opts = ReportOptions {
        reference: args.reference,
        members: args.members,
        iteration: args.iteration,
        layer: args.layer,
        labels: None,
    };
    if kind == ReportKind::Ensemble {
        let dataset = &runs[0].config().dataset;
        let data = harness::load_data(dataset, &harness::data_root())?;
        opts.labels = Some(harness::test_labels(&runs, &data.test)?);
    }
    emit(&harness::report(kind, &runs, &opts)?, args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep {
            grid,
            jobs,
            output_dir,
        } => sweep(grid, jobs, output_dir),
        Command::Report(args) => report(args),
        Command::InspectMask {
            run,
            iteration,
            layer,
            weights,
            out,
        } => harness::inspect_mask(&run, iteration, &layer, weights)
            .map_err(Into::into)
            .and_then(|text| emit(&text, out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
