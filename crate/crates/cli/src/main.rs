use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use unlearn_cli::{config, experiment, report};

#[derive(Parser)]
#[command(
    name = "unlearn",
    about = "Adversarial machine unlearning: train, unlearn, evaluate",
    long_about = "Runs seeded unlearning experiments (min-max adversarial method or \
                  baselines), evaluates them with accuracy and membership-inference \
                  metrics, and collates Table-style reports.\n\
                  Scoring parallelism: set UNLEARN_SCORING_THREADS (default 1)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file plus optional overrides.
    Run(RunArgs),
    /// Collate aggregate reports under an output directory into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; omitted means all defaults (synthetic desk-scale data).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --override unlearn.alpha=0.5 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Unlearning method: ours, retrain, ft, ga, ff, iu.
    #[arg(long)]
    method: Option<String>,
    /// Seed list; repeat for multiple seeds.
    #[arg(long)]
    seed: Vec<u64>,
    /// Dataset file (csv/binary kinds).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset file format: csv or binary.
    #[arg(long)]
    format: Option<String>,
    /// Forget scheme: random_fraction or class_wise.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    forget_fraction: Option<f64>,
    #[arg(long)]
    forget_class: Option<usize>,
    /// Defender hidden widths, comma-separated (e.g. 128,64).
    #[arg(long)]
    defender_hidden: Option<String>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    attacker_layers: Option<usize>,
    #[arg(long)]
    attacker_heads: Option<usize>,
    #[arg(long)]
    sens_n: Option<usize>,
    #[arg(long)]
    sens_sigma: Option<f64>,
    #[arg(long)]
    pretrain_iters: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    non_saturating: bool,
    #[arg(long)]
    alpha_cutoff: Option<u64>,
    #[arg(long)]
    unlearn_lr: Option<f64>,
    #[arg(long)]
    ff_scale: Option<f64>,
    #[arg(long)]
    ff_damping: Option<f64>,
    #[arg(long)]
    iu_damping: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding per-method run outputs.
    #[arg(long)]
    dir: PathBuf,
    /// Output format: markdown (default) or csv.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Also write the table next to the inputs (report.csv / report.md).
    #[arg(long)]
    save: bool,
}

impl RunArgs {
    fn collect_overrides(&self) -> Vec<String> {
        let mut ov = self.overrides.clone();
        let mut push = |key: &str, value: String| ov.push(format!("{key}={value}"));
        if let Some(m) = &self.method {
            push("method", format!("\"{m}\""));
        }
        if !self.seed.is_empty() {
            let list = self.seed.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
            push("seeds", format!("[{list}]"));
        }
        if let Some(p) = &self.data {
            push("dataset.path", format!("\"{}\"", p.display()));
        }
        if let Some(f) = &self.format {
            push("dataset.kind", format!("\"{f}\""));
        }
        if let Some(s) = &self.scheme {
            push("scheme.kind", format!("\"{s}\""));
        }
        if let Some(v) = self.forget_fraction {
            push("scheme.forget_fraction", v.to_string());
        }
        if let Some(v) = self.forget_class {
            push("scheme.forget_class", v.to_string());
        }
        if let Some(h) = &self.defender_hidden {
            let widths: Vec<&str> = h.split(',').map(str::trim).collect();
            push("defender.hidden", format!("[{}]", widths.join(", ")));
        }
        if let Some(v) = self.feature_dim {
            push("defender.feature_dim", v.to_string());
        }
        if let Some(v) = self.attacker_layers {
            push("attacker.layers", v.to_string());
        }
        if let Some(v) = self.attacker_heads {
            push("attacker.heads", v.to_string());
        }
        if let Some(v) = self.sens_n {
            push("attacker.sens_n", v.to_string());
        }
        if let Some(v) = self.sens_sigma {
            push("attacker.sens_sigma", v.to_string());
        }
        if let Some(v) = self.pretrain_iters {
            push("attacker.pretrain_iters", v.to_string());
        }
        if let Some(v) = self.alpha {
            push("unlearn.alpha", v.to_string());
        }
        if let Some(v) = self.beta {
            push("unlearn.beta", v.to_string());
        }
        if let Some(v) = self.lambda {
            push("unlearn.lambda", v.to_string());
        }
        if let Some(v) = self.epochs {
            push("unlearn.epochs", v.to_string());
        }
        if self.non_saturating {
            push("unlearn.non_saturating", "true".into());
        }
        if let Some(v) = self.alpha_cutoff {
            push("unlearn.alpha_cutoff", v.to_string());
        }
        if let Some(v) = self.unlearn_lr {
            push("unlearn.unlearn_lr", v.to_string());
        }
        if let Some(v) = self.ff_scale {
            push("baseline.ff_scale", v.to_string());
        }
        if let Some(v) = self.ff_damping {
            push("baseline.ff_damping", v.to_string());
        }
        if let Some(v) = self.iu_damping {
            push("baseline.iu_damping", v.to_string());
        }
        if let Some(v) = self.sparsity {
            push("sparsity", v.to_string());
        }
        if let Some(p) = &self.output_dir {
            push("output_dir", format!("\"{}\"", p.display()));
        }
        ov
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let text = match &args.config {
                Some(path) => std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?,
                None => String::new(),
            };
            let cfg = config::parse_config_with_overrides(&text, &args.collect_overrides())?;
            let outcome = experiment::run_experiment(&cfg)?;
            if let Some(agg) = &outcome.aggregate {
                println!("method: {}", agg.label);
                println!("seeds:  {} succeeded, {} failed", agg.n_seeds, outcome.failures.len());
                for key in ["ua", "mia_efficacy", "ra", "ta"] {
                    println!("{key:>14}: {}", agg.metrics[key].formatted());
                }
                println!("{:>14}: {}", "runtime (min)", agg.runtime_minutes.formatted());
                println!("artifacts under {}", outcome.output_dir.display());
            }
            if !outcome.failures.is_empty() {
                for (seed, err) in &outcome.failures {
                    eprintln!("seed {seed} failed: {err}");
                }
                std::process::exit(1);
            }
            Ok(())
        }
        Command::Report(args) => {
            let aggregates = report::collect_aggregates(&args.dir)?;
            let rows = report::build_rows(&aggregates);
            let (rendered, file_name) = match args.format.as_str() {
                "csv" => (report::to_csv(&rows), "report.csv"),
                _ => (report::to_markdown(&rows), "report.md"),
            };
            print!("{rendered}");
            if args.save {
                std::fs::write(args.dir.join(file_name), &rendered)?;
            }
            Ok(())
        }
    }
}
