use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use avrae_eval::cli::{
    cmd_ingest, cmd_report, cmd_run, cmd_score_with, default_checkpoint_path, parse_template_spec,
    CliError, RunParams, ScoreOptions,
};
use avrae_eval::config::load_config;

#[derive(Parser)]
#[command(name = "avrae-eval", version, about = "Evaluate LLM-generated Avrae commands against D&D game state")]
struct Cli {
    /// TOML config file (backend, dataset, and prompt options).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean, and filter a FIREBALL-format record file.
    Ingest {
        /// Line-delimited JSON input (gzip-transparent).
        input: PathBuf,
        /// Normalized records output; a filter report lands at <out>.report.json.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Expand prompt instances and run them against the backend.
    Run {
        /// Normalized records from `ingest`.
        records: PathBuf,
        /// Template ids to run, e.g. "1-5", "3", or "2,4".
        #[arg(long, default_value = "1-5")]
        templates: String,
        /// Generation results output (JSONL, ordered by instance id).
        #[arg(short, long)]
        out: PathBuf,
        /// Checkpoint file; defaults to <out>.checkpoint.jsonl.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue an existing checkpoint instead of refusing to overwrite it.
        #[arg(long)]
        resume: bool,
        /// Backend base URL override (http(s)://.../v1 or mock:echo-gold).
        #[arg(long)]
        backend: Option<String>,
        /// Model name override.
        #[arg(long)]
        model: Option<String>,
    },
    /// Score generation results against the records they were built from.
    Score {
        /// Results file from `run`.
        results: PathBuf,
        /// Normalized records the run used.
        #[arg(long)]
        records: PathBuf,
        /// Per-instance metric rows output (JSONL).
        #[arg(short, long)]
        out: PathBuf,
        /// Additionally write pooled corpus-level BLEU per (model, prompt)
        /// to <out>.corpus_bleu.json.
        #[arg(long)]
        corpus_bleu: bool,
    },
    /// Aggregate metric rows into CSV and JSON summaries.
    Report {
        /// Rows file from `score`.
        rows: PathBuf,
        /// Per-(model, prompt) table.
        #[arg(long)]
        out_csv: PathBuf,
        /// Bar-chart-ready JSON summary.
        #[arg(long)]
        out_json: PathBuf,
    },
}

fn init_tracing(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { input, out } => {
            let report = cmd_ingest(&input, &out, &cfg)?;
            println!(
                "ingested {} records ({} dropped) -> {}",
                report.kept,
                report.dropped.len(),
                out.display()
            );
        }
        Command::Run { records, templates, out, checkpoint, resume, backend, model } => {
            if let Some(backend) = backend {
                cfg.backend.base_url = backend;
            }
            if let Some(model) = model {
                cfg.backend.model_name = model;
            }
            let params = RunParams {
                checkpoint: checkpoint.unwrap_or_else(|| default_checkpoint_path(&out)),
                records,
                template_ids: parse_template_spec(&templates)?,
                resume,
                out: out.clone(),
            };
            let results = cmd_run(&params, &cfg)?;
            println!("ran {} instances -> {}", results.len(), out.display());
        }
        Command::Score { results, records, out, corpus_bleu } => {
            let opts = ScoreOptions { corpus_bleu };
            let rows = cmd_score_with(&results, &records, &out, &cfg, &opts)?;
            println!("scored {rows} rows -> {}", out.display());
        }
        Command::Report { rows, out_csv, out_json } => {
            let summary = cmd_report(&rows, &out_csv, &out_json)?;
            for group in &summary.groups {
                println!(
                    "model={} prompt={} format={:.3} reference={:.3}",
                    group.model_name, group.template_id, group.format_rate, group.reference_rate
                );
            }
            println!("report -> {} and {}", out_csv.display(), out_json.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_tracing(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
