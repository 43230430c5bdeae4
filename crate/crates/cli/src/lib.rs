//! Command-line front end: `classify`, `batch`, `train` and `evaluate`.
//!
//! Exit codes: 0 success, 1 error, 2 page could not be classified.

pub mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use pageclass::evaluation::EvalError;
use pageclass::features::FeatureError;
use pageclass::forest::ForestError;
use pageclass::imaging::ValidationPolicy;
use pageclass::pipeline::PipelineError;

pub use commands::{cmd_batch, cmd_classify, cmd_evaluate, cmd_train};
pub use config::{Cli, Command, OutputFormat, RunConfig};
pub use report::{ClassifyReport, PageStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCLASSIFIABLE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("no model file given (use --model)")]
    MissingModel,
    #[error("model {path}: {message}", path = .0.display(), message = .1)]
    Model(PathBuf, String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Other(String),
}

impl RunConfig {
    pub fn validation_policy(&self) -> ValidationPolicy {
        ValidationPolicy::default()
    }
}

pub fn classify_exit_code(report: &ClassifyReport) -> i32 {
    match report.status {
        PageStatus::Classified => EXIT_OK,
        PageStatus::Unclassifiable => EXIT_UNCLASSIFIABLE,
        PageStatus::Error => EXIT_ERROR,
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, value);
    let _ = writeln!(out);
}

/// Runs a parsed command line, printing results to stdout, and returns the
/// process exit code.
pub fn run(cli: Cli) -> i32 {
    let config = match cli.flags.to_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let result = match &cli.command {
        Command::Classify { url } => cmd_classify(url, &config).map(|report| {
            print!("{}", commands::render_report(&report, config.output_format));
            if let Some(e) = &report.error {
                eprintln!("error: {e}");
            }
            classify_exit_code(&report)
        }),
        Command::Batch { url_list } => cmd_batch(url_list, &config).map(|out| {
            match config.output_format {
                OutputFormat::Csv => print!("{}", out.matrix_csv),
                OutputFormat::Json => {
                    for r in &out.reports {
                        println!("{}", serde_json::to_string(r).expect("report serializes"));
                    }
                    println!("{}", serde_json::to_string(&out.summary).expect("summary serializes"));
                }
            }
            EXIT_OK
        }),
        Command::Train { manifest } => cmd_train(manifest, &config).map(|s| {
            print_json(&s);
            EXIT_OK
        }),
        Command::Evaluate { labeled_list } => cmd_evaluate(labeled_list, &config).map(|out| {
            print_json(&out.summary);
            EXIT_OK
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}
