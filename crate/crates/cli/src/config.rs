//! Command-line flags and the run configuration they resolve to.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pageclass::crawler::CrawlConfig;
use pageclass::features::{Backend, Device, ExtractorSpec};
use pageclass::Threshold;

#[derive(Debug, Parser)]
#[command(name = "pageclass", version, about = "Classify webpages by a random sample of their images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one page.
    Classify { url: String },
    /// Classify every URL in a file (one per line, `#` comments).
    Batch { url_list: PathBuf },
    /// Train a forest from a `label<TAB>path-or-url` manifest.
    Train { manifest: PathBuf },
    /// Sweep thresholds over a `label<TAB>url` list and rank the rules.
    Evaluate { labeled_list: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    Stub,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeviceKind {
    Cpu,
    Accelerator,
}

#[derive(Debug, Args)]
pub struct Flags {
    /// Valid images to collect per page.
    #[arg(long, global = true, default_value_t = 10)]
    pub max_images: usize,
    /// Decision threshold in [0, 1].
    #[arg(long, global = true, default_value_t = 0.41)]
    pub threshold: f64,
    /// Images at or above the threshold needed for a positive page.
    #[arg(long, global = true, default_value_t = 1)]
    pub n: usize,
    /// Forest model file (written by `train`, read by the other commands).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ExtractorKind::Stub)]
    pub extractor: ExtractorKind,
    /// Model file for `--extractor model`.
    #[arg(long, global = true)]
    pub extractor_model: Option<PathBuf>,
    /// Feature dimension.
    #[arg(long, global = true, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, global = true, value_enum, default_value_t = DeviceKind::Cpu)]
    pub device: DeviceKind,
    /// Seeds link shuffling and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Concurrent image downloads per page.
    #[arg(long, global = true, default_value_t = 8)]
    pub parallelism: usize,
    /// Also search same-host sub-pages (requires --parallelism 1).
    #[arg(long, global = true)]
    pub follow_suburls: bool,
    /// Per-request timeout.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub timeout_ms: u64,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Output file, or directory for `batch` and `evaluate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Class whose probability is aggregated.
    #[arg(long, global = true, default_value = "weapon")]
    pub target_class: String,
    /// Trees to grow in `train`.
    #[arg(long, global = true, default_value_t = 100)]
    pub trees: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub crawl: CrawlConfig,
    pub extractor: ExtractorSpec,
    pub model_path: Option<PathBuf>,
    pub threshold: Threshold,
    pub n: usize,
    pub output_format: OutputFormat,
    pub output_path: Option<PathBuf>,
    pub target_class: String,
    pub trees: usize,
    pub train_seed: u64,
    /// Pages classified at once in `batch` and `evaluate`.
    pub batch_concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            crawl: CrawlConfig::default(),
            extractor: ExtractorSpec::default(),
            model_path: None,
            threshold: Threshold::default(),
            n: 1,
            output_format: OutputFormat::Json,
            output_path: None,
            target_class: "weapon".into(),
            trees: 100,
            train_seed: 0,
            batch_concurrency: 4,
        }
    }
}

impl Flags {
    pub fn to_config(&self) -> Result<RunConfig, String> {
        let threshold = Threshold::new(self.threshold).map_err(|e| e.to_string())?;
        if self.n == 0 {
            return Err("--n must be at least 1".into());
        }
        let crawl = CrawlConfig {
            max_images: self.max_images,
            per_request_timeout: Duration::from_millis(self.timeout_ms),
            follow_suburls: self.follow_suburls,
            parallelism: self.parallelism,
            shuffle_seed: self.seed,
            ..CrawlConfig::default()
        };
        crawl.validate().map_err(|e| e.to_string())?;
        let extractor = ExtractorSpec {
            backend: match self.extractor {
                ExtractorKind::Stub => Backend::DeterministicStub,
                ExtractorKind::Model => Backend::ExternalModel,
            },
            dim: self.dim,
            model_path: self.extractor_model.clone(),
            device: match self.device {
                DeviceKind::Cpu => Device::Cpu,
                DeviceKind::Accelerator => Device::Accelerator,
            },
            ..ExtractorSpec::default()
        };
        Ok(RunConfig {
            crawl,
            extractor,
            model_path: self.model.clone(),
            threshold,
            n: self.n,
            output_format: self.format,
            output_path: self.out.clone(),
            target_class: self.target_class.clone(),
            trees: self.trees,
            train_seed: self.seed.unwrap_or(0),
            ..RunConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pageclass").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_match_run_config() {
        let cfg = parse(&["classify", "http://x.test/"]).flags.to_config().unwrap();
        let d = RunConfig::default();
        assert_eq!(cfg.crawl.max_images, 10);
        assert_eq!(cfg.crawl.parallelism, 8);
        assert_eq!(cfg.threshold.value(), 0.41);
        assert_eq!(cfg.n, 1);
        assert_eq!(cfg.extractor.dim, 256);
        assert_eq!(cfg.target_class, d.target_class);
        assert_eq!(cfg.train_seed, 0);
        assert!(cfg.crawl.shuffle_seed.is_none());
    }

    #[test]
    fn flags_after_the_subcommand() {
        let cli = parse(&["batch", "urls.txt", "--threshold", "0.6", "--n", "2", "--seed", "5"]);
        let cfg = cli.flags.to_config().unwrap();
        assert_eq!(cfg.threshold.value(), 0.6);
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.crawl.shuffle_seed, Some(5));
        assert_eq!(cfg.train_seed, 5);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |args: &[&str]| parse(args).flags.to_config().is_err();
        assert!(bad(&["classify", "u", "--threshold", "1.5"]));
        assert!(bad(&["classify", "u", "--n", "0"]));
        assert!(bad(&["classify", "u", "--follow-suburls"]));
        assert!(!bad(&["classify", "u", "--follow-suburls", "--parallelism", "1"]));
    }
}
