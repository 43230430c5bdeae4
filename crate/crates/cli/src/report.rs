//! Serializable outputs of the subcommands.

use std::fmt::Write as _;
use std::path::PathBuf;

use pageclass::aggregation::{method2_topn, MeanDecision};
use pageclass::crawler::{CrawlStatus, RejectionTally, SourceKind};
use pageclass::evaluation::{BalancePoint, Method};
use pageclass::pipeline::{Classification, Timings};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageStatus {
    Classified,
    Unclassifiable,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub link: String,
    pub source_kind: SourceKind,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopNResult {
    pub n: usize,
    pub count_above: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub schema_version: u32,
    pub page_url: String,
    pub status: PageStatus,
    pub crawl_status: Option<CrawlStatus>,
    pub target_class: String,
    pub threshold: f64,
    pub images: Vec<ImageScore>,
    pub method1: Option<MeanDecision>,
    pub method2: Option<TopNResult>,
    pub links_discovered: usize,
    pub links_attempted: usize,
    pub links_rejected: RejectionTally,
    pub timings: Timings,
    pub error: Option<String>,
}

impl ClassifyReport {
    pub fn from_classification(c: &Classification, target_class: &str, threshold: f64, n: usize) -> Self {
        let images = c
            .images
            .iter()
            .map(|s| ImageScore {
                link: s.link.url.to_string(),
                source_kind: s.link.source_kind,
                probability: s.probability,
            })
            .collect();
        let (status, method1, method2) = match &c.page_result {
            Some(pr) => {
                let d = method2_topn(&pr.image_probs, pr.threshold_used, n).expect("page has images");
                let m2 = TopNResult {
                    n,
                    count_above: d.count_above,
                    positive: d.positive,
                };
                (PageStatus::Classified, Some(pr.method1), Some(m2))
            }
            None => (PageStatus::Unclassifiable, None, None),
        };
        ClassifyReport {
            schema_version: SCHEMA_VERSION,
            page_url: c.outcome.page_url.to_string(),
            status,
            crawl_status: Some(c.outcome.status),
            target_class: target_class.to_owned(),
            threshold,
            images,
            method1,
            method2,
            links_discovered: c.outcome.links_discovered,
            links_attempted: c.outcome.links_attempted,
            links_rejected: c.outcome.links_rejected,
            timings: c.timings,
            error: None,
        }
    }

    pub fn failed(page_url: &str, target_class: &str, threshold: f64, error: String) -> Self {
        ClassifyReport {
            schema_version: SCHEMA_VERSION,
            page_url: page_url.to_owned(),
            status: PageStatus::Error,
            crawl_status: None,
            target_class: target_class.to_owned(),
            threshold,
            images: Vec::new(),
            method1: None,
            method2: None,
            links_discovered: 0,
            links_attempted: 0,
            links_rejected: RejectionTally::default(),
            timings: Timings::default(),
            error: Some(error),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.images.iter().map(|i| i.probability).collect()
    }

    /// `page_url,status,link,probability`, one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("page_url,status,link,probability\n");
        for img in &self.images {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                csv_field(&self.page_url),
                status_name(self.status),
                csv_field(&img.link),
                img.probability
            );
        }
        s
    }
}

pub fn status_name(s: PageStatus) -> &'static str {
    match s {
        PageStatus::Classified => "classified",
        PageStatus::Unclassifiable => "unclassifiable",
        PageStatus::Error => "error",
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub pages: usize,
    pub classified: usize,
    pub unclassifiable: usize,
    pub errors: usize,
    /// Pages positive under the configured top-n rule.
    pub positive_topn: usize,
    pub positive_mean: usize,
    pub files: Vec<PathBuf>,
}

/// One row per page: probabilities sorted descending, padded to
/// `max_images`, then the mean.
pub fn matrix_csv(reports: &[ClassifyReport], max_images: usize) -> String {
    let mut s = String::from("page_url,status");
    for i in 1..=max_images {
        let _ = write!(s, ",p{i}");
    }
    s.push_str(",mean\n");
    for r in reports {
        let mut probs = r.probabilities();
        probs.sort_by(|a, b| b.total_cmp(a));
        let _ = write!(s, "{},{}", csv_field(&r.page_url), status_name(r.status));
        for i in 0..max_images {
            s.push(',');
            if let Some(p) = probs.get(i) {
                let _ = write!(s, "{p}");
            }
        }
        s.push(',');
        if let Some(m) = r.method1 {
            let _ = write!(s, "{}", m.mean);
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub model_path: PathBuf,
    pub samples: usize,
    pub failed: usize,
    pub classes: Vec<String>,
    pub class_counts: Vec<usize>,
    pub dim: usize,
    pub n_trees: usize,
    pub seed: u64,
    pub oob_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub balance_point: Option<BalancePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub pages: usize,
    /// Pages without a single valid image are left out of the sweep.
    pub pages_evaluated: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Methods by descending ROC AUC.
    pub ranking: Vec<Method>,
    pub methods: Vec<MethodSummary>,
    pub files: Vec<PathBuf>,
}

impl EvalSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}
