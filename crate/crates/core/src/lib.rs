//! Classify webpages by the content of a random sample of their images.
//!
//! The pipeline fetches a page, discovers its image links, downloads a
//! shuffled subset until a quota of valid images is reached, turns each image
//! into a feature vector, scores it with a random forest and aggregates the
//! per-image probabilities into a page-level decision.
//!
//! ```text
//! crawler -> imaging -> features -> forest -> aggregation -> evaluation
//! ```
//!
//! [`pipeline::PageClassifier`] wires the stages together. The guide under
//! `book/` walks through each stage.

pub mod aggregation;
pub mod crawler;
pub mod evaluation;
pub mod features;
pub mod fixture;
pub mod forest;
pub mod imaging;
pub mod pipeline;
pub mod plot;
pub mod synth;

pub use aggregation::{PageResult, Threshold};
pub use crawler::{crawl, CrawlConfig, CrawlOutcome, CrawlStatus, ImageLink, SourceKind};
pub use evaluation::{EvalCurve, LabeledPage, Method};
pub use features::{ExtractorSpec, FeatureExtractor, FeatureMatrix, FeatureVector};
pub use forest::{Forest, Hyperparams, TrainingSet};
pub use imaging::{ImageRecord, Tensor, ValidationPolicy};

// Book chapters are compiled as doctests so their snippets stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/crawling.md")]
    mod crawling {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/forest.md")]
    mod forest {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
