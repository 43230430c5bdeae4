//! End-to-end page classification: crawl, validate, normalize, extract,
//! score, aggregate.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::aggregation::{PageResult, Threshold};
use crate::crawler::{crawl, ConfigError, CrawlConfig, CrawlOutcome, Fetcher, HttpFetcher, ImageLink};
use crate::features::{FeatureError, FeatureExtractor, FeatureMatrix};
use crate::forest::{Forest, ForestError};
use crate::imaging::{normalize, validate, ImageRecord, ValidationPolicy};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("model has no class {0:?} (classes: {1:?})")]
    UnknownClass(String, Vec<String>),
    #[error("extractor produces {extractor}-dimensional features but the forest was trained on {forest}")]
    DimMismatch { extractor: usize, forest: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub crawl_ms: u64,
    pub extract_ms: u64,
    pub predict_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredImage {
    pub link: ImageLink,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub outcome: CrawlOutcome,
    pub images: Vec<ScoredImage>,
    /// `None` when no valid image was found.
    pub page_result: Option<PageResult>,
    pub timings: Timings,
}

/// Normalizes each record to the extractor's input side and extracts one
/// feature column per record.
pub fn featurize(records: &[ImageRecord], extractor: &dyn FeatureExtractor) -> Result<FeatureMatrix, FeatureError> {
    let side = extractor.input_side();
    let tensors: Vec<_> = records.par_iter().map(|r| normalize(r, side)).collect();
    extractor.extract_batch(&tensors)
}

pub struct PageClassifier {
    forest: Forest,
    extractor: Box<dyn FeatureExtractor>,
    target: usize,
    crawl: CrawlConfig,
    policy: ValidationPolicy,
    threshold: Threshold,
    fetcher: Box<dyn Fetcher>,
}

impl PageClassifier {
    pub fn new(
        forest: Forest,
        extractor: Box<dyn FeatureExtractor>,
        target_class: &str,
        crawl: CrawlConfig,
        policy: ValidationPolicy,
        threshold: Threshold,
    ) -> Result<Self, PipelineError> {
        if extractor.dim() != forest.dim() {
            return Err(PipelineError::DimMismatch {
                extractor: extractor.dim(),
                forest: forest.dim(),
            });
        }
        let target = forest
            .class_index(target_class)
            .ok_or_else(|| PipelineError::UnknownClass(target_class.to_owned(), forest.classes().to_vec()))?;
        crawl.validate()?;
        let fetcher = Box::new(HttpFetcher::new(&crawl.user_agent, policy.max_bytes));
        Ok(PageClassifier {
            forest,
            extractor,
            target,
            crawl,
            policy,
            threshold,
            fetcher,
        })
    }

    pub fn with_fetcher(mut self, fetcher: Box<dyn Fetcher>) -> Self {
        self.fetcher = fetcher;
        self
    }

    pub fn crawl_config(&self) -> &CrawlConfig {
        &self.crawl
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn target_class(&self) -> &str {
        &self.forest.classes()[self.target]
    }

    /// Target-class probability for each record.
    pub fn score_records(&self, records: &[ImageRecord]) -> Result<Vec<f64>, PipelineError> {
        let features = featurize(records, self.extractor.as_ref())?;
        self.score_matrix(&features)
    }

    fn score_matrix(&self, features: &FeatureMatrix) -> Result<Vec<f64>, PipelineError> {
        (0..features.n_samples())
            .map(|i| Ok(self.forest.predict_proba(&features.column(i))?[self.target]))
            .collect()
    }

    pub fn classify(&self, url: &Url) -> Result<Classification, PipelineError> {
        let t0 = Instant::now();
        let validator = |raw: &[u8], link: &ImageLink| validate(raw, link, &self.policy);
        let outcome = crawl(url, &self.crawl, self.fetcher.as_ref(), &validator)?;
        let t1 = Instant::now();
        let features = featurize(&outcome.images, self.extractor.as_ref())?;
        let t2 = Instant::now();
        let probs = self.score_matrix(&features)?;
        let t3 = Instant::now();

        let images = outcome
            .images
            .iter()
            .zip(&probs)
            .map(|(r, &p)| ScoredImage {
                link: r.source.clone(),
                probability: p,
            })
            .collect();
        let page_result = PageResult::new(url.as_str(), probs, self.threshold, self.crawl.max_images).ok();
        let ms = |a: Instant, b: Instant| (b - a).as_millis() as u64;
        Ok(Classification {
            outcome,
            images,
            page_result,
            timings: Timings {
                crawl_ms: ms(t0, t1),
                extract_ms: ms(t1, t2),
                predict_ms: ms(t2, t3),
            },
        })
    }
}
