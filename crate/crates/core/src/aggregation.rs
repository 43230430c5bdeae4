//! Page-level decisions from per-image target-class probabilities.
//!
//! Two rules are provided:
//!
//! * **mean**: the page is positive when the mean image probability is at
//!   least the threshold;
//! * **top-n**: the page is positive when at least `n` images reach the
//!   threshold. With `n = 1` this is "the most confident image reaches the
//!   threshold".
//!
//! "Reaches" is always `p >= t`, here and in [`crate::evaluation`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("threshold must lie in [0, 1], got {0}")]
pub struct ThresholdRangeError(pub f64);

impl Threshold {
    pub fn new(t: f64) -> Result<Self, ThresholdRangeError> {
        if (0.0..=1.0).contains(&t) {
            Ok(Threshold(t))
        } else {
            Err(ThresholdRangeError(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold(0.41)
    }
}

impl TryFrom<f64> for Threshold {
    type Error = ThresholdRangeError;

    fn try_from(t: f64) -> Result<Self, Self::Error> {
        Threshold::new(t)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

/// The page yielded no valid images, so no rule can classify it. This is
/// distinct from a negative decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("page has no valid images and cannot be classified")]
pub struct Unclassifiable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDecision {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single image.
    pub std_dev: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopNDecision {
    pub count_above: usize,
    pub positive: bool,
}

pub fn method1_mean(image_probs: &[f64], t: Threshold) -> Result<MeanDecision, Unclassifiable> {
    if image_probs.is_empty() {
        return Err(Unclassifiable);
    }
    let n = image_probs.len() as f64;
    // rounding can push the sum of unit-interval values a hair past n
    let mean = (image_probs.iter().sum::<f64>() / n).clamp(0.0, 1.0);
    let std_dev = if image_probs.len() > 1 {
        (image_probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MeanDecision {
        mean,
        std_dev,
        positive: mean >= t.value(),
    })
}

pub fn count_above(image_probs: &[f64], t: Threshold) -> usize {
    image_probs.iter().filter(|&&p| p >= t.value()).count()
}

/// # Panics
///
/// If `n` is zero.
pub fn method2_topn(image_probs: &[f64], t: Threshold, n: usize) -> Result<TopNDecision, Unclassifiable> {
    assert!(n >= 1, "top-n rule needs n >= 1");
    if image_probs.is_empty() {
        return Err(Unclassifiable);
    }
    let count_above = count_above(image_probs, t);
    Ok(TopNDecision {
        count_above,
        positive: count_above >= n,
    })
}

/// All decisions for one page at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_url: String,
    pub image_probs: Vec<f64>,
    pub method1: MeanDecision,
    /// Keyed by `n` in `1..=max_images`.
    pub method2: BTreeMap<usize, TopNDecision>,
    pub threshold_used: Threshold,
}

impl PageResult {
    pub fn new(
        page_url: impl Into<String>,
        image_probs: Vec<f64>,
        t: Threshold,
        max_images: usize,
    ) -> Result<Self, Unclassifiable> {
        let method1 = method1_mean(&image_probs, t)?;
        let method2 = (1..=max_images.max(1))
            .map(|n| method2_topn(&image_probs, t, n).map(|d| (n, d)))
            .collect::<Result<_, _>>()?;
        Ok(PageResult {
            page_url: page_url.into(),
            image_probs,
            method1,
            method2,
            threshold_used: t,
        })
    }
}
