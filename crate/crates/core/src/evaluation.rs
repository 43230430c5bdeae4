//! Threshold sweeps over labeled pages: precision-recall and ROC curves,
//! areas under them, the sensitivity = specificity balance point and a
//! ranking of the aggregation rules.
//!
//! Every rule is turned into a scalar page score so it can be swept: the
//! mean image probability for the mean rule, the n-th largest image
//! probability for the top-n rule (`count_above >= n` at `t` exactly when
//! the n-th largest probability is `>= t`). Curves are evaluated at every
//! distinct page score plus the sentinels `0` and `1 + eps`, so they are the
//! exact step functions with no grid artifacts.

use std::cmp::Ordering;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{method1_mean, method2_topn, PageResult, Threshold};

/// Upper sentinel: above every probability, so nothing is predicted positive.
pub const ABOVE_ONE: f64 = 1.0 + f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Mean,
    TopN(usize),
}

impl Method {
    fn rank_key(self) -> (u8, usize) {
        match self {
            Method::TopN(n) => (0, n),
            Method::Mean => (1, 0),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Mean => f.write_str("mean"),
            Method::TopN(n) => write!(f, "top{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mean" {
            return Ok(Method::Mean);
        }
        match s.strip_prefix("top").and_then(|n| n.parse().ok()) {
            Some(n) if n >= 1 => Ok(Method::TopN(n)),
            _ => Err(format!("unknown method {s:?} (expected mean or top<n>)")),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    PrecisionRecall,
    Roc,
}

impl CurveKind {
    pub fn short_name(self) -> &'static str {
        match self {
            CurveKind::PrecisionRecall => "pr",
            CurveKind::Roc => "roc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPage {
    pub page_result: PageResult,
    /// Whether the page truly belongs to the target class.
    pub label: bool,
}

impl LabeledPage {
    pub fn probs(&self) -> &[f64] {
        &self.page_result.image_probs
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// True-positive rate (recall, sensitivity).
    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// True-negative rate.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.fp + self.tn)
    }

    /// 1.0 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            ratio(self.tp, self.tp + self.fp)
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no labeled pages to evaluate")]
    NoPages,
    #[error("labels must include both classes (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("top-n rule needs n >= 1")]
    ZeroN,
    #[error("no sensitivity/specificity crossing: {0}")]
    NoCrossing(String),
}

/// Applies `method` to one page at threshold `t`. Thresholds above 1 are
/// never reached.
pub fn predict(probs: &[f64], method: Method, t: f64) -> bool {
    let Ok(threshold) = Threshold::new(t) else {
        return t < 0.0 && !probs.is_empty();
    };
    match method {
        Method::Mean => method1_mean(probs, threshold).is_ok_and(|d| d.positive),
        Method::TopN(n) => method2_topn(probs, threshold, n).is_ok_and(|d| d.positive),
    }
}

/// Tallies the rule's decisions at `t` against the labels.
pub fn confusion(pages: &[LabeledPage], method: Method, t: Threshold) -> ConfusionCounts {
    confusion_at(pages, method, t.value())
}

fn confusion_at(pages: &[LabeledPage], method: Method, t: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for page in pages {
        match (predict(page.probs(), method, t), page.label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Scalar score that makes `method` sweepable; `None` when the page has fewer
/// than `n` images for top-n (never positive at any threshold).
pub fn page_score(probs: &[f64], method: Method) -> Option<f64> {
    if probs.is_empty() {
        return None;
    }
    match method {
        Method::Mean => method1_mean(probs, Threshold::default()).ok().map(|d| d.mean),
        Method::TopN(n) => {
            let mut sorted = probs.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            n.checked_sub(1).and_then(|i| sorted.get(i).copied())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancePoint {
    pub threshold: f64,
    /// Common value of sensitivity and specificity at the crossing.
    pub value: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub kind: CurveKind,
    pub method: Method,
    /// Ordered by increasing threshold. For ROC, `x` is the false-positive
    /// rate and `y` the true-positive rate; for PR, `x` is recall and `y`
    /// precision.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
    pub balance_point: Option<BalancePoint>,
}

fn check_labels(pages: &[LabeledPage]) -> Result<(usize, usize), EvalError> {
    if pages.is_empty() {
        return Err(EvalError::NoPages);
    }
    let positives = pages.iter().filter(|p| p.label).count();
    let negatives = pages.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// `0`, every distinct page score, and [`ABOVE_ONE`], ascending.
pub fn sweep_thresholds(pages: &[LabeledPage], method: Method) -> Vec<f64> {
    let mut ts: Vec<f64> = pages.iter().filter_map(|p| page_score(p.probs(), method)).collect();
    ts.push(0.0);
    ts.push(ABOVE_ONE);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn sweep_counts(pages: &[LabeledPage], method: Method) -> Vec<(f64, ConfusionCounts)> {
    sweep_thresholds(pages, method)
        .into_iter()
        .map(|t| (t, confusion_at(pages, method, t)))
        .collect()
}

/// Builds the PR or ROC curve of `method` over `pages`.
///
/// A ROC curve always runs from `(1, 1)` to `(0, 0)`. When a top-n rule can
/// never fire on some pages (fewer than `n` images), the `(1, 1)` corner is
/// added as the trivial predict-everything classifier at threshold `-inf`.
pub fn sweep(pages: &[LabeledPage], method: Method, kind: CurveKind) -> Result<EvalCurve, EvalError> {
    if method == Method::TopN(0) {
        return Err(EvalError::ZeroN);
    }
    let (positives, negatives) = check_labels(pages)?;
    let mut counts = sweep_counts(pages, method);

    let (points, auc) = match kind {
        CurveKind::Roc => {
            let all = ConfusionCounts {
                tp: positives,
                fp: negatives,
                tn: 0,
                fn_: 0,
            };
            if counts[0].1 != all {
                counts.insert(0, (f64::NEG_INFINITY, all));
            }
            let points: Vec<CurvePoint> = counts
                .iter()
                .map(|(t, c)| CurvePoint {
                    threshold: *t,
                    x: c.fpr(),
                    y: c.tpr(),
                })
                .collect();
            // Trapezoid in integer units so exact areas stay exact.
            let twice_area: u64 = counts
                .windows(2)
                .map(|w| {
                    let (a, b) = (&w[0].1, &w[1].1);
                    (a.fp - b.fp) as u64 * (a.tp + b.tp) as u64
                })
                .sum();
            let auc = twice_area as f64 / (2 * positives * negatives) as f64;
            (points, auc)
        }
        CurveKind::PrecisionRecall => {
            let points: Vec<CurvePoint> = counts
                .iter()
                .map(|(t, c)| CurvePoint {
                    threshold: *t,
                    x: c.tpr(),
                    y: c.precision(),
                })
                .collect();
            let auc = points
                .windows(2)
                .map(|w| (w[0].x - w[1].x) * (w[0].y + w[1].y) / 2.0)
                .sum::<f64>()
                .clamp(0.0, 1.0);
            (points, auc)
        }
    };

    Ok(EvalCurve {
        kind,
        method,
        points,
        auc,
        balance_point: balance_point(pages, method).ok(),
    })
}

/// Threshold where sensitivity and specificity meet, linearly interpolated
/// between the two sweep points that bracket the first sign change of
/// `sensitivity - specificity`.
pub fn balance_point(pages: &[LabeledPage], method: Method) -> Result<BalancePoint, EvalError> {
    if method == Method::TopN(0) {
        return Err(EvalError::ZeroN);
    }
    let (positives, negatives) = check_labels(pages)?;
    let counts = sweep_counts(pages, method);
    // sign of sensitivity - specificity, exactly: tp/P - tn/N
    let diff = |c: &ConfusionCounts| c.tp as i64 * negatives as i64 - c.tn as i64 * positives as i64;

    let (t0, c0) = &counts[0];
    match diff(c0).cmp(&0) {
        Ordering::Equal => return Ok(at_point(*t0, c0)),
        Ordering::Less => {
            return Err(EvalError::NoCrossing(format!(
                "sensitivity {:.4} is already below specificity {:.4} at the lowest threshold",
                c0.tpr(),
                c0.specificity()
            )))
        }
        Ordering::Greater => {}
    }
    for w in counts.windows(2) {
        let ((ta, ca), (tb, cb)) = (&w[0], &w[1]);
        let (da, db) = (diff(ca), diff(cb));
        if db == 0 {
            return Ok(at_point(*tb, cb));
        }
        if db < 0 {
            let f = da as f64 / (da - db) as f64;
            let lerp = |a: f64, b: f64| a + f * (b - a);
            let sensitivity = lerp(ca.tpr(), cb.tpr());
            let specificity = lerp(ca.specificity(), cb.specificity());
            return Ok(BalancePoint {
                threshold: lerp(*ta, *tb),
                value: (sensitivity + specificity) / 2.0,
                sensitivity,
                specificity,
            });
        }
    }
    Err(EvalError::NoCrossing(
        "sensitivity stays above specificity over the whole sweep".into(),
    ))
}

fn at_point(t: f64, c: &ConfusionCounts) -> BalancePoint {
    BalancePoint {
        threshold: t,
        value: c.tpr(),
        sensitivity: c.tpr(),
        specificity: c.specificity(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedMethod {
    pub method: Method,
    pub auc: f64,
}

/// Mean rule and top-n for `n = 1..=max_images`, by descending ROC AUC. Ties
/// put top-n before mean and lower `n` first.
pub fn rank_methods(pages: &[LabeledPage], max_images: usize) -> Result<Vec<RankedMethod>, EvalError> {
    let mut ranked = all_methods(max_images)
        .into_iter()
        .map(|m| sweep(pages, m, CurveKind::Roc).map(|c| RankedMethod { method: m, auc: c.auc }))
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| {
        b.auc
            .total_cmp(&a.auc)
            .then_with(|| a.method.rank_key().cmp(&b.method.rank_key()))
    });
    Ok(ranked)
}

pub fn all_methods(max_images: usize) -> Vec<Method> {
    std::iter::once(Method::Mean)
        .chain((1..=max_images).map(Method::TopN))
        .collect()
}

/// Writes `method,kind,threshold,x,y` rows for every point of every curve.
pub fn write_curves_csv<W: Write>(curves: &[EvalCurve], mut w: W) -> io::Result<()> {
    writeln!(w, "method,kind,threshold,x,y")?;
    for c in curves {
        for p in &c.points {
            writeln!(w, "{},{},{},{},{}", c.method, c.kind.short_name(), p.threshold, p.x, p.y)?;
        }
    }
    Ok(())
}
