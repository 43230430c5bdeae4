//! The four subcommands as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pageclass::crawler::{Fetcher, HttpFetcher, ImageLink};
use pageclass::evaluation::{all_methods, rank_methods, sweep, write_curves_csv, CurveKind, EvalCurve, LabeledPage, Method};
use pageclass::features::build_extractor;
use pageclass::forest::{self, Forest, Hyperparams, TrainingSet};
use pageclass::imaging::{validate, ImageRecord};
use pageclass::pipeline::{featurize, PageClassifier};
use pageclass::plot::{line_chart, Series};
use pageclass::PageResult;
use rayon::prelude::*;
use url::Url;

use crate::config::{OutputFormat, RunConfig};
use crate::report::{
    matrix_csv, BatchSummary, ClassifyReport, EvalSummary, MethodSummary, PageStatus, TrainSummary, SCHEMA_VERSION,
};
use crate::CliError;

/// Training stops if more than this share of manifest images fail to load.
pub const MAX_TRAIN_FAILURE_RATIO: f64 = 0.5;

fn classifier(config: &RunConfig) -> Result<PageClassifier, CliError> {
    let path = config.model_path.as_deref().ok_or(CliError::MissingModel)?;
    let forest = Forest::load(path).map_err(|e| CliError::Model(path.to_owned(), e.to_string()))?;
    let extractor = build_extractor(&config.extractor)?;
    Ok(PageClassifier::new(
        forest,
        extractor,
        &config.target_class,
        config.crawl.clone(),
        config.validation_policy(),
        config.threshold,
    )?)
}

fn classify_with(clf: &PageClassifier, url: &str, config: &RunConfig) -> ClassifyReport {
    let t = config.threshold.value();
    let parsed = match Url::parse(url) {
        Ok(u) => u,
        Err(e) => return ClassifyReport::failed(url, &config.target_class, t, format!("bad URL: {e}")),
    };
    match clf.classify(&parsed) {
        Ok(c) => ClassifyReport::from_classification(&c, &config.target_class, t, config.n),
        Err(e) => ClassifyReport::failed(url, &config.target_class, t, e.to_string()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_owned(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))
}

/// Non-empty lines with `#` comments stripped.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Runs the full pipeline on one page. Also writes the report to
/// `output_path` when set.
pub fn cmd_classify(url: &str, config: &RunConfig) -> Result<ClassifyReport, CliError> {
    let clf = classifier(config)?;
    let report = classify_with(&clf, url, config);
    if let Some(path) = &config.output_path {
        write_file(path, render_report(&report, config.output_format))?;
    }
    Ok(report)
}

pub fn render_report(report: &ClassifyReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        OutputFormat::Csv => report.to_csv(),
    }
}

#[derive(Debug)]
pub struct BatchOutput {
    pub reports: Vec<ClassifyReport>,
    pub summary: BatchSummary,
    pub matrix_csv: String,
}

fn classify_all(urls: &[String], config: &RunConfig) -> Result<Vec<ClassifyReport>, CliError> {
    if urls.is_empty() {
        return Ok(Vec::new());
    }
    let clf = classifier(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.batch_concurrency.max(1))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    // collect() keeps input order whatever the completion order
    Ok(pool.install(|| urls.par_iter().map(|u| classify_with(&clf, u, config)).collect()))
}

/// Classifies every URL in the list. With `output_path` set it names a
/// directory that receives `reports.jsonl`, `summary.json` and `matrix.csv`.
pub fn cmd_batch(url_list: &Path, config: &RunConfig) -> Result<BatchOutput, CliError> {
    let text = read_file(url_list)?;
    let urls: Vec<String> = content_lines(&text).map(|(_, l)| l.to_owned()).collect();
    let reports = classify_all(&urls, config)?;

    let mut summary = BatchSummary {
        schema_version: SCHEMA_VERSION,
        pages: reports.len(),
        ..BatchSummary::default()
    };
    for r in &reports {
        match r.status {
            PageStatus::Classified => summary.classified += 1,
            PageStatus::Unclassifiable => summary.unclassifiable += 1,
            PageStatus::Error => summary.errors += 1,
        }
        summary.positive_topn += usize::from(r.method2.is_some_and(|m| m.positive));
        summary.positive_mean += usize::from(r.method1.is_some_and(|m| m.positive));
    }
    let matrix = matrix_csv(&reports, config.crawl.max_images);

    if let Some(dir) = &config.output_path {
        let files = [dir.join("reports.jsonl"), dir.join("summary.json"), dir.join("matrix.csv")];
        summary.files = files.to_vec();
        let jsonl: String = reports
            .iter()
            .map(|r| serde_json::to_string(r).expect("report serializes") + "\n")
            .collect();
        write_file(&files[0], jsonl)?;
        write_file(&files[1], serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
        write_file(&files[2], &matrix)?;
    }
    Ok(BatchOutput {
        reports,
        summary,
        matrix_csv: matrix,
    })
}

fn load_training_image(source: &str, base: &Path, fetcher: &HttpFetcher, config: &RunConfig) -> Result<ImageRecord, String> {
    let policy = config.validation_policy();
    let (raw, link) = match Url::parse(source) {
        Ok(url) if matches!(url.scheme(), "http" | "https") => {
            let raw = fetcher.get(&url, config.crawl.per_request_timeout).map_err(|e| e.to_string())?;
            let link = ImageLink::new(url.clone(), url, pageclass::SourceKind::ImgSrc).expect("http URL");
            (raw, link)
        }
        _ => {
            let path = base.join(source);
            let path = path.canonicalize().map_err(|e| format!("{}: {e}", path.display()))?;
            let raw = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            (raw, ImageLink::local_file(&path).expect("canonical paths are absolute"))
        }
    };
    validate(&raw, &link, &policy).map_err(|r| r.to_string())
}

/// Trains a forest on the manifest and saves it to `model_path`.
pub fn cmd_train(manifest: &Path, config: &RunConfig) -> Result<TrainSummary, CliError> {
    let model_path = config.model_path.clone().ok_or(CliError::MissingModel)?;
    let text = read_file(manifest)?;
    let mut entries = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let (label, source) = line
            .split_once('\t')
            .ok_or_else(|| CliError::Input(format!("{}:{line_no}: expected label<TAB>path", manifest.display())))?;
        entries.push((label.trim().to_owned(), source.trim().to_owned()));
    }
    let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
    for (label, _) in &entries {
        *by_class.entry(label.as_str()).or_default() += 1;
    }
    if by_class.len() < 2 {
        return Err(CliError::Input(format!(
            "training needs at least 2 classes, manifest has {}",
            by_class.len()
        )));
    }

    let base = manifest.parent().unwrap_or(Path::new("."));
    let fetcher = HttpFetcher::new(&config.crawl.user_agent, config.validation_policy().max_bytes);
    let loaded: Vec<Result<ImageRecord, String>> = entries
        .par_iter()
        .map(|(_, src)| load_training_image(src, base, &fetcher, config))
        .collect();
    let mut records = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    let mut failed = 0;
    for ((label, src), r) in entries.iter().zip(loaded) {
        match r {
            Ok(rec) => {
                records.push(rec);
                labels.push(label.as_str());
                provenance.push(src.clone());
            }
            Err(e) => {
                log::warn!("skipping {src}: {e}");
                failed += 1;
            }
        }
    }
    if failed as f64 > MAX_TRAIN_FAILURE_RATIO * entries.len() as f64 {
        return Err(CliError::Input(format!(
            "{failed} of {} training images could not be loaded",
            entries.len()
        )));
    }

    let extractor = build_extractor(&config.extractor)?;
    let features = featurize(&records, extractor.as_ref())?;
    let data = TrainingSet::new(features, &labels, provenance)?;
    let hp = Hyperparams {
        n_trees: config.trees,
        ..Hyperparams::default()
    };
    let fit = forest::fit(&data, &hp, config.train_seed)?;
    fit.forest
        .save(&model_path)
        .map_err(|e| CliError::Model(model_path.clone(), e.to_string()))?;

    let classes = data.classes().to_vec();
    let class_counts = (0..classes.len())
        .map(|c| data.labels().iter().filter(|&&l| l == c).count())
        .collect();
    let summary = TrainSummary {
        schema_version: SCHEMA_VERSION,
        model_path,
        samples: data.len(),
        failed,
        classes,
        class_counts,
        dim: fit.forest.dim(),
        n_trees: fit.forest.trees().len(),
        seed: config.train_seed,
        oob_accuracy: fit.oob_accuracy,
    };
    if let Some(path) = &config.output_path {
        write_file(path, serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    }
    Ok(summary)
}

fn parse_label(raw: &str, target_class: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "positive" | "pos" => Some(true),
        "0" | "false" | "no" | "negative" | "neg" => Some(false),
        _ if raw.is_empty() => None,
        _ => Some(raw == target_class),
    }
}

#[derive(Debug)]
pub struct EvalOutput {
    pub summary: EvalSummary,
    pub curves: Vec<EvalCurve>,
    pub reports: Vec<ClassifyReport>,
}

/// Classifies every labeled page, sweeps each rule and ranks them. With
/// `output_path` set it names a directory that receives `curves.csv`,
/// `summary.json`, `roc.svg` and `pr.svg`.
pub fn cmd_evaluate(labeled_list: &Path, config: &RunConfig) -> Result<EvalOutput, CliError> {
    let text = read_file(labeled_list)?;
    let mut urls = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let parsed = line
            .split_once('\t')
            .and_then(|(l, u)| Some((parse_label(l.trim(), &config.target_class)?, u.trim())));
        let (label, url) = parsed
            .ok_or_else(|| CliError::Input(format!("{}:{line_no}: expected label<TAB>url", labeled_list.display())))?;
        labels.push(label);
        urls.push(url.to_owned());
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CliError::Input(format!(
            "labels must include both classes (got {positives} positive, {negatives} negative)"
        )));
    }

    let reports = classify_all(&urls, config)?;
    let max_images = config.crawl.max_images;
    let pages: Vec<LabeledPage> = reports
        .iter()
        .zip(&labels)
        .filter_map(|(r, &label)| {
            let page_result = PageResult::new(&r.page_url, r.probabilities(), config.threshold, max_images).ok()?;
            Some(LabeledPage { page_result, label })
        })
        .collect();
    let skipped = reports.len() - pages.len();
    if skipped > 0 {
        log::warn!("{skipped} page(s) yielded no valid image and are left out of the sweep");
    }

    let ranked = rank_methods(&pages, max_images)?;
    let mut curves = Vec::new();
    let mut methods = Vec::new();
    for m in all_methods(max_images) {
        let roc = sweep(&pages, m, CurveKind::Roc)?;
        let pr = sweep(&pages, m, CurveKind::PrecisionRecall)?;
        methods.push(MethodSummary {
            method: m,
            roc_auc: roc.auc,
            pr_auc: pr.auc,
            balance_point: roc.balance_point,
        });
        curves.push(pr);
        curves.push(roc);
    }
    let mut summary = EvalSummary {
        schema_version: SCHEMA_VERSION,
        pages: reports.len(),
        pages_evaluated: pages.len(),
        positives: pages.iter().filter(|p| p.label).count(),
        negatives: pages.iter().filter(|p| !p.label).count(),
        ranking: ranked.iter().map(|r| r.method).collect(),
        methods,
        files: Vec::new(),
    };

    if let Some(dir) = &config.output_path {
        let files: Vec<PathBuf> = ["curves.csv", "summary.json", "roc.svg", "pr.svg"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        summary.files = files.clone();
        let mut csv = Vec::new();
        write_curves_csv(&curves, &mut csv).expect("writing to memory");
        write_file(&files[0], csv)?;
        write_file(&files[1], serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
        write_file(&files[2], chart(&curves, CurveKind::Roc, max_images))?;
        write_file(&files[3], chart(&curves, CurveKind::PrecisionRecall, max_images))?;
    }
    Ok(EvalOutput {
        summary,
        curves,
        reports,
    })
}

/// Mean and the first few top-n rules; more lines would be unreadable.
fn chart(curves: &[EvalCurve], kind: CurveKind, max_images: usize) -> String {
    let shown: Vec<Method> = all_methods(max_images.min(3));
    let points: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .filter(|c| c.kind == kind && shown.contains(&c.method))
        .map(|c| {
            (
                format!("{} (AUC {:.3})", c.method, c.auc),
                c.points.iter().map(|p| (p.x, p.y)).collect(),
            )
        })
        .collect();
    let series: Vec<Series<'_>> = points
        .iter()
        .map(|(label, pts)| Series {
            label: label.clone(),
            points: pts,
        })
        .collect();
    match kind {
        CurveKind::Roc => line_chart("ROC", "false positive rate", "true positive rate", &series),
        CurveKind::PrecisionRecall => line_chart("Precision-recall", "recall", "precision", &series),
    }
}
