mod common;

use std::fs;
use std::process::Command;

use pageclass_cli::report::{ClassifyReport, PageStatus};
use pageclass_cli::{classify_exit_code, cmd_batch, cmd_classify, cmd_evaluate, cmd_train, RunConfig, EXIT_ERROR, EXIT_OK, EXIT_UNCLASSIFIABLE};
use pageclass::evaluation::Method;
use pageclass::pipeline::Timings;
use pageclass::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pageclass"))
}

fn without_timings(mut r: ClassifyReport) -> ClassifyReport {
    r.timings = Timings::default();
    r
}

#[test]
fn weapon_like_page_is_positive() {
    let m = common::clean_model();
    assert!(m.oob >= 0.9, "oob {}", m.oob);
    // the clean model never saw clutter, so compare against a scenery page
    let s = common::sites(1, 2);
    let cfg = common::config(&m.model);
    let pos = cmd_classify(s.server.url(&s.corpus.sites[0].path).as_str(), &cfg).unwrap();
    assert_eq!(pos.status, PageStatus::Classified);
    assert!(pos.method2.unwrap().positive);
    assert_eq!(classify_exit_code(&pos), EXIT_OK);
    assert_eq!(pos.images.len(), 10);

    let neg = cmd_classify(s.server.url(&s.corpus.sites[2].path).as_str(), &cfg).unwrap();
    assert!(!neg.method2.unwrap().positive);
}

#[test]
fn page_without_images_is_unclassifiable() {
    let m = common::clean_model();
    let s = common::sites(1, 0);
    let r = cmd_classify(s.server.url("/empty.html").as_str(), &common::config(&m.model)).unwrap();
    assert_eq!(r.status, PageStatus::Unclassifiable);
    assert_eq!(classify_exit_code(&r), EXIT_UNCLASSIFIABLE);
    assert!(r.method1.is_none() && r.method2.is_none());
}

#[test]
fn exit_codes_from_the_binary() {
    let m = common::clean_model();
    let s = common::sites(1, 0);
    let model = m.model.to_str().unwrap();
    let run = |url: &str, model: &str| {
        bin()
            .args(["classify", url, "--model", model, "--seed", "1"])
            .output()
            .unwrap()
    };
    let ok = run(s.server.url(&s.corpus.sites[0].path).as_str(), model);
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["status"], "classified");

    let empty = run(s.server.url("/empty.html").as_str(), model);
    assert_eq!(empty.status.code(), Some(EXIT_UNCLASSIFIABLE));

    let unreachable = run(s.server.url("/missing.html").as_str(), model);
    assert_eq!(unreachable.status.code(), Some(EXIT_UNCLASSIFIABLE));
    let report: serde_json::Value = serde_json::from_slice(&unreachable.stdout).unwrap();
    assert_eq!(report["crawl_status"], "page_unreachable");

    let bad_model = run(s.server.url(&s.corpus.sites[0].path).as_str(), "/nonexistent/model.wibf");
    assert_eq!(bad_model.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&bad_model.stderr).contains("/nonexistent/model.wibf"));

    let bad_flag = bin().args(["classify", "http://x.test/", "--threshold", "1.5"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(EXIT_ERROR));
}

#[test]
fn missing_model_names_the_path() {
    let cfg = RunConfig {
        model_path: Some("/nonexistent/forest.wibf".into()),
        ..RunConfig::default()
    };
    let err = cmd_classify("http://127.0.0.1:9/", &cfg).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/forest.wibf"), "{err}");
}

#[test]
fn batch_counts_and_order() {
    let m = common::clean_model();
    let s = common::sites(2, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut list = String::from("# fixture pages\n");
    for site in &s.corpus.sites {
        list.push_str(&format!("{}\n", s.server.url(&site.path)));
    }
    list.push_str(&format!("{}  # gone\n", s.server.url("/gone.html")));
    let list_path = dir.path().join("urls.txt");
    fs::write(&list_path, &list).unwrap();

    let mut cfg = common::config(&m.model);
    cfg.output_path = Some(dir.path().join("out"));
    let a = cmd_batch(&list_path, &cfg).unwrap();
    assert_eq!(a.summary.pages, 5);
    assert_eq!((a.summary.classified, a.summary.unclassifiable, a.summary.errors), (4, 1, 0));
    // sites 0, 1 positive; 2 clutter (unseen by the clean model); 3 scenery
    assert!(a.reports[0].method2.unwrap().positive && a.reports[1].method2.unwrap().positive);
    assert!(!a.reports[3].method2.unwrap().positive);
    let positives = a.reports.iter().filter(|r| r.method2.is_some_and(|m| m.positive)).count();
    assert_eq!(a.summary.positive_topn, positives);
    let urls: Vec<&str> = a.reports.iter().map(|r| r.page_url.as_str()).collect();
    let expected: Vec<String> = list.lines().skip(1).map(|l| l.split('#').next().unwrap().trim().to_owned()).collect();
    assert_eq!(urls, expected);
    for f in &a.summary.files {
        assert!(f.exists(), "{}", f.display());
    }
    let matrix = fs::read_to_string(dir.path().join("out/matrix.csv")).unwrap();
    assert_eq!(matrix, a.matrix_csv);
    assert!(matrix.starts_with("page_url,status,p1,p2,p3,p4,p5,p6,p7,p8,p9,p10,mean\n"));
    assert_eq!(matrix.lines().count(), 6);

    cfg.output_path = None;
    let b = cmd_batch(&list_path, &cfg).unwrap();
    assert_eq!(a.matrix_csv, b.matrix_csv);
    let strip = |v: Vec<ClassifyReport>| v.into_iter().map(without_timings).collect::<Vec<_>>();
    assert_eq!(strip(a.reports), strip(b.reports));
}

#[test]
fn empty_batch() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("urls.txt");
    fs::write(&list, "# nothing yet\n\n").unwrap();
    let out = bin()
        .args(["batch", list.to_str().unwrap(), "--model", "/unused", "--format", "csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
    assert!(cmd_batch(&dir.path().join("missing.txt"), &RunConfig::default()).is_err());
}

#[test]
fn train_rejects_single_class_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let one: Vec<_> = synth::clean_training_set(5, 3).into_iter().filter(|s| s.label == synth::TARGET_LABEL).collect();
    let manifest = synth::write_manifest(&one, &dir.path().join("one")).unwrap();
    let cfg = RunConfig {
        model_path: Some(dir.path().join("m.wibf")),
        trees: 10,
        ..RunConfig::default()
    };
    let err = cmd_train(&manifest, &cfg).unwrap_err();
    assert!(err.to_string().contains("1"), "{err}");

    let out = bin()
        .args(["train", manifest.to_str().unwrap(), "--model", dir.path().join("x.wibf").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&out.stderr).contains("has 1"));

    let both = synth::clean_training_set(15, 4);
    let manifest = synth::write_manifest(&both, &dir.path().join("both")).unwrap();
    cmd_train(&manifest, &cfg).unwrap();
    let first = fs::read(dir.path().join("m.wibf")).unwrap();
    cmd_train(&manifest, &cfg).unwrap();
    assert_eq!(first, fs::read(dir.path().join("m.wibf")).unwrap());
}

#[test]
fn train_tolerates_a_few_unreadable_images() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth::clean_training_set(10, 8);
    let manifest = synth::write_manifest(&samples, dir.path()).unwrap();
    let mut text = fs::read_to_string(&manifest).unwrap();
    text.push_str("weapon\timages/missing.png\nother\timages/also-missing.png\n");
    fs::write(&manifest, &text).unwrap();
    let cfg = RunConfig {
        model_path: Some(dir.path().join("m.wibf")),
        trees: 10,
        ..RunConfig::default()
    };
    let s = cmd_train(&manifest, &cfg).unwrap();
    assert_eq!((s.samples, s.failed), (20, 2));

    for i in 0..30 {
        text.push_str(&format!("other\tnope/{i}.png\n"));
    }
    fs::write(&manifest, &text).unwrap();
    assert!(cmd_train(&manifest, &cfg).unwrap_err().to_string().contains("could not be loaded"));
}

#[test]
fn evaluate_writes_requested_files() {
    let m = common::clean_model();
    let s = common::sites(3, 3);
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("labeled.tsv");
    fs::write(&list, s.corpus.labeled_list(s.server.base_url())).unwrap();
    let mut cfg = common::config(&m.model);
    cfg.output_path = Some(dir.path().join("eval"));
    let out = cmd_evaluate(&list, &cfg).unwrap();
    let names: Vec<String> = out.summary.files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["curves.csv", "summary.json", "roc.svg", "pr.svg"]);
    for f in &out.summary.files {
        assert!(f.starts_with(dir.path().join("eval")) && f.exists());
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.summary.files[1]).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(out.summary.ranking.len(), 11);
    assert_eq!(out.summary.ranking[0], Method::TopN(1));
    let csv = fs::read_to_string(&out.summary.files[0]).unwrap();
    assert!(csv.starts_with("method,kind,threshold,x,y\n"));
    assert!(csv.contains("\ntop1,roc,"));
}

#[test]
fn evaluate_rejects_single_class_labels() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("labeled.tsv");
    fs::write(&list, "1\thttp://a.test/\nweapon\thttp://b.test/\n").unwrap();
    let err = cmd_evaluate(&list, &RunConfig::default()).unwrap_err();
    assert!(err.to_string().contains("both classes"), "{err}");
    let out = bin().args(["evaluate", list.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
}

#[test]
fn reports_validate_against_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/classify_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let m = common::clean_model();
    let s = common::sites(1, 1);
    let cfg = common::config(&m.model);
    let mut reports = Vec::new();
    for path in [s.corpus.sites[0].path.as_str(), s.corpus.sites[1].path.as_str(), "/empty.html", "/missing"] {
        reports.push(cmd_classify(s.server.url(path).as_str(), &cfg).unwrap());
    }
    reports.push(cmd_classify("not a url", &cfg).unwrap());
    assert_eq!(reports[4].status, PageStatus::Error);
    for r in &reports {
        let v = serde_json::to_value(r).unwrap();
        let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", r.page_url);
        if let Some(m1) = r.method1 {
            let probs = r.probabilities();
            assert_eq!(m1.mean, pageclass::aggregation::method1_mean(&probs, cfg.threshold).unwrap().mean);
        }
    }
    let mut broken = serde_json::to_value(&reports[0]).unwrap();
    broken["status"] = "maybe".into();
    assert!(!validator.is_valid(&broken));
}

#[test]
fn csv_report_format() {
    let m = common::clean_model();
    let s = common::sites(1, 0);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config(&m.model);
    cfg.output_format = pageclass_cli::OutputFormat::Csv;
    cfg.output_path = Some(dir.path().join("r.csv"));
    let r = cmd_classify(s.server.url(&s.corpus.sites[0].path).as_str(), &cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + r.images.len());
    assert!(text.starts_with("page_url,status,link,probability\n"));
}
