#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use pageclass::fixture::{FixtureServer, Route};
use pageclass::synth::{self, SiteCorpus};
use pageclass_cli::{cmd_train, RunConfig};
use tempfile::TempDir;

pub struct Trained {
    _dir: TempDir,
    pub model: PathBuf,
    pub oob: f64,
}

fn train(samples: &[synth::Sample], trees: usize) -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_manifest(samples, &dir.path().join("train")).unwrap();
    let model = dir.path().join("model.wibf");
    let config = RunConfig {
        model_path: Some(model.clone()),
        trees,
        ..RunConfig::default()
    };
    let summary = cmd_train(&manifest, &config).unwrap();
    Trained {
        _dir: dir,
        model,
        oob: summary.oob_accuracy.unwrap(),
    }
}

/// Target vs scenery model, shared by the tests of one binary.
pub fn clean_model() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| train(&synth::clean_training_set(100, 1), 50))
}

pub fn config(model: &Path) -> RunConfig {
    let mut c = RunConfig {
        model_path: Some(model.to_owned()),
        ..RunConfig::default()
    };
    c.crawl.shuffle_seed = Some(7);
    c
}

pub struct Sites {
    pub corpus: SiteCorpus,
    pub server: FixtureServer,
}

/// Synthetic sites plus an image-free page at `/empty.html`.
pub fn sites(n_pos: usize, n_neg: usize) -> Sites {
    let corpus = synth::site_corpus(n_pos, n_neg, 10, 5);
    let mut routes = corpus.routes();
    routes.insert("/empty.html".into(), Route::html("<html><body><p>no pictures</p></body></html>"));
    let server = FixtureServer::start(routes).unwrap();
    Sites { corpus, server }
}
