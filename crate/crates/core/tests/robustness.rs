use pageclass::crawler::{extract_image_links, extract_suburls, ImageLink, SourceKind};
use pageclass::forest::{self, Forest, Hyperparams, ModelFileError, TrainingSet};
use pageclass::imaging::{validate, ValidationPolicy};
use pageclass::synth::{render_png, Family};
use pageclass::FeatureMatrix;
use proptest::prelude::*;
use url::Url;

const PAGE: &str = r#"<html><head><meta property="og:image" content="/og.png"><link rel="icon" href="f.ico"></head>
<body><img src="a.png" srcset="b.png 2x"><div style="background-image: url(c.jpg)"></div><a href="/next">n</a></body></html>"#;

fn link() -> ImageLink {
    let u = Url::parse("http://fuzz.test/i.png").unwrap();
    ImageLink::new(u.clone(), u, SourceKind::ImgSrc).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn link_extraction_survives_random_bytes(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        let base = Url::parse("http://fuzz.test/p.html").unwrap();
        let links = extract_image_links(&bytes, &base);
        prop_assert!(links.iter().all(|l| matches!(l.url.scheme(), "http" | "https")));
        extract_suburls(&bytes, &base, 5);
    }

    #[test]
    fn link_extraction_survives_truncated_html(cut in 0..PAGE.len()) {
        let base = Url::parse("http://fuzz.test/p.html").unwrap();
        extract_image_links(&PAGE.as_bytes()[..cut], &base);
    }

    #[test]
    fn validator_explains_every_rejection(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        if let Err(r) = validate(&bytes, &link(), &ValidationPolicy::default()) {
            prop_assert!(!r.detail.is_empty());
        }
    }

    #[test]
    fn validator_survives_truncated_png(cut in 0usize..2000, flip in 0usize..2000) {
        let png = render_png(Family::Target, 5, 70);
        let mut bytes = png[..cut.min(png.len())].to_vec();
        if let Some(b) = bytes.get_mut(flip) {
            *b ^= 0x5a;
        }
        if let Err(r) = validate(&bytes, &link(), &ValidationPolicy::default()) {
            prop_assert!(!r.detail.is_empty());
        }
    }
}

fn small_forest() -> Forest {
    let cols: Vec<[f64; 2]> = (0..30).map(|i| [i as f64, (i * 7 % 5) as f64]).collect();
    let labels: Vec<&str> = (0..30).map(|i| if i < 15 { "a" } else { "b" }).collect();
    let data = TrainingSet::new(FeatureMatrix::from_columns(2, &cols), &labels, Vec::new()).unwrap();
    forest::train(&data, &Hyperparams { n_trees: 5, ..Hyperparams::default() }, 1).unwrap()
}

#[test]
fn saved_forest_predicts_identically() {
    let f = small_forest();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wibf");
    f.save(&path).unwrap();
    let g = Forest::load(&path).unwrap();
    for i in 0..50 {
        let x = [i as f64 * 0.7 - 3.0, (i % 6) as f64];
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(f.predict_proba(&x).unwrap()), bits(g.predict_proba(&x).unwrap()));
    }
    assert_eq!(f.to_bytes(), g.to_bytes());
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(Forest::load("/nonexistent/f.wibf".as_ref()), Err(ModelFileError::Io(_))));
}
