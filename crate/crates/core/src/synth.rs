//! Synthetic image families, training manifests and fixture sites.
//!
//! Three families with distinct color statistics:
//!
//! * `Target`: red-dominant diagonal stripes, the positive class.
//! * `Scenery`: blue sky over green ground, clearly negative.
//! * `Clutter`: gray/brown blotches that appear under both labels in the
//!   noisy training set, so the forest scores them near chance.
//!
//! A positive site carries one to three target images among scenery; a
//! negative site is either clutter-heavy or pure scenery. Averaging over a
//! page then drowns the few target images, while the single best image
//! still stands out.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Cursor};
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use url::Url;

use crate::fixture::Route;

pub const DEFAULT_SIDE: u32 = 96;
pub const TARGET_LABEL: &str = "weapon";
pub const OTHER_LABEL: &str = "other";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Target,
    Scenery,
    Clutter,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Target => "target",
            Family::Scenery => "scenery",
            Family::Clutter => "clutter",
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, v: i32, amp: i32) -> u8 {
    (v + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8
}

/// Renders one `side x side` RGB raster of `family`.
pub fn render(family: Family, seed: u64, side: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(side, side);
    match family {
        Family::Target => {
            let base = [rng.gen_range(170..240), rng.gen_range(20..70), rng.gen_range(20..70)];
            let period = rng.gen_range(6..14);
            let phase = rng.gen_range(0..period);
            for (x, y, px) in img.enumerate_pixels_mut() {
                let dark = ((x + y + phase) / (period / 2).max(1)) % 2 == 0;
                let k = if dark { 40 } else { 0 };
                px.0 = [
                    jitter(&mut rng, base[0] - k, 12),
                    jitter(&mut rng, base[1], 10),
                    jitter(&mut rng, base[2], 10),
                ];
            }
        }
        Family::Scenery => {
            let horizon = rng.gen_range(side * 2 / 5..side * 3 / 5);
            let sky = [rng.gen_range(80..140), rng.gen_range(150..200), rng.gen_range(200..250)];
            let ground = [rng.gen_range(30..80), rng.gen_range(120..180), rng.gen_range(30..80)];
            for (_, y, px) in img.enumerate_pixels_mut() {
                let c = if y < horizon { sky } else { ground };
                px.0 = [jitter(&mut rng, c[0], 10), jitter(&mut rng, c[1], 10), jitter(&mut rng, c[2], 10)];
            }
        }
        Family::Clutter => {
            let block = rng.gen_range(8..20);
            let cells = side.div_ceil(block) as usize;
            let tones: Vec<[i32; 3]> = (0..cells * cells)
                .map(|_| {
                    let g = rng.gen_range(90..160);
                    let brown = rng.gen_range(0..30);
                    [g + brown, g, g - brown]
                })
                .collect();
            for (x, y, px) in img.enumerate_pixels_mut() {
                let c = tones[(y / block) as usize * cells + (x / block) as usize];
                px.0 = [jitter(&mut rng, c[0], 15), jitter(&mut rng, c[1], 15), jitter(&mut rng, c[2], 15)];
            }
        }
    }
    img
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn render_png(family: Family, seed: u64, side: u32) -> Vec<u8> {
    encode_png(&render(family, seed, side))
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub label: String,
    pub family: Family,
    pub png: Vec<u8>,
}

fn samples(spec: &[(&str, Family, usize)], seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Sample> = spec
        .iter()
        .flat_map(|&(label, family, count)| std::iter::repeat_n((label, family), count))
        .map(|(label, family)| Sample {
            label: label.to_owned(),
            family,
            png: render_png(family, rng.gen(), DEFAULT_SIDE),
        })
        .collect();
    out.shuffle(&mut rng);
    out
}

/// Target vs scenery, `per_class` images each.
pub fn clean_training_set(per_class: usize, seed: u64) -> Vec<Sample> {
    samples(
        &[(TARGET_LABEL, Family::Target, per_class), (OTHER_LABEL, Family::Scenery, per_class)],
        seed,
    )
}

/// 200 images: 70 target and 30 clutter labeled `weapon`, 70 scenery and 30
/// clutter labeled `other`.
pub fn noisy_training_set(seed: u64) -> Vec<Sample> {
    samples(
        &[
            (TARGET_LABEL, Family::Target, 70),
            (TARGET_LABEL, Family::Clutter, 30),
            (OTHER_LABEL, Family::Scenery, 70),
            (OTHER_LABEL, Family::Clutter, 30),
        ],
        seed,
    )
}

/// Writes `images/NNNN.png` and a `manifest.tsv` of `label<TAB>path` lines
/// (paths relative to `dir`). Returns the manifest path.
pub fn write_manifest(samples: &[Sample], dir: &Path) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:04}.png");
        std::fs::write(dir.join(&rel), &s.png)?;
        let _ = writeln!(manifest, "{}\t{rel}", s.label);
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct SiteImage {
    pub path: String,
    pub family: Family,
    pub png: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Site {
    /// Path of the page, e.g. `/site03/index.html`.
    pub path: String,
    pub label: bool,
    pub html: String,
    pub images: Vec<SiteImage>,
}

#[derive(Debug, Clone, Default)]
pub struct SiteCorpus {
    pub sites: Vec<Site>,
}

/// Builds `n_pos` positive and `n_neg` negative sites with `per_page` images
/// each plus one tiny logo that validation rejects.
pub fn site_corpus(n_pos: usize, n_neg: usize, per_page: usize, seed: u64) -> SiteCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sites = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let label = i < n_pos;
        let mut families = Vec::with_capacity(per_page);
        if label {
            let k = rng.gen_range(1..=3).min(per_page);
            families.extend(std::iter::repeat_n(Family::Target, k));
        } else if (i - n_pos) % 2 == 0 {
            let k = rng.gen_range(per_page * 3 / 5..=per_page);
            families.extend(std::iter::repeat_n(Family::Clutter, k));
        }
        families.resize(per_page, Family::Scenery);
        families.shuffle(&mut rng);

        let dir = format!("/site{i:02}");
        let images: Vec<SiteImage> = families
            .into_iter()
            .enumerate()
            .map(|(j, family)| SiteImage {
                path: format!("{dir}/img{j:02}.png"),
                family,
                png: render_png(family, rng.gen(), DEFAULT_SIDE),
            })
            .collect();
        let mut html = format!("<!doctype html>\n<html><head><title>site {i}</title>");
        html.push_str("<link rel=\"icon\" href=\"logo.png\"></head>\n<body>\n");
        for img in &images {
            let name = img.path.rsplit('/').next().unwrap();
            let _ = writeln!(html, "<div class=\"item\"><img src=\"{name}\" alt=\"\"></div>");
        }
        html.push_str("</body></html>\n");
        sites.push(Site {
            path: format!("{dir}/index.html"),
            label,
            html,
            images,
        });
    }
    SiteCorpus { sites }
}

impl SiteCorpus {
    pub fn routes(&self) -> HashMap<String, Route> {
        let logo = encode_png(&RgbImage::from_pixel(16, 16, image::Rgb([20, 20, 20])));
        let mut routes = HashMap::new();
        for site in &self.sites {
            routes.insert(site.path.clone(), Route::html(site.html.clone()));
            let dir = site.path.rsplit_once('/').map_or("", |(d, _)| d);
            routes.insert(format!("{dir}/logo.png"), Route::png(logo.clone()));
            for img in &site.images {
                routes.insert(img.path.clone(), Route::png(img.png.clone()));
            }
        }
        routes
    }

    /// `label<TAB>url` lines with labels `1` and `0`.
    pub fn labeled_list(&self, base: &Url) -> String {
        self.sites
            .iter()
            .map(|s| format!("{}\t{}\n", u8::from(s.label), base.join(&s.path).expect("site path joins")))
            .collect()
    }

    /// One URL per line.
    pub fn url_list(&self, base: &Url) -> String {
        self.sites
            .iter()
            .map(|s| format!("{}\n", base.join(&s.path).expect("site path joins")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_rgb(img: &RgbImage) -> [f64; 3] {
        let mut s = [0.0; 3];
        for px in img.pixels() {
            for c in 0..3 {
                s[c] += px.0[c] as f64;
            }
        }
        s.map(|v| v / (img.width() * img.height()) as f64)
    }

    #[test]
    fn families_have_distinct_color_statistics() {
        for seed in 0..5 {
            let [r, g, b] = mean_rgb(&render(Family::Target, seed, 64));
            assert!(r > g + 60.0 && r > b + 60.0);
            let [r, g, b] = mean_rgb(&render(Family::Scenery, seed, 64));
            assert!(g > r + 30.0 && b > r);
            let [r, g, b] = mean_rgb(&render(Family::Clutter, seed, 64));
            assert!((r - b).abs() < 70.0 && g > 70.0);
        }
    }

    #[test]
    fn rendering_is_seeded() {
        assert_eq!(render_png(Family::Clutter, 9, 32), render_png(Family::Clutter, 9, 32));
        assert_ne!(render_png(Family::Clutter, 9, 32), render_png(Family::Clutter, 10, 32));
    }

    #[test]
    fn noisy_set_composition() {
        let s = noisy_training_set(1);
        assert_eq!(s.len(), 200);
        let count = |l: &str, f: Family| s.iter().filter(|x| x.label == l && x.family == f).count();
        assert_eq!(count(TARGET_LABEL, Family::Target), 70);
        assert_eq!(count(OTHER_LABEL, Family::Clutter), 30);
    }

    #[test]
    fn site_layout() {
        let c = site_corpus(4, 4, 10, 3);
        assert_eq!(c.sites.len(), 8);
        for s in &c.sites {
            assert_eq!(s.images.len(), 10);
            let targets = s.images.iter().filter(|i| i.family == Family::Target).count();
            if s.label {
                assert!((1..=3).contains(&targets));
            } else {
                assert_eq!(targets, 0);
            }
        }
        let routes = c.routes();
        assert_eq!(routes.len(), 8 * 12);
        let base = Url::parse("http://h/").unwrap();
        assert!(c.labeled_list(&base).starts_with("1\thttp://h/site00/index.html\n"));
    }
}
