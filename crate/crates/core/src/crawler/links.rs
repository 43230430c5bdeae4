//! Image and sub-page link discovery over tolerant HTML parsing.

use std::collections::HashSet;

use scraper::{ElementRef, Html};
use serde::{Deserialize, Serialize};
use url::Url;

/// Where in the markup an image link was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ImgSrc,
    SrcsetEntry,
    OgImage,
    LinkIcon,
    CssBackgroundInline,
    /// Read from disk rather than discovered on a page (training manifests).
    LocalFile,
}

/// An image URL together with the page it came from. Links found on pages
/// are absolute http(s); local training images carry `file:` URLs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageLink {
    pub url: Url,
    pub origin_page: Url,
    pub source_kind: SourceKind,
}

impl ImageLink {
    /// Builds a link, refusing anything that is not an absolute http(s) URL.
    pub fn new(url: Url, origin_page: Url, source_kind: SourceKind) -> Option<Self> {
        is_web_url(&url).then_some(ImageLink {
            url,
            origin_page,
            source_kind,
        })
    }
}

impl ImageLink {
    /// Link for an image file on disk; `None` for relative paths.
    pub fn local_file(path: &std::path::Path) -> Option<Self> {
        let url = Url::from_file_path(path).ok()?;
        Some(ImageLink {
            origin_page: url.clone(),
            url,
            source_kind: SourceKind::LocalFile,
        })
    }
}

fn is_web_url(url: &Url) -> bool {
    matches!(url.scheme(), "http" | "https") && url.has_host()
}

/// Returns the deduplicated image links of a document in document order.
///
/// Reads `img@src`, every `srcset` candidate (on `img` and `source`),
/// `og:image` meta tags, `link rel=icon` variants and `url(...)` references in
/// inline `style` attributes. Relative references resolve against `<base href>`
/// when present, otherwise against `base_url`. `data:` URIs and non-http
/// schemes are dropped. The first occurrence of a URL decides its kind.
///
/// Never fails: malformed markup yields whatever links the parser recovers.
pub fn extract_image_links(html: &[u8], base_url: &Url) -> Vec<ImageLink> {
    let text = String::from_utf8_lossy(html);
    let doc = Html::parse_document(&text);
    let base = document_base(&doc, base_url);

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |raw: &str, kind: SourceKind| {
        let Some(url) = resolve(&base, raw) else {
            return;
        };
        if seen.insert(url.as_str().to_owned()) {
            out.push(ImageLink {
                url,
                origin_page: base_url.clone(),
                source_kind: kind,
            });
        }
    };

    for el in doc.root_element().descendants().filter_map(ElementRef::wrap) {
        let v = el.value();
        match v.name() {
            "img" => {
                if let Some(src) = v.attr("src") {
                    push(src, SourceKind::ImgSrc);
                }
                if let Some(srcset) = v.attr("srcset") {
                    for cand in srcset_candidates(srcset) {
                        push(cand, SourceKind::SrcsetEntry);
                    }
                }
            }
            "source" => {
                if let Some(srcset) = v.attr("srcset") {
                    for cand in srcset_candidates(srcset) {
                        push(cand, SourceKind::SrcsetEntry);
                    }
                }
            }
            "meta" => {
                let key = v.attr("property").or_else(|| v.attr("name"));
                if key.is_some_and(is_og_image_key) {
                    if let Some(content) = v.attr("content") {
                        push(content, SourceKind::OgImage);
                    }
                }
            }
            "link" => {
                if v.attr("rel").is_some_and(is_icon_rel) {
                    if let Some(href) = v.attr("href") {
                        push(href, SourceKind::LinkIcon);
                    }
                }
            }
            _ => {}
        }
        if let Some(style) = v.attr("style") {
            for r in css_urls(style) {
                push(r, SourceKind::CssBackgroundInline);
            }
        }
    }
    out
}

/// Returns same-host anchor targets in document order, fragment stripped,
/// deduplicated and capped at `max`. The page itself is not included.
pub fn extract_suburls(html: &[u8], base_url: &Url, max: usize) -> Vec<Url> {
    let text = String::from_utf8_lossy(html);
    let doc = Html::parse_document(&text);
    let base = document_base(&doc, base_url);

    let mut own = base_url.clone();
    own.set_fragment(None);

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for el in doc.root_element().descendants().filter_map(ElementRef::wrap) {
        if out.len() >= max {
            break;
        }
        if el.value().name() != "a" {
            continue;
        }
        let Some(mut url) = el.value().attr("href").and_then(|h| resolve(&base, h)) else {
            continue;
        };
        url.set_fragment(None);
        if !same_host(&url, base_url) || url == own {
            continue;
        }
        if seen.insert(url.as_str().to_owned()) {
            out.push(url);
        }
    }
    out
}

fn same_host(a: &Url, b: &Url) -> bool {
    a.host_str() == b.host_str() && a.port_or_known_default() == b.port_or_known_default()
}

fn document_base(doc: &Html, page: &Url) -> Url {
    doc.root_element()
        .descendants()
        .filter_map(ElementRef::wrap)
        .find(|el| el.value().name() == "base" && el.value().attr("href").is_some())
        .and_then(|el| page.join(el.value().attr("href")?.trim()).ok())
        .filter(is_web_url)
        .unwrap_or_else(|| page.clone())
}

fn resolve(base: &Url, raw: &str) -> Option<Url> {
    let raw = raw.trim();
    let is_data = raw.as_bytes().get(..5).is_some_and(|p| p.eq_ignore_ascii_case(b"data:"));
    if raw.is_empty() || is_data {
        return None;
    }
    base.join(raw).ok().filter(is_web_url)
}

fn is_og_image_key(key: &str) -> bool {
    matches!(
        key.trim().to_ascii_lowercase().as_str(),
        "og:image" | "og:image:url" | "og:image:secure_url"
    )
}

fn is_icon_rel(rel: &str) -> bool {
    rel.split_ascii_whitespace().any(|tok| {
        let tok = tok.to_ascii_lowercase();
        tok == "icon" || tok.starts_with("apple-touch-icon")
    })
}

/// Splits a `srcset` value into its candidate URLs.
///
/// Candidates are `url [descriptor]` separated by commas; a URL may itself
/// contain commas, so the URL runs to the next whitespace and only trailing
/// commas are trimmed from it.
pub(crate) fn srcset_candidates(srcset: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = srcset;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_ascii_whitespace() || c == ',');
        if rest.is_empty() {
            break;
        }
        let end = rest.find(|c: char| c.is_ascii_whitespace()).unwrap_or(rest.len());
        let (token, tail) = rest.split_at(end);
        let url = token.trim_end_matches(',');
        if !url.is_empty() {
            out.push(url);
        }
        if token.ends_with(',') {
            rest = tail;
            continue;
        }
        // skip the descriptor up to the next comma
        rest = match tail.find(',') {
            Some(i) => &tail[i + 1..],
            None => "",
        };
    }
    out
}

/// Extracts the arguments of `url(...)` functions in an inline style.
pub(crate) fn css_urls(style: &str) -> Vec<&str> {
    let lower = style.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = lower[from..].find("url(") {
        let start = from + i + 4;
        let Some(len) = style[start..].find(')') else {
            break;
        };
        let arg = style[start..start + len]
            .trim()
            .trim_matches(|c| c == '"' || c == '\'')
            .trim();
        if !arg.is_empty() {
            out.push(arg);
        }
        from = start + len + 1;
    }
    out
}
