//! Page fetching, image-link discovery and the quota-bounded download pool.

mod fetch;
mod links;

use std::collections::{HashSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::imaging::{ImageRecord, RejectReason, Rejection};

pub use fetch::{FetchError, Fetcher, HttpFetcher, MAX_REDIRECTS};
pub use links::{extract_image_links, extract_suburls, ImageLink, SourceKind};

pub const DEFAULT_USER_AGENT: &str = concat!("pageclass/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlConfig {
    pub max_images: usize,
    pub per_request_timeout: Duration,
    pub total_budget: Duration,
    /// Also harvest same-host pages linked from the root. Sequential only.
    pub follow_suburls: bool,
    pub max_suburls: usize,
    pub parallelism: usize,
    /// `None` shuffles from OS entropy.
    pub shuffle_seed: Option<u64>,
    pub user_agent: String,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            max_images: 10,
            per_request_timeout: Duration::from_secs(10),
            total_budget: Duration::from_secs(60),
            follow_suburls: false,
            max_suburls: 20,
            parallelism: 8,
            shuffle_seed: None,
            user_agent: DEFAULT_USER_AGENT.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_images must be at least 1")]
    ZeroQuota,
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("sub-URL search requires sequential mode (parallelism = 1), got parallelism {0}")]
    SuburlsNeedSequential(usize),
}

impl CrawlConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_images == 0 {
            return Err(ConfigError::ZeroQuota);
        }
        if self.parallelism == 0 {
            return Err(ConfigError::ZeroParallelism);
        }
        if self.follow_suburls && self.parallelism > 1 {
            return Err(ConfigError::SuburlsNeedSequential(self.parallelism));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrawlStatus {
    /// The quota of valid images was reached.
    Complete,
    /// Links or budget ran out first.
    Partial,
    PageUnreachable,
}

/// Why discovered links failed to produce an image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionTally {
    pub inaccessible: usize,
    pub corrupt: usize,
    pub tiny: usize,
    pub oversize: usize,
    pub unsupported_format: usize,
}

impl RejectionTally {
    pub fn total(&self) -> usize {
        self.inaccessible + self.corrupt + self.tiny + self.oversize + self.unsupported_format
    }

    fn record(&mut self, reason: Option<RejectReason>) {
        match reason {
            None => self.inaccessible += 1,
            Some(RejectReason::Corrupt) => self.corrupt += 1,
            Some(RejectReason::Tiny) => self.tiny += 1,
            Some(RejectReason::Oversize) => self.oversize += 1,
            Some(RejectReason::UnsupportedFormat) => self.unsupported_format += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrawlOutcome {
    pub page_url: Url,
    /// At most `max_images`, in shuffled-link order.
    pub images: Vec<ImageRecord>,
    pub links_discovered: usize,
    pub links_attempted: usize,
    pub links_rejected: RejectionTally,
    pub elapsed: Duration,
    pub status: CrawlStatus,
}

/// Image validation hook; normally [`crate::imaging::validate`] with a policy.
pub type Validator<'a> = dyn Fn(&[u8], &ImageLink) -> Result<ImageRecord, Rejection> + Sync + 'a;

/// Fetches `page_url`, shuffles its image links and downloads them until
/// `config.max_images` images pass `validator`.
///
/// With `parallelism > 1` downloads run on a pool that never starts a link
/// more than `parallelism` positions past the oldest unfinished one and stops
/// handing out work once the quota is met. Results are kept in shuffled
/// order and surplus images from in-flight downloads are dropped, so the
/// returned images depend only on the seed and the content served.
pub fn crawl(
    page_url: &Url,
    config: &CrawlConfig,
    fetcher: &dyn Fetcher,
    validator: &Validator<'_>,
) -> Result<CrawlOutcome, ConfigError> {
    config.validate()?;
    let started = Instant::now();
    let deadline = started + config.total_budget;
    let mut rng = match config.shuffle_seed {
        Some(seed) => ChaCha8Rng::seed_from_u64(seed),
        None => ChaCha8Rng::from_entropy(),
    };

    let root = match fetcher.get(page_url, config.per_request_timeout.min(config.total_budget)) {
        Ok(body) => body,
        Err(e) => {
            log::debug!("root page {page_url} unreachable: {e}");
            return Ok(CrawlOutcome {
                page_url: page_url.clone(),
                images: Vec::new(),
                links_discovered: 0,
                links_attempted: 0,
                links_rejected: RejectionTally::default(),
                elapsed: started.elapsed(),
                status: CrawlStatus::PageUnreachable,
            });
        }
    };

    let mut links = extract_image_links(&root, page_url);
    links.shuffle(&mut rng);

    let (images, attempted, rejected, discovered) = if config.follow_suburls {
        let frontier = extract_suburls(&root, page_url, config.max_suburls);
        sequential_with_suburls(links, frontier, page_url, config, fetcher, validator, deadline, &mut rng)
    } else {
        let discovered = links.len();
        let (images, attempted, rejected) = pooled(&links, config, fetcher, validator, deadline);
        (images, attempted, rejected, discovered)
    };

    let status = if images.len() >= config.max_images {
        CrawlStatus::Complete
    } else {
        CrawlStatus::Partial
    };
    Ok(CrawlOutcome {
        page_url: page_url.clone(),
        images,
        links_discovered: discovered,
        links_attempted: attempted,
        links_rejected: rejected,
        elapsed: started.elapsed(),
        status,
    })
}

fn fetch_and_validate(
    link: &ImageLink,
    fetcher: &dyn Fetcher,
    validator: &Validator<'_>,
    config: &CrawlConfig,
    deadline: Instant,
) -> Result<ImageRecord, Option<RejectReason>> {
    let timeout = config
        .per_request_timeout
        .min(deadline.saturating_duration_since(Instant::now()));
    let body = fetcher.get(&link.url, timeout).map_err(|e| match e {
        FetchError::TooLarge(_) => Some(RejectReason::Oversize),
        e => {
            log::trace!("{}: {e}", link.url);
            None
        }
    })?;
    validator(&body, link).map_err(|r| {
        log::trace!("{}: rejected ({r})", link.url);
        Some(r.reason)
    })
}

struct PoolState {
    next: usize,
    lowest_pending: usize,
    done: Vec<bool>,
    results: Vec<Option<ImageRecord>>,
    valid: usize,
    attempted: usize,
    rejected: RejectionTally,
}

fn pooled(
    links: &[ImageLink],
    config: &CrawlConfig,
    fetcher: &dyn Fetcher,
    validator: &Validator<'_>,
    deadline: Instant,
) -> (Vec<ImageRecord>, usize, RejectionTally) {
    let quota = config.max_images;
    let window = config.parallelism;
    let state = Mutex::new(PoolState {
        next: 0,
        lowest_pending: 0,
        done: vec![false; links.len()],
        results: vec![None; links.len()],
        valid: 0,
        attempted: 0,
        rejected: RejectionTally::default(),
    });
    let wake = Condvar::new();

    let worker = || loop {
        let idx = {
            let mut st = state.lock().unwrap();
            loop {
                if st.valid >= quota || st.next >= links.len() || Instant::now() >= deadline {
                    return;
                }
                if st.next < st.lowest_pending + window {
                    let i = st.next;
                    st.next += 1;
                    st.attempted += 1;
                    break i;
                }
                st = wake.wait(st).unwrap();
            }
        };
        let result = fetch_and_validate(&links[idx], fetcher, validator, config, deadline);
        let mut st = state.lock().unwrap();
        match result {
            Ok(rec) => {
                st.valid += 1;
                st.results[idx] = Some(rec);
            }
            Err(reason) => st.rejected.record(reason),
        }
        st.done[idx] = true;
        while st.lowest_pending < st.done.len() && st.done[st.lowest_pending] {
            st.lowest_pending += 1;
        }
        drop(st);
        wake.notify_all();
    };

    let workers = window.min(links.len().max(1));
    std::thread::scope(|s| {
        for _ in 1..workers {
            s.spawn(worker);
        }
        worker();
    });

    let st = state.into_inner().unwrap();
    let images = st.results.into_iter().flatten().take(quota).collect();
    (images, st.attempted, st.rejected)
}

#[allow(clippy::too_many_arguments)]
fn sequential_with_suburls(
    mut queue_links: Vec<ImageLink>,
    frontier: Vec<Url>,
    page_url: &Url,
    config: &CrawlConfig,
    fetcher: &dyn Fetcher,
    validator: &Validator<'_>,
    deadline: Instant,
    rng: &mut ChaCha8Rng,
) -> (Vec<ImageRecord>, usize, RejectionTally, usize) {
    let mut seen_images: HashSet<String> = queue_links.iter().map(|l| l.url.to_string()).collect();
    let mut known_pages: HashSet<Url> = frontier.iter().cloned().collect();
    known_pages.insert(page_url.clone());
    let mut frontier: VecDeque<Url> = frontier.into();
    let mut queue: VecDeque<ImageLink> = queue_links.drain(..).collect();
    let mut discovered = queue.len();

    let mut images = Vec::new();
    let mut attempted = 0;
    let mut rejected = RejectionTally::default();

    while images.len() < config.max_images && Instant::now() < deadline {
        if let Some(link) = queue.pop_front() {
            attempted += 1;
            match fetch_and_validate(&link, fetcher, validator, config, deadline) {
                Ok(rec) => images.push(rec),
                Err(reason) => rejected.record(reason),
            }
            continue;
        }
        // Image links exhausted: open the next sub-page.
        let Some(sub) = frontier.pop_front() else {
            break;
        };
        let timeout = config
            .per_request_timeout
            .min(deadline.saturating_duration_since(Instant::now()));
        let body = match fetcher.get(&sub, timeout) {
            Ok(b) => b,
            Err(e) => {
                log::debug!("sub-page {sub} skipped: {e}");
                continue;
            }
        };
        let mut batch: Vec<ImageLink> = extract_image_links(&body, &sub)
            .into_iter()
            .filter(|l| seen_images.insert(l.url.to_string()))
            .collect();
        batch.shuffle(rng);
        discovered += batch.len();
        queue.extend(batch);

        let room = config.max_suburls.saturating_sub(known_pages.len() - 1);
        for next in extract_suburls(&body, &sub, config.max_suburls)
            .into_iter()
            .filter(|u| u.host_str() == page_url.host_str())
            .take(room)
        {
            if known_pages.len() - 1 >= config.max_suburls {
                break;
            }
            if known_pages.insert(next.clone()) {
                frontier.push_back(next);
            }
        }
    }
    (images, attempted, rejected, discovered)
}
