use std::io::Read;
use std::time::Duration;

use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("response body exceeds {0} bytes")]
    TooLarge(usize),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Minimal GET transport used by the crawler.
///
/// Implementations must be shareable across the fetch pool's threads.
pub trait Fetcher: Send + Sync {
    fn get(&self, url: &Url, timeout: Duration) -> Result<Vec<u8>, FetchError>;
}

impl<F: Fetcher + ?Sized> Fetcher for &F {
    fn get(&self, url: &Url, timeout: Duration) -> Result<Vec<u8>, FetchError> {
        (**self).get(url, timeout)
    }
}

/// Blocking HTTP client: configurable User-Agent, at most 5 redirects, no
/// cookie jar.
pub struct HttpFetcher {
    agent: ureq::Agent,
    body_limit: usize,
}

pub const MAX_REDIRECTS: u32 = 5;

impl HttpFetcher {
    pub fn new(user_agent: &str, body_limit: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .user_agent(user_agent)
            .max_redirects(MAX_REDIRECTS)
            .http_status_as_error(false)
            .build();
        HttpFetcher {
            agent: config.into(),
            body_limit,
        }
    }
}

impl Fetcher for HttpFetcher {
    fn get(&self, url: &Url, timeout: Duration) -> Result<Vec<u8>, FetchError> {
        let resp = self
            .agent
            .get(url.as_str())
            .config()
            .timeout_global(Some(timeout))
            .build()
            .call()
            .map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(FetchError::Status(status));
        }
        let mut body = Vec::new();
        let limit = self.body_limit as u64;
        resp.into_body()
            .into_reader()
            .take(limit + 1)
            .read_to_end(&mut body)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::TimedOut {
                    FetchError::Timeout
                } else {
                    FetchError::Transport(e.to_string())
                }
            })?;
        if body.len() as u64 > limit {
            return Err(FetchError::TooLarge(self.body_limit));
        }
        Ok(body)
    }
}

fn map_ureq(e: ureq::Error) -> FetchError {
    match e {
        ureq::Error::Timeout(_) => FetchError::Timeout,
        ureq::Error::StatusCode(s) => FetchError::Status(s),
        other => FetchError::Transport(other.to_string()),
    }
}
