//! In-process HTTP server for hermetic crawler tests and demos.
//!
//! Routes are served from memory on an ephemeral localhost port. Every
//! request is logged in arrival order so tests can count how many downloads
//! a crawl actually started.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Response, Server};
use url::Url;

const WORKERS: usize = 16;

#[derive(Debug, Clone)]
pub struct Route {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
    /// Held before responding.
    pub delay: Duration,
}

impl Route {
    pub fn html(body: impl Into<String>) -> Self {
        Route::bytes("text/html; charset=utf-8", body.into().into_bytes())
    }

    pub fn png(body: Vec<u8>) -> Self {
        Route::bytes("image/png", body)
    }

    pub fn bytes(content_type: &str, body: Vec<u8>) -> Self {
        Route {
            status: 200,
            content_type: content_type.to_owned(),
            body,
            delay: Duration::ZERO,
        }
    }

    pub fn status(code: u16) -> Self {
        Route {
            status: code,
            ..Route::bytes("text/plain", Vec::new())
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub struct FixtureServer {
    base: Url,
    server: Arc<Server>,
    log: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl FixtureServer {
    /// Serves `routes`, keyed by absolute path (`/site1/index.html`).
    /// Unknown paths answer 404.
    pub fn start(routes: HashMap<String, Route>) -> io::Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("fixture server has no IP address"))?;
        let base = Url::parse(&format!("http://{addr}/")).expect("socket address forms a URL");
        let server = Arc::new(server);
        let routes = Arc::new(routes);
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));

        let workers = (0..WORKERS)
            .map(|_| {
                let (server, routes, log, stop) = (server.clone(), routes.clone(), log.clone(), stop.clone());
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        let req = match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(r)) => r,
                            Ok(None) => continue,
                            Err(_) => break,
                        };
                        let path = req.url().split(['?', '#']).next().unwrap_or("").to_owned();
                        log.lock().unwrap().push(path.clone());
                        let resp = match routes.get(&path) {
                            Some(route) => {
                                if !route.delay.is_zero() {
                                    std::thread::sleep(route.delay);
                                }
                                let ct = Header::from_bytes("Content-Type", route.content_type.as_bytes())
                                    .expect("valid header");
                                Response::from_data(route.body.clone())
                                    .with_status_code(route.status)
                                    .with_header(ct)
                            }
                            None => Response::from_data(b"not found".to_vec()).with_status_code(404),
                        };
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();

        Ok(FixtureServer {
            base,
            server,
            log,
            stop,
            workers,
        })
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    pub fn url(&self, path: &str) -> Url {
        self.base.join(path).expect("fixture path joins onto base URL")
    }

    /// Request paths in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    pub fn hits(&self, path: &str) -> usize {
        self.log.lock().unwrap().iter().filter(|p| *p == path).count()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
