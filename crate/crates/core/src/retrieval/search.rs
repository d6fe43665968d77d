//! Search-engine backends: a live REST client and an offline fixture store.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use url::Url;

use super::html::clean_html;
use super::{Backend, RetrievalConfig};
use crate::error::{Error, Result};
use crate::http::{self, Limiter, RetryPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    HttpError,
    ParseError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub raw_html: String,
    pub cleaned_text: String,
    pub fetch_status: FetchStatus,
}

/// A page returned by a backend before cleaning. `html` is `None` when the
/// page could not be fetched.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPage {
    pub url: String,
    pub html: Option<String>,
}

pub trait SearchBackend: Send + Sync {
    /// Runs one search and returns at most `k` pages in engine order.
    fn search(&self, query: &str, k: usize, site: Option<&str>) -> Result<Vec<RawPage>>;

    /// Searches issued so far.
    fn calls(&self) -> usize;
}

/// Issues the verbatim `query` and returns up to `config.k` cleaned results
/// (or the results ranked inside `config.rank_window`). A page that fails to
/// fetch or yields no text is kept with a non-`Ok` status instead of failing
/// the whole call.
pub fn search_web(
    backend: &dyn SearchBackend,
    config: &RetrievalConfig,
    query: &str,
) -> Result<Vec<SearchResult>> {
    if query.trim().is_empty() {
        return Err(Error::InvalidQuery(query.to_string()));
    }
    let depth = config.fetch_depth();
    let pages = backend.search(query, depth, config.site_restrict.as_deref())?;
    Ok(pages
        .into_iter()
        .take(depth)
        .enumerate()
        .filter(|(i, _)| config.rank_window.is_none_or(|w| w.contains(i + 1)))
        .map(|(_, page)| to_result(page))
        .collect())
}

fn to_result(page: RawPage) -> SearchResult {
    match page.html {
        None => SearchResult {
            url: page.url,
            raw_html: String::new(),
            cleaned_text: String::new(),
            fetch_status: FetchStatus::HttpError,
        },
        Some(html) => {
            let cleaned = clean_html(&html);
            // Pages with no readable text at all are treated as unparseable.
            let status = if cleaned.chars().any(char::is_alphanumeric) {
                FetchStatus::Ok
            } else {
                FetchStatus::ParseError
            };
            SearchResult {
                url: page.url,
                raw_html: html,
                cleaned_text: cleaned,
                fetch_status: status,
            }
        }
    }
}

/// Builds the backend named by `config.backend`. Fails for `local_index`.
pub fn backend_from_config(config: &RetrievalConfig) -> Result<Box<dyn SearchBackend>> {
    config.validate()?;
    match config.backend {
        Backend::Fixture => {
            let dir = config
                .fixture_dir
                .clone()
                .ok_or_else(|| Error::InvalidConfig("fixture backend needs fixture_dir".into()))?;
            Ok(Box::new(FixtureSearch::new(dir)))
        }
        Backend::SearchApi => Ok(Box::new(HttpSearch::new(config)?)),
        Backend::LocalIndex => Err(Error::InvalidConfig(
            "local_index is not a search backend".into(),
        )),
    }
}

/// Hex SHA-256 of the query, the fixture file stem.
pub fn fixture_key(query: &str) -> String {
    hex::encode(Sha256::digest(query.as_bytes()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FixtureFile {
    pub items: Vec<FixtureItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FixtureItem {
    pub link: String,
    #[serde(default)]
    pub html: Option<String>,
}

/// Offline backend reading `{dir}/{sha256(query)}.json`. A missing file
/// means the engine found nothing.
#[derive(Debug)]
pub struct FixtureSearch {
    dir: PathBuf,
    calls: AtomicUsize,
}

impl FixtureSearch {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureSearch {
            dir: dir.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn path_for(&self, query: &str) -> PathBuf {
        self.dir.join(format!("{}.json", fixture_key(query)))
    }

    /// Stores a fixture for `query`, creating the directory as needed.
    pub fn store(dir: &Path, query: &str, items: Vec<FixtureItem>) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", fixture_key(query)));
        let body = serde_json::to_vec_pretty(&FixtureFile { items })?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

impl SearchBackend for FixtureSearch {
    fn search(&self, query: &str, k: usize, site: Option<&str>) -> Result<Vec<RawPage>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let path = self.path_for(query);
        if !path.exists() {
            tracing::debug!(?path, "no fixture for query");
            return Ok(Vec::new());
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let file: FixtureFile = serde_json::from_slice(&bytes)?;
        Ok(file
            .items
            .into_iter()
            .filter(|item| site.is_none_or(|s| host_matches(&item.link, s)))
            .take(k)
            .map(|item| RawPage {
                url: item.link,
                html: item.html,
            })
            .collect())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn host_matches(link: &str, site: &str) -> bool {
    Url::parse(link)
        .ok()
        .and_then(|u| u.host_str().map(str::to_owned))
        .is_some_and(|h| h == site || h.ends_with(&format!(".{site}")))
}

#[derive(Deserialize)]
struct ApiResponse {
    #[serde(default)]
    items: Vec<ApiItem>,
}

#[derive(Deserialize)]
struct ApiItem {
    link: String,
    #[allow(dead_code)]
    #[serde(default)]
    snippet: Option<String>,
}

/// Client for a Custom-Search-shaped REST endpoint:
/// `GET {endpoint}?q=..&num=k[&siteSearch=..]` returning `{"items":[{"link"}]}`.
/// Each linked page is then fetched with a 10 s timeout.
pub struct HttpSearch {
    endpoint: Url,
    api: ureq::Agent,
    pages: ureq::Agent,
    retry: RetryPolicy,
    limiter: Limiter,
    max_connections: usize,
    calls: AtomicUsize,
}

impl HttpSearch {
    pub fn new(config: &RetrievalConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("search_api backend needs an endpoint".into()))?;
        let endpoint = Url::parse(endpoint)
            .map_err(|e| Error::InvalidConfig(format!("bad endpoint {endpoint:?}: {e}")))?;
        Ok(HttpSearch {
            endpoint,
            api: http::agent(Duration::from_secs(30), &config.user_agent),
            pages: http::agent(Duration::from_secs(10), &config.user_agent),
            retry: config.retry.clone(),
            limiter: Limiter::new(config.max_connections),
            max_connections: config.max_connections.max(1),
            calls: AtomicUsize::new(0),
        })
    }

    fn request_url(&self, query: &str, k: usize, site: Option<&str>) -> Url {
        let mut url = self.endpoint.clone();
        {
            let mut pairs = url.query_pairs_mut();
            pairs
                .append_pair("q", query)
                .append_pair("num", &k.to_string());
            if let Some(site) = site {
                pairs.append_pair("siteSearch", site);
            }
        }
        url
    }

    fn fetch_page(&self, link: &str) -> Option<String> {
        let _permit = self.limiter.acquire();
        let fetched = self.retry.run(|| {
            let mut resp = http::check(self.pages.get(link).call())?;
            resp.body_mut()
                .read_to_string()
                .map_err(|e| Error::Transport(e.to_string()))
        });
        match fetched {
            Ok(html) => Some(html),
            Err(e) => {
                tracing::warn!(link, error = %e, "page fetch failed");
                None
            }
        }
    }
}

impl SearchBackend for HttpSearch {
    fn search(&self, query: &str, k: usize, site: Option<&str>) -> Result<Vec<RawPage>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let url = self.request_url(query, k, site);
        let response: ApiResponse = {
            let _permit = self.limiter.acquire();
            self.retry.run(|| {
                let mut resp = http::check(self.api.get(url.as_str()).call())?;
                resp.body_mut()
                    .read_json::<ApiResponse>()
                    .map_err(|e| Error::ContractViolation(format!("search response: {e}")))
            })?
        };
        let links: Vec<String> = response.items.into_iter().take(k).map(|i| i.link).collect();

        let slots: Vec<Mutex<Option<String>>> = links.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|scope| {
            for _ in 0..self.max_connections.min(links.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= links.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = self.fetch_page(&links[i]);
                });
            }
        });
        Ok(links
            .into_iter()
            .zip(slots)
            .map(|(url, slot)| RawPage {
                url,
                html: slot.into_inner().unwrap(),
            })
            .collect())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
