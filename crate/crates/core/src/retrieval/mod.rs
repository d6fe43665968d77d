//! Top-K passage retrieval from a local BM25 index or a search engine.

mod bm25;
mod html;
mod search;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use bm25::{analyze, idf, term_score, Index, ScoredPassage, BM25_B, BM25_K1};
pub use html::clean_html;
pub use search::{
    backend_from_config, fixture_key, search_web, FetchStatus, FixtureFile, FixtureItem,
    FixtureSearch, HttpSearch, RawPage, SearchBackend, SearchResult,
};

use crate::error::{Error, Result};
use crate::http::RetryPolicy;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    LocalIndex,
    SearchApi,
    Fixture,
}

/// Inclusive 1-based rank band, e.g. ranks 6..=10.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankWindow {
    pub start: usize,
    pub end: usize,
}

impl RankWindow {
    pub fn contains(&self, rank: usize) -> bool {
        (self.start..=self.end).contains(&rank)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub site_restrict: Option<String>,
    pub fixture_dir: Option<PathBuf>,
    pub user_agent: String,
    pub max_connections: usize,
    pub retry: RetryPolicy,
    /// When set, only results ranked inside the window are kept; the
    /// backend is asked for `window.end` results.
    pub rank_window: Option<RankWindow>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 10,
            backend: Backend::LocalIndex,
            endpoint: None,
            site_restrict: None,
            fixture_dir: None,
            user_agent: concat!("webaug/", env!("CARGO_PKG_VERSION")).to_string(),
            max_connections: 4,
            retry: RetryPolicy::default(),
            rank_window: None,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("retrieval.k must be >= 1".into()));
        }
        match (self.backend, &self.endpoint) {
            (Backend::SearchApi, None) => {
                return Err(Error::InvalidConfig(
                    "search_api backend requires endpoint".into(),
                ))
            }
            (Backend::LocalIndex | Backend::Fixture, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "endpoint is only valid for the search_api backend".into(),
                ))
            }
            _ => {}
        }
        if self.backend == Backend::Fixture && self.fixture_dir.is_none() {
            return Err(Error::InvalidConfig(
                "fixture backend requires fixture_dir".into(),
            ));
        }
        if let Some(w) = self.rank_window {
            if w.start == 0 || w.start > w.end {
                return Err(Error::InvalidConfig(format!(
                    "bad rank window {}-{}",
                    w.start, w.end
                )));
            }
        }
        Ok(())
    }

    /// How many results to request from the backend.
    pub fn fetch_depth(&self) -> usize {
        self.rank_window.map_or(self.k, |w| w.end)
    }
}

/// Retrieval over a local index, honoring the config's rank window.
pub fn query_index(
    index: &Index,
    query: &str,
    config: &RetrievalConfig,
) -> Result<Vec<ScoredPassage>> {
    let hits = index.query(query, config.fetch_depth())?;
    Ok(match config.rank_window {
        Some(w) => hits.into_iter().filter(|h| w.contains(h.rank)).collect(),
        None => hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_iff_search_api() {
        let mut c = RetrievalConfig {
            backend: Backend::SearchApi,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.endpoint = Some("http://x".into());
        assert!(c.validate().is_ok());
        c.backend = Backend::LocalIndex;
        assert!(c.validate().is_err());
    }

    #[test]
    fn k_must_be_positive() {
        let c = RetrievalConfig {
            k: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn rank_window_filters() {
        use crate::corpus::Passage;
        let passages = (0..8).map(|i| Passage::new(format!("d{i}"), 0, "term ".repeat(i + 1)));
        let index = Index::build(passages).unwrap();
        let config = RetrievalConfig {
            rank_window: Some(RankWindow { start: 3, end: 5 }),
            ..Default::default()
        };
        let ranks: Vec<_> = query_index(&index, "term", &config)
            .unwrap()
            .iter()
            .map(|h| h.rank)
            .collect();
        assert_eq!(ranks, [3, 4, 5]);
    }
}
