use std::collections::HashSet;
use std::convert::Infallible;
use std::time::Duration;

use thiserror::Error;
use tracing::{info, warn};

use super::{parse_feed_document, IngestError, SnapshotKey, StationSnapshot};

/// Environment variable holding the feed API key.
pub const API_KEY_ENV: &str = "VELOSTAT_API_KEY";

/// Destination for polled snapshots. One writer at a time.
pub trait SnapshotSink {
    fn append(&mut self, rows: &[StationSnapshot]) -> Result<usize, IngestError>;
}

impl SnapshotSink for Vec<StationSnapshot> {
    fn append(&mut self, rows: &[StationSnapshot]) -> Result<usize, IngestError> {
        self.extend_from_slice(rows);
        Ok(rows.len())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("transient fetch failure: {0}")]
    Transient(String),
}

/// Anything that can return the raw text of one feed document.
pub trait FeedSource {
    fn fetch(&mut self) -> Result<String, FetchError>;
}

/// JCDecaux-style station feed over HTTP: `GET endpoint?contract=..&apiKey=..`.
pub struct HttpFeed {
    endpoint: String,
    contract: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpFeed {
    pub fn new(endpoint: impl Into<String>, contract: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpFeed { endpoint: endpoint.into(), contract: contract.into(), api_key: api_key.into(), agent }
    }
}

impl std::fmt::Debug for HttpFeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpFeed").field("endpoint", &self.endpoint).field("contract", &self.contract).finish()
    }
}

impl FeedSource for HttpFeed {
    fn fetch(&mut self) -> Result<String, FetchError> {
        let mut response = self
            .agent
            .get(&self.endpoint)
            .query("contract", &self.contract)
            .query("apiKey", &self.api_key)
            .call()
            .map_err(|e| FetchError::Transient(e.to_string()))?;
        match response.status().as_u16() {
            200..=299 => response.body_mut().read_to_string().map_err(|e| FetchError::Transient(e.to_string())),
            code @ (401 | 403) => Err(FetchError::Auth(format!("http status {code}"))),
            code => Err(FetchError::Transient(format!("http status {code}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PollConfig {
    pub interval: Duration,
    /// Consecutive failed cycles tolerated before the poller gives up.
    pub max_consecutive_failures: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
}

impl Default for PollConfig {
    fn default() -> Self {
        PollConfig {
            interval: Duration::from_secs(600),
            max_consecutive_failures: 10,
            backoff_base: Duration::from_secs(5),
            backoff_cap: Duration::from_secs(600),
        }
    }
}

impl PollConfig {
    /// Delay before retry number `failures` (1-based): base·2^(failures−1), capped.
    pub fn backoff(&self, failures: u32) -> Duration {
        let factor = 1u32.checked_shl(failures.saturating_sub(1)).unwrap_or(u32::MAX);
        self.backoff_base.saturating_mul(factor).min(self.backoff_cap)
    }
}

#[derive(Debug, Error)]
pub enum PollError {
    #[error("poll interval must be at least one minute, got {0:?}")]
    IntervalTooShort(Duration),
    #[error(transparent)]
    Auth(FetchError),
    #[error("feed unavailable for {failures} consecutive cycles: {last}")]
    TooManyFailures { failures: u32, last: String },
    #[error("archive write failed: {0}")]
    Sink(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CycleOutcome {
    Completed(CycleStats),
    /// The fetch failed; the next attempt should wait `retry_in`.
    Failed { consecutive: u32, retry_in: Duration, reason: String },
}

/// Fetch-parse-append loop with de-duplication on `(station_id, last_update)`.
pub struct Poller<S, K> {
    source: S,
    sink: K,
    config: PollConfig,
    seen: HashSet<SnapshotKey>,
    consecutive_failures: u32,
}

impl<S: FeedSource, K: SnapshotSink> Poller<S, K> {
    pub fn new(source: S, sink: K, config: PollConfig) -> Result<Self, PollError> {
        if config.interval < Duration::from_secs(60) {
            return Err(PollError::IntervalTooShort(config.interval));
        }
        Ok(Poller { source, sink, config, seen: HashSet::new(), consecutive_failures: 0 })
    }

    /// Primes the de-duplication set, e.g. from an archive being resumed.
    pub fn with_seen(mut self, keys: impl IntoIterator<Item = SnapshotKey>) -> Self {
        self.seen.extend(keys);
        self
    }

    pub fn sink(&self) -> &K {
        &self.sink
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }

    /// Runs one cycle. Authentication failures, sink failures and exceeding the
    /// failure threshold are returned as errors; other fetch failures are
    /// reported as [`CycleOutcome::Failed`].
    pub fn poll_once(&mut self) -> Result<CycleOutcome, PollError> {
        let raw = match self.source.fetch() {
            Ok(raw) => raw,
            Err(e @ FetchError::Auth(_)) => return Err(PollError::Auth(e)),
            Err(FetchError::Transient(reason)) => return self.record_failure(reason),
        };
        let batch = match parse_feed_document(&raw) {
            Ok(batch) => batch,
            Err(e) => return self.record_failure(e.to_string()),
        };
        self.consecutive_failures = 0;

        let mut stats = CycleStats { rejected: batch.rejections.len(), ..CycleStats::default() };
        for r in &batch.rejections {
            warn!(%r, "feed record rejected");
        }
        let mut fresh = Vec::with_capacity(batch.snapshots.len());
        for snapshot in batch.snapshots {
            if self.seen.insert(snapshot.key()) {
                fresh.push(snapshot);
            } else {
                stats.duplicates += 1;
            }
        }
        stats.accepted = self.sink.append(&fresh)?;
        info!(accepted = stats.accepted, duplicate = stats.duplicates, rejected = stats.rejected, "poll cycle");
        Ok(CycleOutcome::Completed(stats))
    }

    fn record_failure(&mut self, reason: String) -> Result<CycleOutcome, PollError> {
        self.consecutive_failures += 1;
        let consecutive = self.consecutive_failures;
        if consecutive >= self.config.max_consecutive_failures {
            return Err(PollError::TooManyFailures { failures: consecutive, last: reason });
        }
        let retry_in = self.config.backoff(consecutive);
        warn!(consecutive, ?retry_in, %reason, "poll cycle failed");
        Ok(CycleOutcome::Failed { consecutive, retry_in, reason })
    }

    /// Polls until a fatal error. `sleep` is called between cycles with the
    /// regular interval after a success and the backoff delay after a failure.
    pub fn run(&mut self, mut sleep: impl FnMut(Duration)) -> Result<Infallible, PollError> {
        loop {
            match self.poll_once()? {
                CycleOutcome::Completed(_) => sleep(self.config.interval),
                CycleOutcome::Failed { retry_in, .. } => sleep(retry_in),
            }
        }
    }
}
