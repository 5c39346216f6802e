//! Snapshot acquisition: feed parsing, CSV archives and the polling client.

mod archive;
mod feed;
mod poll;

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use thiserror::Error;

pub use archive::{read_archive, read_archive_from, write_archive, write_archive_to, ArchiveRead, CsvArchiveSink};
pub use feed::{parse_feed_document, FeedBatch};
pub use poll::{
    CycleOutcome, CycleStats, FeedSource, FetchError, HttpFeed, PollConfig, PollError, Poller, SnapshotSink,
    API_KEY_ENV,
};

/// One observation of one station at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSnapshot {
    pub station_id: u32,
    pub station_name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub total_stands: u32,
    pub available_stands: u32,
    pub available_bikes: u32,
    /// UTC, millisecond precision.
    pub observed_at: DateTime<Utc>,
}

/// Dedup key of a snapshot: station and observation time in epoch milliseconds.
pub type SnapshotKey = (u32, i64);

impl StationSnapshot {
    pub fn key(&self) -> SnapshotKey {
        (self.station_id, self.observed_at.timestamp_millis())
    }

    /// Checks the record-level invariants.
    ///
    /// Slack between `available_bikes + available_stands` and `total_stands` is
    /// accepted (docks can be out of service); only an excess is rejected.
    pub fn validate(&self) -> Result<(), String> {
        if self.station_id == 0 {
            return Err("station number must be positive".into());
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(format!("latitude {} outside [-90, 90]", self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(format!("longitude {} outside [-180, 180]", self.longitude));
        }
        let occupied = u64::from(self.available_bikes) + u64::from(self.available_stands);
        if occupied > u64::from(self.total_stands) {
            return Err(format!(
                "available bikes {} + available stands {} exceed total stands {}",
                self.available_bikes, self.available_stands, self.total_stands
            ));
        }
        Ok(())
    }
}

/// Why a record was not retained.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    MissingFields(Vec<String>),
    Malformed(String),
    Invariant(String),
    Arity { expected: usize, found: usize },
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MissingFields(fields) => write!(f, "missing field(s): {}", fields.join(", ")),
            RejectReason::Malformed(msg) => write!(f, "malformed: {msg}"),
            RejectReason::Invariant(msg) => write!(f, "invariant violated: {msg}"),
            RejectReason::Arity { expected, found } => {
                write!(f, "expected {expected} columns, found {found}")
            }
            RejectReason::Duplicate => write!(f, "duplicate (station, last update)"),
        }
    }
}

/// A rejected record. `position` is the array index for feed documents and the
/// 1-based line number for CSV archives.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub position: usize,
    pub station_id: Option<u32>,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.station_id {
            Some(id) => write!(f, "record {} (station {}): {}", self.position, id, self.reason),
            None => write!(f, "record {}: {}", self.position, self.reason),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed feed document at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

/// Validated snapshots sorted by `(station_id, observed_at)` with unique keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnapshotArchive {
    rows: Vec<StationSnapshot>,
    pub source: String,
}

impl SnapshotArchive {
    pub fn new(source: impl Into<String>) -> Self {
        SnapshotArchive { rows: Vec::new(), source: source.into() }
    }

    /// Builds an archive from unordered rows. On duplicate keys the first row in
    /// input order is kept; the input positions of the dropped rows are returned.
    pub fn from_rows(rows: Vec<StationSnapshot>, source: impl Into<String>) -> (Self, Vec<usize>) {
        let mut indexed: Vec<(usize, StationSnapshot)> = rows.into_iter().enumerate().collect();
        indexed.sort_by_key(|(i, r)| (r.key(), *i));
        let mut kept = Vec::with_capacity(indexed.len());
        let mut dropped = Vec::new();
        let mut last: Option<SnapshotKey> = None;
        for (i, row) in indexed {
            if last == Some(row.key()) {
                dropped.push(i);
                continue;
            }
            last = Some(row.key());
            kept.push(row);
        }
        dropped.sort_unstable();
        (SnapshotArchive { rows: kept, source: source.into() }, dropped)
    }

    pub fn rows(&self) -> &[StationSnapshot] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<StationSnapshot> {
        self.rows
    }

    /// Rows of one station in time order.
    pub fn station_rows(&self, station_id: u32) -> &[StationSnapshot] {
        let start = self.rows.partition_point(|r| r.station_id < station_id);
        let end = self.rows.partition_point(|r| r.station_id <= station_id);
        &self.rows[start..end]
    }

    /// Station ids present, ascending.
    pub fn station_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.station_id).collect();
        ids.dedup();
        ids
    }

    pub fn keys(&self) -> HashSet<SnapshotKey> {
        self.rows.iter().map(StationSnapshot::key).collect()
    }

    /// Merges new rows, keeping existing rows on key collisions. Returns the
    /// number of rows actually added.
    pub fn extend(&mut self, rows: impl IntoIterator<Item = StationSnapshot>) -> usize {
        let before = self.rows.len();
        let mut all = std::mem::take(&mut self.rows);
        all.extend(rows);
        let (merged, _) = SnapshotArchive::from_rows(all, std::mem::take(&mut self.source));
        *self = merged;
        self.rows.len() - before
    }
}
