//! Station availability analytics for dock-based bike-share schemes.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! * [`ingest`] acquires station snapshots from a JCDecaux-style JSON feed or
//!   from CSV archives and keeps them validated and de-duplicated.
//! * [`grid`] resamples a station's irregular snapshots onto a fixed daily slot
//!   grid (10 minutes by default) with explicit imputation flags.
//! * [`flows`] infers check-ins and check-outs from availability deltas and
//!   ranks stations by daily traffic.
//! * [`cluster`] groups day profiles with K-means (Lloyd iterations, k-means++
//!   seeding, seeded restarts).
//! * [`patterns`] cross-tabulates clusters against day of week, labels them by
//!   day type and checks new days against the learned patterns.
//!
//! [`synth`] generates deterministic synthetic schemes with known ground truth,
//! and [`map`] exports daily traffic as GeoJSON.

pub mod cluster;
pub mod config;
pub mod flows;
pub mod grid;
pub mod ingest;
pub mod map;
pub mod patterns;
pub mod synth;

pub use cluster::{ClusterModel, KmeansConfig, MissingSlotMode};
pub use flows::FlowSummary;
pub use grid::{DayProfile, ImputationPolicy, SlotFlag, TimeGrid};
pub use ingest::{SnapshotArchive, StationSnapshot};
