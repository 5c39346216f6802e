//! Check-in/check-out inference from availability deltas and daily traffic.
//!
//! Counts are inferred from consecutive slot values: a rise is a check-in, a
//! drop a check-out. Two consequences follow from the data rather than from
//! this code:
//!
//! * operator rebalancing moves are indistinguishable from user trips and are
//!   counted as such;
//! * a check-in and a check-out inside the same slot cancel, so sampled churn
//!   is a lower bound on real churn.
//!
//! A run of missing slots is bridged by a single delta between the values on
//! either side of it, which keeps `check_ins − check_outs` equal to the net
//! change over the day.

use std::cmp::Reverse;
use std::io::{Read, Write};

use chrono::NaiveDate;
use csv::{ReaderBuilder, Terminator, WriterBuilder};
use thiserror::Error;

use crate::grid::DayProfile;

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("station {station_id} on {date}: need at least 2 non-missing slots, found {found}")]
    InsufficientData { station_id: u32, date: NaiveDate, found: usize },
    #[error("no traffic data for {0}")]
    NoData(NaiveDate),
    #[error("traffic CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowSummary {
    pub station_id: u32,
    pub date: NaiveDate,
    pub check_ins: u64,
    pub check_outs: u64,
    pub traffic_level: u64,
}

pub fn infer_flows(profile: &DayProfile) -> Result<FlowSummary, FlowError> {
    let mut present = profile.present().map(|(_, v)| i64::from(v));
    let (mut check_ins, mut check_outs, mut seen) = (0u64, 0u64, 0usize);
    if let Some(mut prev) = present.next() {
        seen = 1;
        for v in present {
            let delta = v - prev;
            if delta > 0 {
                check_ins += delta as u64;
            } else {
                check_outs += delta.unsigned_abs();
            }
            prev = v;
            seen += 1;
        }
    }
    if seen < 2 {
        return Err(FlowError::InsufficientData { station_id: profile.station_id, date: profile.date, found: seen });
    }
    Ok(FlowSummary {
        station_id: profile.station_id,
        date: profile.date,
        check_ins,
        check_outs,
        traffic_level: check_ins + check_outs,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficTable {
    pub rows: Vec<FlowSummary>,
    /// `(station_id, date)` of profiles with fewer than two usable slots.
    pub skipped: Vec<(u32, NaiveDate)>,
}

pub fn daily_traffic_table(profiles: &[DayProfile]) -> TrafficTable {
    let mut table = TrafficTable::default();
    for p in profiles {
        match infer_flows(p) {
            Ok(summary) => table.rows.push(summary),
            Err(_) => table.skipped.push((p.station_id, p.date)),
        }
    }
    table
}

/// Stations of one day ordered by descending traffic, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct StationRanking {
    pub date: NaiveDate,
    pub entries: Vec<(u32, u64)>,
}

impl StationRanking {
    pub fn busiest(&self) -> (u32, u64) {
        self.entries[0]
    }

    pub fn quietest(&self) -> (u32, u64) {
        self.entries[self.entries.len() - 1]
    }

    pub fn station_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|(id, _)| *id).collect()
    }
}

pub fn rank_stations(table: &[FlowSummary], date: NaiveDate) -> Result<StationRanking, FlowError> {
    let mut entries: Vec<(u32, u64)> =
        table.iter().filter(|r| r.date == date).map(|r| (r.station_id, r.traffic_level)).collect();
    if entries.is_empty() {
        return Err(FlowError::NoData(date));
    }
    entries.sort_by_key(|&(id, traffic)| (Reverse(traffic), id));
    Ok(StationRanking { date, entries })
}

const HEADER: [&str; 5] = ["station_id", "date", "check_ins", "check_outs", "traffic_level"];

pub fn write_traffic_csv(rows: &[FlowSummary], writer: impl Write) -> std::io::Result<()> {
    let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
    csv.write_record(HEADER)?;
    for r in rows {
        csv.write_record([
            r.station_id.to_string(),
            r.date.to_string(),
            r.check_ins.to_string(),
            r.check_outs.to_string(),
            r.traffic_level.to_string(),
        ])?;
    }
    csv.flush()
}

pub fn read_traffic_csv(reader: impl Read) -> Result<Vec<FlowSummary>, FlowError> {
    let mut csv = ReaderBuilder::new().from_reader(reader);
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| FlowError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = || FlowError::Csv(format!("line {line}: malformed row"));
        if record.len() != HEADER.len() {
            return Err(bad());
        }
        let count = |i: usize| record[i].parse::<u64>().map_err(|_| bad());
        let row = FlowSummary {
            station_id: record[0].parse().map_err(|_| bad())?,
            date: record[1].parse().map_err(|_| bad())?,
            check_ins: count(2)?,
            check_outs: count(3)?,
            traffic_level: count(4)?,
        };
        if row.traffic_level != row.check_ins + row.check_outs {
            return Err(FlowError::Csv(format!("line {line}: traffic_level is not check_ins + check_outs")));
        }
        rows.push(row);
    }
    Ok(rows)
}
