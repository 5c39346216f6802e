//! Resampling of irregular snapshots onto a fixed daily slot grid.
//!
//! A day is the local calendar day in the grid's time zone. Slot `i` starts at
//! wall-clock time `i × step` after local midnight, so on DST transition days
//! the slot indices still run 0..slots_per_day and the nearest-slot rule absorbs
//! the skipped or repeated hour.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Days, LocalResult, NaiveDate, NaiveTime, TimeDelta, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use csv::{ReaderBuilder, Terminator, WriterBuilder};
use thiserror::Error;

use crate::ingest::{SnapshotArchive, StationSnapshot};

const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("step of {0} minutes does not divide 24 hours into slots of at least 10 minutes")]
    InvalidStep(u32),
    #[error("unknown time zone {0:?}")]
    UnknownZone(String),
    #[error("station {0} is not in the archive")]
    UnknownStation(u32),
    #[error("no snapshots for station {station_id} on {date}")]
    EmptyProfile { station_id: u32, date: NaiveDate },
    #[error("profile values and flags must have {expected} entries, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("profile CSV: {0}")]
    Csv(String),
}

/// Daily slot grid anchored at local midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    zone: Tz,
    step_minutes: u32,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid { zone: chrono_tz::Europe::Dublin, step_minutes: 10 }
    }
}

impl TimeGrid {
    pub fn new(zone: Tz, step_minutes: u32) -> Result<Self, GridError> {
        if step_minutes < 10 || !MINUTES_PER_DAY.is_multiple_of(step_minutes) {
            return Err(GridError::InvalidStep(step_minutes));
        }
        Ok(TimeGrid { zone, step_minutes })
    }

    pub fn with_zone_name(zone: &str, step_minutes: u32) -> Result<Self, GridError> {
        let zone = Tz::from_str(zone).map_err(|_| GridError::UnknownZone(zone.to_string()))?;
        TimeGrid::new(zone, step_minutes)
    }

    pub fn zone(&self) -> Tz {
        self.zone
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn slots_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.step_minutes) as usize
    }

    pub fn local_date(&self, ts: &DateTime<Utc>) -> NaiveDate {
        ts.with_timezone(&self.zone).date_naive()
    }

    /// Local date and nearest slot of an instant. Exact half-step ties go to the
    /// earlier slot; instants past the last slot's midpoint stay in the last slot.
    pub fn slot_of(&self, ts: &DateTime<Utc>) -> (NaiveDate, usize) {
        let local = ts.with_timezone(&self.zone);
        let time = local.time();
        let offset_ms =
            u64::from(time.num_seconds_from_midnight()) * 1000 + u64::from(time.nanosecond() / 1_000_000).min(999);
        let step_ms = u64::from(self.step_minutes) * 60_000;
        let (q, r) = (offset_ms / step_ms, offset_ms % step_ms);
        let slot = if 2 * r > step_ms { q + 1 } else { q };
        (local.date_naive(), (slot as usize).min(self.slots_per_day() - 1))
    }

    /// UTC instant of a slot start. `None` when that wall-clock time does not
    /// exist (spring-forward gap); the earlier instant when it is ambiguous.
    pub fn slot_start(&self, date: NaiveDate, slot: usize) -> Option<DateTime<Utc>> {
        let minutes = slot as u32 * self.step_minutes;
        let time = NaiveTime::from_hms_opt(minutes / 60, minutes % 60, 0)?;
        match self.zone.from_local_datetime(&date.and_time(time)) {
            LocalResult::Single(t) | LocalResult::Ambiguous(t, _) => Some(t.with_timezone(&Utc)),
            LocalResult::None => None,
        }
    }

    /// Half-open UTC interval covering the local day.
    pub fn day_bounds(&self, date: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
        (self.day_start(date), self.day_start(date + Days::new(1)))
    }

    fn day_start(&self, date: NaiveDate) -> DateTime<Utc> {
        // Some zones skip local midnight; take the first existing minute.
        (0..24 * 60)
            .find_map(|m| {
                let t = date.and_hms_opt(0, 0, 0)? + TimeDelta::minutes(m);
                self.zone.from_local_datetime(&t).earliest()
            })
            .map(|t| t.with_timezone(&Utc))
            .expect("every local day has at least one existing minute")
    }
}

/// Provenance of a profile slot value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotFlag {
    Direct,
    Imputed,
    Missing,
}

impl SlotFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotFlag::Direct => "direct",
            SlotFlag::Imputed => "imputed",
            SlotFlag::Missing => "missing",
        }
    }
}

impl fmt::Display for SlotFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SlotFlag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(SlotFlag::Direct),
            "imputed" => Ok(SlotFlag::Imputed),
            "missing" => Ok(SlotFlag::Missing),
            other => Err(format!("unknown slot flag {other:?}")),
        }
    }
}

/// Available bikes per slot for one station on one local day.
///
/// Missing slots hold 0; consult [`DayProfile::flags`] before reading values.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    pub station_id: u32,
    pub date: NaiveDate,
    values: Vec<u32>,
    flags: Vec<SlotFlag>,
    completeness: f64,
}

impl DayProfile {
    pub fn new(station_id: u32, date: NaiveDate, values: Vec<u32>, flags: Vec<SlotFlag>) -> Result<Self, GridError> {
        if values.len() != flags.len() || values.is_empty() {
            return Err(GridError::Shape { expected: values.len().max(1), found: flags.len() });
        }
        let mut values = values;
        for (v, f) in values.iter_mut().zip(&flags) {
            if *f == SlotFlag::Missing {
                *v = 0;
            }
        }
        let direct = flags.iter().filter(|f| **f == SlotFlag::Direct).count();
        let completeness = direct as f64 / flags.len() as f64;
        Ok(DayProfile { station_id, date, values, flags, completeness })
    }

    /// A fully observed profile.
    pub fn observed(station_id: u32, date: NaiveDate, values: Vec<u32>) -> Self {
        let flags = vec![SlotFlag::Direct; values.len()];
        DayProfile::new(station_id, date, values, flags).expect("lengths match")
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn flags(&self) -> &[SlotFlag] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of directly observed slots.
    pub fn completeness(&self) -> f64 {
        self.completeness
    }

    pub fn count(&self, flag: SlotFlag) -> usize {
        self.flags.iter().filter(|f| **f == flag).count()
    }

    /// `(slot, value)` for every direct or imputed slot, in slot order.
    pub fn present(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.values
            .iter()
            .zip(&self.flags)
            .enumerate()
            .filter(|(_, (_, f))| **f != SlotFlag::Missing)
            .map(|(i, (v, _))| (i, *v))
    }

    /// The same day in reverse slot order.
    pub fn reversed(&self) -> DayProfile {
        let mut values = self.values.clone();
        let mut flags = self.flags.clone();
        values.reverse();
        flags.reverse();
        DayProfile { values, flags, ..self.clone() }
    }
}

/// Forward-fill limit in slots. Slots further than `max_gap` after the last
/// direct observation are missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImputationPolicy {
    pub max_gap: usize,
}

impl Default for ImputationPolicy {
    fn default() -> Self {
        ImputationPolicy { max_gap: 6 }
    }
}

pub const DEFAULT_MIN_COMPLETENESS: f64 = 0.8;

/// Resamples one station-day onto the grid.
pub fn build_day_profile(
    archive: &SnapshotArchive,
    station_id: u32,
    date: NaiveDate,
    grid: &TimeGrid,
    policy: ImputationPolicy,
) -> Result<DayProfile, GridError> {
    let rows = archive.station_rows(station_id);
    if rows.is_empty() {
        return Err(GridError::UnknownStation(station_id));
    }
    profile_from_rows(rows, station_id, date, grid, policy)
}

fn profile_from_rows(
    rows: &[StationSnapshot],
    station_id: u32,
    date: NaiveDate,
    grid: &TimeGrid,
    policy: ImputationPolicy,
) -> Result<DayProfile, GridError> {
    let (start, end) = grid.day_bounds(date);
    let lo = rows.partition_point(|r| r.observed_at < start);
    let hi = rows.partition_point(|r| r.observed_at < end);
    if lo == hi {
        return Err(GridError::EmptyProfile { station_id, date });
    }

    let n = grid.slots_per_day();
    let mut direct: Vec<Option<u32>> = vec![None; n];
    // Rows are time-ordered, so later snapshots overwrite earlier ones per slot.
    for row in &rows[lo..hi] {
        let (_, slot) = grid.slot_of(&row.observed_at);
        direct[slot] = Some(row.available_bikes);
    }

    let mut values = vec![0; n];
    let mut flags = vec![SlotFlag::Missing; n];
    let mut last: Option<(u32, usize)> = None;
    for slot in 0..n {
        if let Some(v) = direct[slot] {
            values[slot] = v;
            flags[slot] = SlotFlag::Direct;
            last = Some((v, slot));
        } else if let Some((v, at)) = last {
            if slot - at <= policy.max_gap {
                values[slot] = v;
                flags[slot] = SlotFlag::Imputed;
            }
        }
    }
    DayProfile::new(station_id, date, values, flags)
}

/// Profiles over an inclusive date range with the days that fell short of the
/// completeness threshold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RangeProfiles {
    pub profiles: Vec<DayProfile>,
    /// `(date, completeness)`; days without any snapshot have completeness 0.
    pub excluded: Vec<(NaiveDate, f64)>,
}

pub fn profiles_for_range(
    archive: &SnapshotArchive,
    station_id: u32,
    first: NaiveDate,
    last: NaiveDate,
    grid: &TimeGrid,
    policy: ImputationPolicy,
    min_completeness: f64,
) -> Result<RangeProfiles, GridError> {
    let mut out = RangeProfiles::default();
    if first > last {
        return Ok(out);
    }
    let rows = archive.station_rows(station_id);
    if rows.is_empty() {
        return Err(GridError::UnknownStation(station_id));
    }
    for date in first.iter_days().take_while(|d| *d <= last) {
        match profile_from_rows(rows, station_id, date, grid, policy) {
            Ok(p) if p.completeness() >= min_completeness => out.profiles.push(p),
            Ok(p) => out.excluded.push((date, p.completeness())),
            Err(GridError::EmptyProfile { .. }) => out.excluded.push((date, 0.0)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// First and last local dates with data for a station.
pub fn station_date_span(archive: &SnapshotArchive, station_id: u32, grid: &TimeGrid) -> Option<(NaiveDate, NaiveDate)> {
    let rows = archive.station_rows(station_id);
    Some((grid.local_date(&rows.first()?.observed_at), grid.local_date(&rows.last()?.observed_at)))
}

/// Writes profiles as `station_id,date,slot_index,value,flag` rows.
pub fn write_profiles_csv(profiles: &[DayProfile], writer: impl Write) -> std::io::Result<()> {
    let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
    csv.write_record(["station_id", "date", "slot_index", "value", "flag"])?;
    for p in profiles {
        let date = p.date.to_string();
        for (slot, (value, flag)) in p.values.iter().zip(&p.flags).enumerate() {
            csv.write_record([&p.station_id.to_string(), &date, &slot.to_string(), &value.to_string(), flag.as_str()])?;
        }
    }
    csv.flush()
}

/// Reads profiles written by [`write_profiles_csv`]. Output is ordered by
/// `(station_id, date)`; every profile must cover the same slot count.
pub fn read_profiles_csv(reader: impl Read) -> Result<Vec<DayProfile>, GridError> {
    let mut csv = ReaderBuilder::new().from_reader(reader);
    let mut groups: BTreeMap<(u32, NaiveDate), BTreeMap<usize, (u32, SlotFlag)>> = BTreeMap::new();
    for record in csv.records() {
        let record = record.map_err(|e| GridError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| GridError::Csv(format!("line {line}: bad {what}"));
        if record.len() != 5 {
            return Err(bad("column count"));
        }
        let station: u32 = record[0].parse().map_err(|_| bad("station_id"))?;
        let date: NaiveDate = record[1].parse().map_err(|_| bad("date"))?;
        let slot: usize = record[2].parse().map_err(|_| bad("slot_index"))?;
        let value: u32 = record[3].parse().map_err(|_| bad("value"))?;
        let flag: SlotFlag = record[4].parse().map_err(|_| bad("flag"))?;
        if groups.entry((station, date)).or_default().insert(slot, (value, flag)).is_some() {
            return Err(GridError::Csv(format!("line {line}: duplicate slot {slot} for station {station} on {date}")));
        }
    }
    let mut slots = None;
    let mut out = Vec::with_capacity(groups.len());
    for ((station, date), cells) in groups {
        let n = cells.len();
        if *slots.get_or_insert(n) != n || cells.keys().next_back() != Some(&(n - 1)) {
            return Err(GridError::Csv(format!("station {station} on {date}: incomplete slot sequence")));
        }
        let (values, flags) = cells.into_values().unzip();
        out.push(DayProfile::new(station, date, values, flags)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tests::snap;
    use proptest::prelude::*;

    fn utc_grid() -> TimeGrid {
        TimeGrid::new(chrono_tz::UTC, 10).unwrap()
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 9, 14).unwrap()
    }

    fn at(minutes: i64, bikes: u32) -> StationSnapshot {
        let base = day().and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis();
        snap(1, bikes, 0, 40, base + minutes * 60_000)
    }

    fn archive(rows: Vec<StationSnapshot>) -> SnapshotArchive {
        SnapshotArchive::from_rows(rows, "test").0
    }

    #[test]
    fn default_grid_has_144_slots() {
        assert_eq!(TimeGrid::default().slots_per_day(), 144);
        assert_eq!(TimeGrid::with_zone_name("Europe/Dublin", 30).unwrap().slots_per_day(), 48);
        assert_eq!(TimeGrid::new(chrono_tz::UTC, 7), Err(GridError::InvalidStep(7)));
        assert_eq!(TimeGrid::new(chrono_tz::UTC, 5), Err(GridError::InvalidStep(5)));
        assert!(matches!(TimeGrid::with_zone_name("Mars/Olympus", 10), Err(GridError::UnknownZone(_))));
    }

    #[test]
    fn nearest_slot_ties_go_earlier() {
        let g = utc_grid();
        let ts = |m: i64, s: i64| day().and_hms_opt(0, 0, 0).unwrap().and_utc() + TimeDelta::seconds(m * 60 + s);
        assert_eq!(g.slot_of(&ts(3, 0)).1, 0);
        assert_eq!(g.slot_of(&ts(5, 0)).1, 0);
        assert_eq!(g.slot_of(&ts(5, 1)).1, 1);
        assert_eq!(g.slot_of(&ts(23 * 60 + 56, 0)), (day(), 143));
    }

    #[test]
    fn constant_fully_observed_day() {
        let rows = (0..144).map(|s| at(s * 10, 5)).collect();
        let p = build_day_profile(&archive(rows), 1, day(), &utc_grid(), ImputationPolicy::default()).unwrap();
        assert!(p.values().iter().all(|v| *v == 5));
        assert_eq!(p.completeness(), 1.0);
    }

    #[test]
    fn single_early_snapshot_fills_six_slots() {
        let p = build_day_profile(&archive(vec![at(3, 7)]), 1, day(), &utc_grid(), ImputationPolicy { max_gap: 6 })
            .unwrap();
        assert_eq!(p.flags()[0], SlotFlag::Direct);
        assert!(p.flags()[1..=6].iter().all(|f| *f == SlotFlag::Imputed));
        assert!(p.values()[..=6].iter().all(|v| *v == 7));
        assert!(p.flags()[7..].iter().all(|f| *f == SlotFlag::Missing));
        assert!(p.values()[7..].iter().all(|v| *v == 0));
        assert_eq!(p.completeness(), 1.0 / 144.0);
    }

    #[test]
    fn interior_hole_is_imputed() {
        let rows = (0..144).filter(|s| !(50..53).contains(s)).map(|s| at(s * 10, (s % 9) as u32)).collect();
        let p = build_day_profile(&archive(rows), 1, day(), &utc_grid(), ImputationPolicy { max_gap: 6 }).unwrap();
        assert_eq!(&p.values()[50..53], &[49 % 9; 3]);
        assert_eq!(p.count(SlotFlag::Imputed), 3);
        assert_eq!(p.completeness(), 141.0 / 144.0);
    }

    #[test]
    fn latest_snapshot_in_a_slot_wins() {
        let p = build_day_profile(&archive(vec![at(9, 1), at(11, 2)]), 1, day(), &utc_grid(), ImputationPolicy::default())
            .unwrap();
        assert_eq!(p.values()[1], 2);
        assert_eq!(p.count(SlotFlag::Direct), 1);
    }

    #[test]
    fn leading_slots_are_missing() {
        let p = build_day_profile(&archive(vec![at(600, 4)]), 1, day(), &utc_grid(), ImputationPolicy::default()).unwrap();
        assert!(p.flags()[..60].iter().all(|f| *f == SlotFlag::Missing));
        assert_eq!(p.flags()[60], SlotFlag::Direct);
    }

    #[test]
    fn errors_for_unknown_station_and_empty_day() {
        let a = archive(vec![at(0, 1)]);
        let g = utc_grid();
        let policy = ImputationPolicy::default();
        assert_eq!(build_day_profile(&a, 9, day(), &g, policy), Err(GridError::UnknownStation(9)));
        let other = day().succ_opt().unwrap();
        assert_eq!(build_day_profile(&a, 1, other, &g, policy), Err(GridError::EmptyProfile { station_id: 1, date: other }));
    }

    #[test]
    fn range_applies_threshold_in_date_order() {
        let mut rows = Vec::new();
        for d in 0..7i64 {
            for s in 0..144 {
                if d != 3 || s % 2 == 0 {
                    rows.push(at(d * 1440 + s * 10, 3));
                }
            }
        }
        let a = archive(rows);
        let g = utc_grid();
        let last = day() + Days::new(6);
        let r = profiles_for_range(&a, 1, day(), last, &g, ImputationPolicy::default(), 0.8).unwrap();
        assert_eq!(r.profiles.len(), 6);
        assert_eq!(r.excluded, vec![(day() + Days::new(3), 0.5)]);
        assert!(r.profiles.windows(2).all(|w| w[0].date < w[1].date));

        let all = profiles_for_range(&a, 1, day(), last, &g, ImputationPolicy::default(), 0.0).unwrap();
        assert_eq!(all.profiles.len(), 7);
        assert!(all.excluded.is_empty());

        let empty = profiles_for_range(&a, 1, last, day(), &g, ImputationPolicy::default(), 0.8).unwrap();
        assert_eq!(empty, RangeProfiles::default());
    }

    #[test]
    fn dublin_days_follow_local_midnight() {
        let g = TimeGrid::default();
        // 2016-09-14 is IST (UTC+1): local midnight is 23:00 UTC the day before.
        let (start, end) = g.day_bounds(day());
        assert_eq!(start.to_rfc3339(), "2016-09-13T23:00:00+00:00");
        assert_eq!(end - start, TimeDelta::hours(24));
        // Clocks went back on 2016-10-30: a 25-hour local day.
        let (s, e) = g.day_bounds(NaiveDate::from_ymd_opt(2016, 10, 30).unwrap());
        assert_eq!(e - s, TimeDelta::hours(25));
        let (s, e) = g.day_bounds(NaiveDate::from_ymd_opt(2016, 3, 27).unwrap());
        assert_eq!(e - s, TimeDelta::hours(23));
        assert!(g.slot_start(NaiveDate::from_ymd_opt(2016, 3, 27).unwrap(), 6).is_none());
    }

    #[test]
    fn profile_csv_round_trip() {
        let a = archive(vec![at(3, 7), at(700, 2)]);
        let p = build_day_profile(&a, 1, day(), &utc_grid(), ImputationPolicy::default()).unwrap();
        let q = DayProfile::observed(2, day(), vec![1; 144]);
        let mut buf = Vec::new();
        write_profiles_csv(&[q.clone(), p.clone()], &mut buf).unwrap();
        assert_eq!(read_profiles_csv(buf.as_slice()).unwrap(), vec![p, q]);
    }

    #[test]
    fn profile_csv_rejects_gaps() {
        let text = "station_id,date,slot_index,value,flag\n1,2016-09-14,0,1,direct\n1,2016-09-14,2,1,direct\n";
        assert!(read_profiles_csv(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn flag_counts_partition_the_day(
            minutes in proptest::collection::vec(0i64..1440, 1..60),
            gap in 0usize..20,
        ) {
            let rows = minutes.iter().map(|m| at(*m, (*m % 17) as u32)).collect();
            let a = archive(rows);
            let g = utc_grid();
            let p = build_day_profile(&a, 1, day(), &g, ImputationPolicy { max_gap: gap }).unwrap();
            let total = p.count(SlotFlag::Direct) + p.count(SlotFlag::Imputed) + p.count(SlotFlag::Missing);
            prop_assert_eq!(total, 144);
            prop_assert_eq!(p.completeness(), p.count(SlotFlag::Direct) as f64 / 144.0);
            let wider = build_day_profile(&a, 1, day(), &g, ImputationPolicy { max_gap: gap + 1 }).unwrap();
            prop_assert!(wider.count(SlotFlag::Missing) <= p.count(SlotFlag::Missing));
            prop_assert_eq!(build_day_profile(&a, 1, day(), &g, ImputationPolicy { max_gap: gap }).unwrap(), p);
        }

        #[test]
        fn on_grid_archive_resamples_to_itself(values in proptest::collection::vec(0u32..40, 144)) {
            let rows = values.iter().enumerate().map(|(s, v)| at(s as i64 * 10, *v)).collect();
            let p = build_day_profile(&archive(rows), 1, day(), &utc_grid(), ImputationPolicy::default()).unwrap();
            prop_assert_eq!(p.values(), values.as_slice());
        }
    }
}
