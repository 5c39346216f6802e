//! Reading cluster models in calendar terms: membership by day of week,
//! day-type labels per cluster, and checking new days against those labels.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use csv::{Terminator, WriterBuilder};
use thiserror::Error;

use crate::cluster::{predict, ClusterError, ClusterModel};
use crate::grid::DayProfile;

#[derive(Debug, Error, PartialEq)]
pub enum PatternError {
    #[error("{dates} dates for {assignments} cluster assignments")]
    Misaligned { dates: usize, assignments: usize },
    #[error("cross-tab is empty")]
    EmptyTable,
    #[error("no new profiles to check")]
    NoProfiles,
    #[error("day-type map covers {map} clusters but the model has {model}")]
    MapMismatch { map: usize, model: usize },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

const WEEKDAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

/// Calendar class of a day after holiday remapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DayType {
    Weekday,
    Saturday,
    SundayLike,
    /// Saturday and Sunday-like merged, under [`DayTypeScheme::WeekdayWeekend`].
    Weekend,
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DayType::Weekday => "weekday",
            DayType::Saturday => "saturday",
            DayType::SundayLike => "sunday-like",
            DayType::Weekend => "weekend",
        })
    }
}

/// Whether Saturday stays a day type of its own or joins Sunday as "weekend".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DayTypeScheme {
    #[default]
    SplitWeekend,
    WeekdayWeekend,
}

impl DayTypeScheme {
    pub fn apply(self, t: DayType) -> DayType {
        match (self, t) {
            (DayTypeScheme::WeekdayWeekend, DayType::Saturday | DayType::SundayLike) => DayType::Weekend,
            _ => t,
        }
    }

    /// Day types in tie-break priority order.
    fn labels(self) -> &'static [DayType] {
        match self {
            DayTypeScheme::SplitWeekend => &[DayType::Weekday, DayType::Saturday, DayType::SundayLike],
            DayTypeScheme::WeekdayWeekend => &[DayType::Weekday, DayType::Weekend],
        }
    }
}

/// Holidays count as Sunday-like; otherwise Mon–Fri are weekdays.
pub fn effective_day_type(date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> DayType {
    if holidays.contains(&date) {
        return DayType::SundayLike;
    }
    match date.weekday() {
        Weekday::Sat => DayType::Saturday,
        Weekday::Sun => DayType::SundayLike,
        _ => DayType::Weekday,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolidayNote {
    pub date: NaiveDate,
    pub cluster: usize,
    pub weekday: Weekday,
}

/// Cluster × day-of-week membership counts, Monday first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeekdayCrossTab {
    pub counts: Vec<[usize; 7]>,
    pub holiday_notes: Vec<HolidayNote>,
}

impl WeekdayCrossTab {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> [usize; 7] {
        let mut cols = [0; 7];
        for row in &self.counts {
            for (c, v) in cols.iter_mut().zip(row) {
                *c += v;
            }
        }
        cols
    }

    /// Counts per effective day type: weekday columns minus listed holidays,
    /// which move to Sunday-like.
    fn effective_counts(&self, cluster: usize, holidays: &BTreeSet<NaiveDate>) -> [(DayType, usize); 3] {
        let row = &self.counts[cluster];
        let mut weekday: usize = row[..5].iter().sum();
        let mut saturday = row[5];
        let mut sunday = row[6];
        for note in self.holiday_notes.iter().filter(|n| n.cluster == cluster && holidays.contains(&n.date)) {
            match note.weekday {
                Weekday::Sat => saturday -= 1,
                Weekday::Sun => continue,
                _ => weekday -= 1,
            }
            sunday += 1;
        }
        [(DayType::Weekday, weekday), (DayType::Saturday, saturday), (DayType::SundayLike, sunday)]
    }

    /// Aligned text table in the cluster-by-weekday layout; blank cells are zeros.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}", "Cluster");
        for name in WEEKDAY_NAMES {
            out.push_str(&format!("{name:>5}"));
        }
        out.push('\n');
        for (c, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:<10}", format!("Cluster {c}")));
            for v in row {
                if *v == 0 {
                    out.push_str(&format!("{:>5}", ""));
                } else {
                    out.push_str(&format!("{v:>5}"));
                }
            }
            out.push('\n');
        }
        for n in &self.holiday_notes {
            out.push_str(&format!("holiday {} ({:?}) in cluster {}\n", n.date, n.weekday, n.cluster));
        }
        out
    }

    pub fn write_csv(&self, writer: impl Write) -> std::io::Result<()> {
        let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
        let mut header = vec!["cluster"];
        header.extend(WEEKDAY_NAMES);
        csv.write_record(&header)?;
        for (c, row) in self.counts.iter().enumerate() {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(usize::to_string));
            csv.write_record(&rec)?;
        }
        csv.flush()
    }
}

pub fn crosstab(
    model: &ClusterModel,
    dates: &[NaiveDate],
    holidays: &BTreeSet<NaiveDate>,
) -> Result<WeekdayCrossTab, PatternError> {
    if dates.len() != model.assignments.len() {
        return Err(PatternError::Misaligned { dates: dates.len(), assignments: model.assignments.len() });
    }
    let mut tab = WeekdayCrossTab { counts: vec![[0; 7]; model.k], holiday_notes: Vec::new() };
    for (&date, &cluster) in dates.iter().zip(&model.assignments) {
        let weekday = date.weekday();
        tab.counts[cluster][weekday.num_days_from_monday() as usize] += 1;
        if holidays.contains(&date) {
            tab.holiday_notes.push(HolidayNote { date, cluster, weekday });
        }
    }
    Ok(tab)
}

/// Dominant day type per cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayTypeMap {
    pub labels: Vec<DayType>,
    pub scheme: DayTypeScheme,
}

impl DayTypeMap {
    /// Clusters carrying the day type of `date`.
    pub fn expected_clusters(&self, date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> Vec<usize> {
        let wanted = self.scheme.apply(effective_day_type(date, holidays));
        self.labels.iter().enumerate().filter(|(_, l)| **l == wanted).map(|(c, _)| c).collect()
    }
}

/// Labels each cluster by the majority effective day type of its members.
/// Ties resolve to weekday, then Saturday. An empty cluster is labelled weekday.
pub fn derive_day_type_map(
    tab: &WeekdayCrossTab,
    holidays: &BTreeSet<NaiveDate>,
    scheme: DayTypeScheme,
) -> Result<DayTypeMap, PatternError> {
    if tab.total() == 0 {
        return Err(PatternError::EmptyTable);
    }
    let labels = (0..tab.counts.len())
        .map(|c| {
            let counts = tab.effective_counts(c, holidays);
            let mut best = (scheme.labels()[0], 0usize);
            for &label in scheme.labels() {
                let n: usize = counts.iter().filter(|(t, _)| scheme.apply(*t) == label).map(|(_, n)| n).sum();
                if n > best.1 {
                    best = (label, n);
                }
            }
            best.0
        })
        .collect();
    Ok(DayTypeMap { labels, scheme })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub station_id: u32,
    pub date: NaiveDate,
    pub day_type: DayType,
    pub assigned: usize,
    pub distance: f64,
    pub expected: Vec<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
    pub matches: usize,
}

impl ConsistencyReport {
    pub fn match_rate(&self) -> f64 {
        self.matches as f64 / self.rows.len() as f64
    }

    pub fn write_csv(&self, writer: impl Write) -> std::io::Result<()> {
        let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
        csv.write_record(["station_id", "date", "day_type", "assigned", "distance", "expected", "match"])?;
        for r in &self.rows {
            let expected: Vec<String> = r.expected.iter().map(usize::to_string).collect();
            csv.write_record([
                r.station_id.to_string(),
                r.date.to_string(),
                r.day_type.to_string(),
                r.assigned.to_string(),
                r.distance.to_string(),
                expected.join(" "),
                r.matched.to_string(),
            ])?;
        }
        csv.flush()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12}{:<13}{:>9}{:>11}{:>10}{:>7}\n",
            "date", "day type", "cluster", "distance", "expected", "match"
        );
        for r in &self.rows {
            let expected: Vec<String> = r.expected.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{:<12}{:<13}{:>9}{:>11.2}{:>10}{:>7}\n",
                r.date.to_string(),
                r.day_type.to_string(),
                r.assigned,
                r.distance,
                if expected.is_empty() { "-".to_string() } else { expected.join(",") },
                if r.matched { "yes" } else { "no" }
            ));
        }
        out.push_str(&format!("match rate {}/{} = {:.3}\n", self.matches, self.rows.len(), self.match_rate()));
        out
    }
}

/// Assigns each new day to its nearest centroid and checks that the cluster
/// carries the day's effective day type.
pub fn consistency_check(
    profiles: &[DayProfile],
    model: &ClusterModel,
    map: &DayTypeMap,
    holidays: &BTreeSet<NaiveDate>,
) -> Result<ConsistencyReport, PatternError> {
    if profiles.is_empty() {
        return Err(PatternError::NoProfiles);
    }
    if map.labels.len() != model.k {
        return Err(PatternError::MapMismatch { map: map.labels.len(), model: model.k });
    }
    let mut rows = Vec::with_capacity(profiles.len());
    for p in profiles {
        let (assigned, distance) = predict(p, model)?;
        let expected = map.expected_clusters(p.date, holidays);
        let matched = expected.contains(&assigned);
        rows.push(ConsistencyRow {
            station_id: p.station_id,
            date: p.date,
            day_type: map.scheme.apply(effective_day_type(p.date, holidays)),
            assigned,
            distance,
            expected,
            matched,
        });
    }
    let matches = rows.iter().filter(|r| r.matched).count();
    Ok(ConsistencyReport { rows, matches })
}
