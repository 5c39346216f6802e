//! Deterministic synthetic schemes with known day-type structure.
//!
//! Each station follows an archetype: a set of daily template curves, a
//! weekday → template schedule, and Gaussian noise. Values are emitted at exact
//! slot start times, so resampling a generated archive returns the generated
//! values unchanged.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::grid::{DayProfile, TimeGrid};
use crate::ingest::{SnapshotArchive, StationSnapshot};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("duplicate station id {0}")]
    DuplicateStation(u32),
    #[error("unknown archetype {0:?}")]
    UnknownArchetype(String),
    #[error("archetype {archetype}: {message}")]
    InvalidArchetype { archetype: String, message: String },
    #[error("scenario: {0}")]
    Scenario(String),
}

/// A daily curve as piecewise-linear anchors `(hour of day, bikes)` spanning 0–24 h.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTemplate {
    pub name: String,
    pub anchors: Vec<(f64, f64)>,
}

impl DayTemplate {
    fn new(name: &str, anchors: &[(f64, f64)]) -> Self {
        DayTemplate { name: name.to_string(), anchors: anchors.to_vec() }
    }

    fn at(&self, hour: f64) -> f64 {
        let a = &self.anchors;
        let i = a.partition_point(|(h, _)| *h <= hour).clamp(1, a.len() - 1);
        let ((h0, v0), (h1, v1)) = (a[i - 1], a[i]);
        if h1 == h0 {
            return v1;
        }
        v0 + (v1 - v0) * (hour - h0) / (h1 - h0)
    }

    /// Integer curve sampled at each slot start of the grid.
    pub fn render(&self, grid: &TimeGrid) -> Vec<u32> {
        let step = f64::from(grid.step_minutes()) / 60.0;
        (0..grid.slots_per_day()).map(|s| self.at(s as f64 * step).round().max(0.0) as u32).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationArchetype {
    pub name: String,
    pub capacity: u32,
    pub templates: Vec<DayTemplate>,
    /// Template index per weekday, Monday first.
    pub schedule: [usize; 7],
    /// Template used on listed holidays.
    pub holiday_template: usize,
    /// Standard deviation of the per-slot Gaussian noise, in bikes.
    pub noise_amplitude: f64,
}

impl StationArchetype {
    pub fn with_noise(mut self, amplitude: f64) -> Self {
        self.noise_amplitude = amplitude;
        self
    }

    pub fn template_for(&self, date: NaiveDate, holidays: &BTreeSet<NaiveDate>) -> usize {
        if holidays.contains(&date) {
            self.holiday_template
        } else {
            self.schedule[date.weekday().num_days_from_monday() as usize]
        }
    }

    /// Max minus min over every template value.
    pub fn template_range(&self) -> f64 {
        let values = self.templates.iter().flat_map(|t| t.anchors.iter().map(|(_, v)| *v));
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |message: String| Err(SynthError::InvalidArchetype { archetype: self.name.clone(), message });
        if self.templates.is_empty() {
            return bad("no templates".into());
        }
        if self.schedule.iter().chain([&self.holiday_template]).any(|t| *t >= self.templates.len()) {
            return bad("schedule refers to a missing template".into());
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return bad("noise amplitude must be finite and non-negative".into());
        }
        for t in &self.templates {
            let hours: Vec<f64> = t.anchors.iter().map(|(h, _)| *h).collect();
            if hours.len() < 2 || hours[0] != 0.0 || hours[hours.len() - 1] != 24.0 {
                return bad(format!("template {} must span 0 to 24 h", t.name));
            }
            if hours.windows(2).any(|w| w[1] < w[0]) {
                return bad(format!("template {} anchors out of order", t.name));
            }
            if t.anchors.iter().any(|(_, v)| !(0.0..=f64::from(self.capacity)).contains(v)) {
                return bad(format!("template {} leaves [0, {}]", t.name, self.capacity));
            }
        }
        Ok(())
    }
}

/// Busy weekdays, idle weekends, next to a main-line rail terminus.
///
/// Weekday: full overnight, commuters empty the station from 07:30 and it sits
/// at zero through business hours (09:00–17:30), refilling to capacity from
/// 17:30 and holding there until morning. Saturday and Sunday share one flat
/// curve.
pub fn commuter_rail() -> StationArchetype {
    let weekday = DayTemplate::new("weekday", &[
        (0.0, 38.0),
        (7.5, 38.0),
        (9.0, 0.0),
        (17.5, 0.0),
        (18.5, 38.0),
        (24.0, 38.0),
    ]);
    let weekend = DayTemplate::new("weekend", &[(0.0, 30.0), (24.0, 30.0)]);
    StationArchetype {
        name: "commuter_rail".into(),
        capacity: 40,
        templates: vec![weekday, weekend],
        schedule: [0, 0, 0, 0, 0, 1, 1],
        holiday_template: 1,
        noise_amplitude: 1.0,
    }
}

/// Mixed residential/business area, busy every day with four distinct shapes.
///
/// Mon–Wed and Thu–Fri agree until 17:00; afterwards Mon–Wed refills and stays
/// high while Thu–Fri evenings drain. Saturday peaks near 09:30 then declines,
/// fast until 15:00 and slowly after. Sunday stays low until 09:30, rises to
/// 11:30, dips around midday and climbs gently to midnight.
pub fn mixed_residential_business() -> StationArchetype {
    let morning = [(0.0, 24.0), (6.5, 24.0), (9.0, 6.0), (12.0, 9.0), (17.0, 8.0)];
    let mut early_week = morning.to_vec();
    early_week.extend([(18.5, 32.0), (24.0, 30.0)]);
    let mut late_week = morning.to_vec();
    late_week.extend([(18.5, 18.0), (20.5, 8.0), (24.0, 6.0)]);
    StationArchetype {
        name: "mixed_residential_business".into(),
        capacity: 40,
        templates: vec![
            DayTemplate::new("mon-wed", &early_week),
            DayTemplate::new("thu-fri", &late_week),
            DayTemplate::new("saturday", &[(0.0, 10.0), (7.0, 12.0), (9.5, 30.0), (15.0, 12.0), (24.0, 4.0)]),
            DayTemplate::new("sunday", &[(0.0, 6.0), (9.5, 6.0), (11.5, 22.0), (13.0, 18.0), (24.0, 26.0)]),
        ],
        schedule: [0, 0, 0, 1, 1, 2, 3],
        holiday_template: 3,
        noise_amplitude: 1.0,
    }
}

pub fn builtin_archetypes() -> Vec<StationArchetype> {
    vec![commuter_rail(), mixed_residential_business()]
}

pub fn archetype_by_name(name: &str) -> Result<StationArchetype, SynthError> {
    builtin_archetypes().into_iter().find(|a| a.name == name).ok_or_else(|| SynthError::UnknownArchetype(name.into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStation {
    pub station_id: u32,
    pub name: String,
    pub archetype: StationArchetype,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub stations: Vec<SyntheticStation>,
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub holidays: BTreeSet<NaiveDate>,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut ids = HashSet::new();
        for s in &self.stations {
            if !ids.insert(s.station_id) {
                return Err(SynthError::DuplicateStation(s.station_id));
            }
            if s.station_id == 0 {
                return Err(SynthError::Scenario("station ids must be positive".into()));
            }
            s.archetype.validate()?;
        }
        Ok(())
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.first.iter_days().take_while(|d| *d <= self.last)
    }

    /// Reads a TOML scenario:
    ///
    /// ```toml
    /// seed = 7
    /// first = "2016-09-13"
    /// last = "2016-10-17"
    /// holidays = ["2016-10-31"]
    ///
    /// [[station]]
    /// id = 1
    /// name = "HEUSTON STATION"
    /// archetype = "commuter_rail"
    /// latitude = 53.3466
    /// longitude = -6.2925
    /// noise = 2.0          # optional
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            seed: u64,
            first: NaiveDate,
            last: NaiveDate,
            #[serde(default)]
            holidays: Vec<NaiveDate>,
            #[serde(default)]
            station: Vec<Station>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Station {
            id: u32,
            name: String,
            archetype: String,
            latitude: f64,
            longitude: f64,
            noise: Option<f64>,
        }
        let file: File = toml::from_str(text).map_err(|e| SynthError::Scenario(e.to_string()))?;
        let stations = file
            .station
            .into_iter()
            .map(|s| {
                let mut archetype = archetype_by_name(&s.archetype)?;
                if let Some(noise) = s.noise {
                    archetype.noise_amplitude = noise;
                }
                Ok(SyntheticStation {
                    station_id: s.id,
                    name: s.name,
                    archetype,
                    latitude: s.latitude,
                    longitude: s.longitude,
                })
            })
            .collect::<Result<_, SynthError>>()?;
        let scenario = SyntheticScenario {
            stations,
            first: file.first,
            last: file.last,
            holidays: file.holidays.into_iter().collect(),
            seed: file.seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Scenario(format!("{}: {e}", path.display())))?;
        SyntheticScenario::from_toml(&text)
    }
}

/// One generated station-day with the template that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDay {
    pub station_id: u32,
    pub date: NaiveDate,
    pub template: usize,
    pub values: Vec<u32>,
}

impl SyntheticDay {
    pub fn profile(&self) -> DayProfile {
        DayProfile::observed(self.station_id, self.date, self.values.clone())
    }
}

/// Noise stream for one station-day, independent of generation order.
fn day_rng(seed: u64, station_id: u32, date: NaiveDate) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(station_id) << 32) | u64::from(date.num_days_from_ce() as u32));
    rng
}

/// Every station-day of the scenario, stations in input order, dates ascending.
pub fn generate_days(scenario: &SyntheticScenario, grid: &TimeGrid) -> Result<Vec<SyntheticDay>, SynthError> {
    scenario.validate()?;
    let mut days = Vec::new();
    for station in &scenario.stations {
        let a = &station.archetype;
        let curves: Vec<Vec<u32>> = a.templates.iter().map(|t| t.render(grid)).collect();
        let noise = Normal::new(0.0, a.noise_amplitude).map_err(|e| SynthError::InvalidArchetype {
            archetype: a.name.clone(),
            message: e.to_string(),
        })?;
        for date in scenario.dates() {
            let template = a.template_for(date, &scenario.holidays);
            let mut rng = day_rng(scenario.seed, station.station_id, date);
            let values = curves[template]
                .iter()
                .map(|&base| {
                    if a.noise_amplitude == 0.0 {
                        return base;
                    }
                    let v = (f64::from(base) + noise.sample(&mut rng)).round();
                    v.clamp(0.0, f64::from(a.capacity)) as u32
                })
                .collect();
            days.push(SyntheticDay { station_id: station.station_id, date, template, values });
        }
    }
    Ok(days)
}

/// Snapshots for every station-slot, with `available_stands = capacity − bikes`.
/// Slots whose local time does not exist (spring-forward) are skipped.
pub fn generate_archive(scenario: &SyntheticScenario, grid: &TimeGrid) -> Result<SnapshotArchive, SynthError> {
    let days = generate_days(scenario, grid)?;
    let mut rows = Vec::with_capacity(days.len() * grid.slots_per_day());
    for day in &days {
        let station = scenario.stations.iter().find(|s| s.station_id == day.station_id).expect("generated station");
        for (slot, &bikes) in day.values.iter().enumerate() {
            let Some(observed_at) = grid.slot_start(day.date, slot) else { continue };
            rows.push(StationSnapshot {
                station_id: station.station_id,
                station_name: station.name.clone(),
                latitude: station.latitude,
                longitude: station.longitude,
                total_stands: station.archetype.capacity,
                available_stands: station.archetype.capacity - bikes,
                available_bikes: bikes,
                observed_at,
            });
        }
    }
    let (archive, _) = SnapshotArchive::from_rows(rows, "synthetic");
    Ok(archive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::infer_flows;
    use crate::grid::{build_day_profile, ImputationPolicy};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn scenario(archetype: StationArchetype, first: NaiveDate, last: NaiveDate) -> SyntheticScenario {
        SyntheticScenario {
            stations: vec![SyntheticStation {
                station_id: 3,
                name: "TEST".into(),
                archetype,
                latitude: 53.33,
                longitude: -6.26,
            }],
            first,
            last,
            holidays: BTreeSet::new(),
            seed: 11,
        }
    }

    #[test]
    fn builtins_are_valid() {
        for a in builtin_archetypes() {
            a.validate().unwrap();
        }
        assert!(matches!(archetype_by_name("tram"), Err(SynthError::UnknownArchetype(_))));
    }

    #[test]
    fn commuter_weekday_has_a_business_hours_zero_plateau() {
        let grid = TimeGrid::default();
        let curve = commuter_rail().templates[0].render(&grid);
        // 09:00 is slot 54, 17:00 slot 102.
        assert!(curve[54..=102].iter().all(|v| *v == 0));
        assert!(curve[53] > 0 && curve[0] == 38 && curve[143] == 38);
    }

    #[test]
    fn commuter_weekend_is_flat_and_shared() {
        let a = commuter_rail();
        assert_eq!(a.schedule[5], a.schedule[6]);
        let curve = a.templates[a.schedule[5]].render(&TimeGrid::default());
        assert!(curve.iter().all(|v| *v == curve[0]));
    }

    #[test]
    fn mixed_weekday_shapes_agree_until_five() {
        let a = mixed_residential_business();
        let grid = TimeGrid::default();
        let (early, late) = (a.templates[0].render(&grid), a.templates[1].render(&grid));
        assert_eq!(&early[..=102], &late[..=102]);
        assert!(early[111..].iter().zip(&late[111..]).all(|(e, l)| e > l));
    }

    #[test]
    fn noiseless_days_equal_templates() {
        let grid = TimeGrid::default();
        let s = scenario(mixed_residential_business().with_noise(0.0), d(2016, 9, 12), d(2016, 9, 18));
        let days = generate_days(&s, &grid).unwrap();
        let a = &s.stations[0].archetype;
        for day in &days {
            assert_eq!(day.values, a.templates[day.template].render(&grid));
        }
        let templates: Vec<usize> = days.iter().map(|d| d.template).collect();
        assert_eq!(templates, vec![0, 0, 0, 1, 1, 2, 3]);
    }

    #[test]
    fn same_seed_same_archive() {
        let grid = TimeGrid::default();
        let s = scenario(commuter_rail().with_noise(3.0), d(2016, 9, 12), d(2016, 9, 25));
        let a = generate_archive(&s, &grid).unwrap();
        assert_eq!(a, generate_archive(&s, &grid).unwrap());
        assert!(a.rows().iter().all(|r| r.validate().is_ok()));
        let other = SyntheticScenario { seed: 12, ..s };
        assert_ne!(a, generate_archive(&other, &grid).unwrap());
    }

    #[test]
    fn holidays_use_the_holiday_template() {
        let grid = TimeGrid::default();
        let mut s = scenario(commuter_rail(), d(2016, 10, 31), d(2016, 11, 1));
        s.holidays.insert(d(2016, 10, 31));
        let days = generate_days(&s, &grid).unwrap();
        assert_eq!((days[0].template, days[1].template), (1, 0));
    }

    #[test]
    fn generated_archive_resamples_to_generated_values() {
        let grid = TimeGrid::default();
        // Includes the 25-hour day when Irish clocks went back.
        let s = scenario(mixed_residential_business().with_noise(2.0), d(2016, 10, 28), d(2016, 11, 1));
        let archive = generate_archive(&s, &grid).unwrap();
        for day in generate_days(&s, &grid).unwrap() {
            let p = build_day_profile(&archive, 3, day.date, &grid, ImputationPolicy::default()).unwrap();
            assert_eq!(p.values(), day.values.as_slice());
            assert_eq!(p.completeness(), 1.0);
        }
    }

    #[test]
    fn commuter_weekday_flows() {
        let grid = TimeGrid::default();
        let s = scenario(commuter_rail().with_noise(0.0), d(2016, 9, 14), d(2016, 9, 14));
        let day = &generate_days(&s, &grid).unwrap()[0];
        let f = infer_flows(&day.profile()).unwrap();
        assert_eq!((f.check_ins, f.check_outs), (38, 38));
        // Check-outs happen before the plateau, check-ins after 17:30.
        let v = &day.values;
        let outs_before: u32 = (1..=54).map(|i| v[i - 1].saturating_sub(v[i])).sum();
        let ins_after: u32 = (105..144).map(|i| v[i].saturating_sub(v[i - 1])).sum();
        assert_eq!((outs_before, ins_after), (38, 38));
    }

    #[test]
    fn scenario_file() {
        let text = r#"
            seed = 7
            first = "2016-09-13"
            last = "2016-09-20"
            holidays = ["2016-10-31"]

            [[station]]
            id = 1
            name = "HEUSTON STATION"
            archetype = "commuter_rail"
            latitude = 53.3466
            longitude = -6.2925
            noise = 2.5

            [[station]]
            id = 2
            name = "CHARLEMONT PLACE"
            archetype = "mixed_residential_business"
            latitude = 53.3307
            longitude = -6.2602
        "#;
        let s = SyntheticScenario::from_toml(text).unwrap();
        assert_eq!(s.stations.len(), 2);
        assert_eq!(s.stations[0].archetype.noise_amplitude, 2.5);
        assert_eq!(s.stations[1].archetype.noise_amplitude, 1.0);
        assert_eq!(s.dates().count(), 8);
        assert!(s.holidays.contains(&d(2016, 10, 31)));

        let dup = text.replace("id = 2", "id = 1");
        assert_eq!(SyntheticScenario::from_toml(&dup), Err(SynthError::DuplicateStation(1)));
        let unknown = text.replace("\"commuter_rail\"", "\"tram\"");
        assert!(matches!(SyntheticScenario::from_toml(&unknown), Err(SynthError::UnknownArchetype(_))));
    }
}
