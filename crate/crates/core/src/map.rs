//! Daily traffic map as GeoJSON, plus a static HTML rendering.
//!
//! Circle radius grows with the square root of traffic so circle area is
//! proportional to traffic: `r = 3 + 27·sqrt(traffic / max_traffic)` pixels.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde_json::{json, Value};
use thiserror::Error;

use crate::flows::FlowSummary;
use crate::ingest::SnapshotArchive;

pub const R_MIN: f64 = 3.0;
pub const R_MAX: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("no coordinates for station(s) {0:?}")]
    UnknownCoordinates(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationCoord {
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Name and position of every station, taken from its latest snapshot.
pub fn station_coords(archive: &SnapshotArchive) -> BTreeMap<u32, StationCoord> {
    archive
        .rows()
        .iter()
        .map(|r| (r.station_id, StationCoord { name: r.station_name.clone(), latitude: r.latitude, longitude: r.longitude }))
        .collect()
}

pub fn radius_px(traffic: u64, max_traffic: u64) -> f64 {
    if max_traffic == 0 {
        return R_MIN;
    }
    R_MIN + (R_MAX - R_MIN) * (traffic as f64 / max_traffic as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFeature {
    pub station_id: u32,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub traffic_level: u64,
    pub radius_px: f64,
}

/// Features for the rows of `date`, ordered by station id.
pub fn map_features(
    table: &[FlowSummary],
    date: NaiveDate,
    coords: &BTreeMap<u32, StationCoord>,
) -> Result<Vec<MapFeature>, MapError> {
    let mut rows: Vec<&FlowSummary> = table.iter().filter(|r| r.date == date).collect();
    rows.sort_by_key(|r| r.station_id);
    let unknown: Vec<u32> = rows.iter().map(|r| r.station_id).filter(|id| !coords.contains_key(id)).collect();
    if !unknown.is_empty() {
        return Err(MapError::UnknownCoordinates(unknown));
    }
    let max = rows.iter().map(|r| r.traffic_level).max().unwrap_or(0);
    Ok(rows
        .into_iter()
        .map(|r| {
            let c = &coords[&r.station_id];
            MapFeature {
                station_id: r.station_id,
                name: c.name.clone(),
                latitude: c.latitude,
                longitude: c.longitude,
                traffic_level: r.traffic_level,
                radius_px: radius_px(r.traffic_level, max),
            }
        })
        .collect())
}

pub fn feature_collection(features: &[MapFeature], date: NaiveDate) -> Value {
    let features: Vec<Value> = features
        .iter()
        .map(|f| {
            json!({
                "type": "Feature",
                "id": f.station_id,
                "geometry": { "type": "Point", "coordinates": [f.longitude, f.latitude] },
                "properties": {
                    "station_id": f.station_id,
                    "name": f.name,
                    "date": date.to_string(),
                    "traffic_level": f.traffic_level,
                    "radius_px": f.radius_px,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// GeoJSON FeatureCollection of one day's traffic.
pub fn export_map(
    table: &[FlowSummary],
    date: NaiveDate,
    coords: &BTreeMap<u32, StationCoord>,
) -> Result<String, MapError> {
    let features = map_features(table, date, coords)?;
    let mut text = serde_json::to_string_pretty(&feature_collection(&features, date)).expect("JSON values serialize");
    text.push('\n');
    Ok(text)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained page drawing the stations as orange circles on a plain
/// equirectangular canvas. No scripts, no tiles.
pub fn render_html(features: &[MapFeature], date: NaiveDate) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const PAD: f64 = 40.0;
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for f in features {
        lat0 = lat0.min(f.latitude);
        lat1 = lat1.max(f.latitude);
        lon0 = lon0.min(f.longitude);
        lon1 = lon1.max(f.longitude);
    }
    let mid_lat = if features.is_empty() { 0.0 } else { (lat0 + lat1) / 2.0 };
    let x_scale = mid_lat.to_radians().cos();
    let span = ((lon1 - lon0) * x_scale).max(lat1 - lat0).max(1e-6);
    let k = (W.min(H) - 2.0 * PAD) / span;

    let mut circles = String::new();
    let mut order: Vec<&MapFeature> = features.iter().collect();
    order.sort_by(|a, b| b.radius_px.total_cmp(&a.radius_px).then(a.station_id.cmp(&b.station_id)));
    for f in order {
        let x = PAD + (f.longitude - lon0) * x_scale * k;
        let y = H - PAD - (f.latitude - lat0) * k;
        circles.push_str(&format!(
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"{:.2}\" fill=\"orange\" fill-opacity=\"0.6\" stroke=\"#c60\"><title>{} ({}): {}</title></circle>\n",
            f.radius_px,
            escape(&f.name),
            f.station_id,
            f.traffic_level
        ));
    }
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Station traffic {date}</title></head>\n<body>\n\
         <h1>Station traffic {date}</h1>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         style=\"background:#f4f4f0\">\n{circles}</svg>\n</body></html>\n"
    )
}
