use chrono::{DateTime, Utc};
use serde_json::{Map, Value};

use super::{IngestError, RejectReason, Rejection, StationSnapshot};

/// Result of parsing one feed document: the accepted snapshots plus one
/// rejection per record that could not be used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedBatch {
    pub snapshots: Vec<StationSnapshot>,
    pub rejections: Vec<Rejection>,
}

const REQUIRED: [&str; 7] = [
    "number",
    "name",
    "position",
    "bike_stands",
    "available_bike_stands",
    "available_bikes",
    "last_update",
];

/// Parses a JCDecaux open-data station list.
///
/// The document must be a JSON array. Records with missing or ill-typed fields,
/// or that violate a snapshot invariant, are rejected one by one; the rest are
/// kept in document order.
pub fn parse_feed_document(raw: &str) -> Result<FeedBatch, IngestError> {
    let doc: Value = serde_json::from_str(raw).map_err(|e| IngestError::Parse {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let Value::Array(items) = doc else {
        return Err(IngestError::Parse { offset: 0, message: "expected a JSON array of stations".into() });
    };

    let mut batch = FeedBatch::default();
    for (index, item) in items.iter().enumerate() {
        match parse_record(item) {
            Ok(snapshot) => match snapshot.validate() {
                Ok(()) => batch.snapshots.push(snapshot),
                Err(msg) => batch.rejections.push(Rejection {
                    position: index,
                    station_id: Some(snapshot.station_id),
                    reason: RejectReason::Invariant(msg),
                }),
            },
            Err(reason) => batch.rejections.push(Rejection {
                position: index,
                station_id: item.get("number").and_then(Value::as_u64).and_then(|n| u32::try_from(n).ok()),
                reason,
            }),
        }
    }
    Ok(batch)
}

fn parse_record(item: &Value) -> Result<StationSnapshot, RejectReason> {
    let Value::Object(obj) = item else {
        return Err(RejectReason::Malformed("record is not a JSON object".into()));
    };
    let mut missing: Vec<String> = REQUIRED
        .iter()
        .filter(|f| obj.get(**f).is_none_or(Value::is_null))
        .map(|f| f.to_string())
        .collect();
    if let Some(Value::Object(pos)) = obj.get("position") {
        for sub in ["lat", "lng"] {
            if pos.get(sub).is_none_or(Value::is_null) {
                missing.push(format!("position.{sub}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(RejectReason::MissingFields(missing));
    }

    let position = obj["position"]
        .as_object()
        .ok_or_else(|| RejectReason::Malformed("position is not an object".into()))?;
    let last_update = int_field(obj, "last_update")?;
    let observed_at = DateTime::<Utc>::from_timestamp_millis(last_update)
        .ok_or_else(|| RejectReason::Malformed(format!("last_update {last_update} out of range")))?;

    Ok(StationSnapshot {
        station_id: count_field(obj, "number")?,
        station_name: obj["name"]
            .as_str()
            .ok_or_else(|| RejectReason::Malformed("name is not a string".into()))?
            .to_string(),
        latitude: float_field(position, "lat")?,
        longitude: float_field(position, "lng")?,
        total_stands: count_field(obj, "bike_stands")?,
        available_stands: count_field(obj, "available_bike_stands")?,
        available_bikes: count_field(obj, "available_bikes")?,
        observed_at,
    })
}

fn int_field(obj: &Map<String, Value>, name: &str) -> Result<i64, RejectReason> {
    obj[name]
        .as_i64()
        .ok_or_else(|| RejectReason::Malformed(format!("{name} is not an integer: {}", obj[name])))
}

fn count_field(obj: &Map<String, Value>, name: &str) -> Result<u32, RejectReason> {
    let v = int_field(obj, name)?;
    u32::try_from(v).map_err(|_| RejectReason::Invariant(format!("{name} must be a non-negative count, got {v}")))
}

fn float_field(obj: &Map<String, Value>, name: &str) -> Result<f64, RejectReason> {
    obj[name]
        .as_f64()
        .ok_or_else(|| RejectReason::Malformed(format!("position.{name} is not a number: {}", obj[name])))
}

/// serde_json reports 1-based line/column; convert to a 0-based byte offset.
fn byte_offset(raw: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return raw.len();
    }
    let preceding: usize = raw.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (preceding + column.saturating_sub(1)).min(raw.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(number: i64, bikes: i64, stands: i64, total: i64) -> String {
        format!(
            r#"{{"number":{number},"contract_name":"dublin","name":"STATION {number}","address":"x",
            "position":{{"lat":53.3409,"lng":-6.2625}},"banking":true,"bonus":false,"status":"OPEN",
            "bike_stands":{total},"available_bike_stands":{stands},"available_bikes":{bikes},
            "last_update":1473766200000}}"#
        )
    }

    #[test]
    fn empty_array_is_empty() {
        assert_eq!(parse_feed_document("[]").unwrap(), FeedBatch::default());
    }

    #[test]
    fn boundary_equality_is_accepted() {
        let batch = parse_feed_document(&format!("[{}]", station(5, 3, 17, 20))).unwrap();
        assert!(batch.rejections.is_empty());
        let s = &batch.snapshots[0];
        assert_eq!((s.station_id, s.available_bikes, s.available_stands, s.total_stands), (5, 3, 17, 20));
        assert_eq!(s.station_name, "STATION 5");
        assert_eq!(s.observed_at.timestamp_millis(), 1_473_766_200_000);
        assert_eq!((s.latitude, s.longitude), (53.3409, -6.2625));
    }

    #[test]
    fn over_capacity_record_is_rejected_alone() {
        let doc = format!("[{},{},{}]", station(1, 2, 3, 5), station(2, 25, 0, 20), station(3, 0, 4, 4));
        let batch = parse_feed_document(&doc).unwrap();
        let kept: Vec<u32> = batch.snapshots.iter().map(|s| s.station_id).collect();
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(batch.rejections.len(), 1);
        assert_eq!(batch.rejections[0].position, 1);
        assert_eq!(batch.rejections[0].station_id, Some(2));
        assert!(matches!(batch.rejections[0].reason, RejectReason::Invariant(_)));
    }

    #[test]
    fn missing_fields_are_listed() {
        let doc = r#"[{"number":9,"name":"A","position":{"lat":1.0},"bike_stands":3,"available_bikes":1,"last_update":null}]"#;
        let batch = parse_feed_document(doc).unwrap();
        assert!(batch.snapshots.is_empty());
        let RejectReason::MissingFields(fields) = &batch.rejections[0].reason else {
            panic!("unexpected {:?}", batch.rejections[0].reason)
        };
        assert_eq!(fields, &["available_bike_stands", "last_update", "position.lng"]);
    }

    #[test]
    fn negative_count_is_rejected() {
        let batch = parse_feed_document(&format!("[{}]", station(4, -1, 3, 5))).unwrap();
        assert!(matches!(batch.rejections[0].reason, RejectReason::Invariant(_)));
    }

    #[test]
    fn malformed_document_reports_byte_offset() {
        let raw = "[\n  {\"number\": 1,,}\n]";
        let err = parse_feed_document(raw).unwrap_err();
        let IngestError::Parse { offset, .. } = err else { panic!("{err}") };
        assert_eq!(&raw[offset..offset + 1], ",");
        assert_eq!(offset, raw.find(",,").unwrap() + 1);
    }

    #[test]
    fn non_array_document_is_a_parse_error() {
        assert!(matches!(parse_feed_document("{}"), Err(IngestError::Parse { .. })));
    }
}
