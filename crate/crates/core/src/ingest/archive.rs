use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, DurationRound, SecondsFormat, TimeDelta, Utc};
use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use super::poll::SnapshotSink;
use super::{IngestError, RejectReason, Rejection, SnapshotArchive, StationSnapshot};

pub(crate) const HEADER: [&str; 8] = [
    "station_number",
    "station_name",
    "latitude",
    "longitude",
    "total_stands",
    "available_stands",
    "available_bikes",
    "last_update",
];

/// An archive read from CSV together with the rows that were dropped.
#[derive(Debug, Clone)]
pub struct ArchiveRead {
    pub archive: SnapshotArchive,
    /// One entry per rejected line, in line order.
    pub rejections: Vec<Rejection>,
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<ArchiveRead, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    read_archive_from(file, &path.display().to_string())
}

/// Reads an eight-column snapshot CSV. A header line is detected by a
/// non-numeric first field and skipped.
pub fn read_archive_from(reader: impl Read, source: &str) -> Result<ArchiveRead, IngestError> {
    let mut csv = ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut rejections = Vec::new();

    for (index, record) in csv.records().enumerate() {
        let record = record.map_err(|e| IngestError::Csv { path: source.to_string(), message: e.to_string() })?;
        let line = record.position().map_or(index + 1, |p| p.line() as usize);
        if index == 0 && record.get(0).is_some_and(|f| f.trim().parse::<u64>().is_err()) {
            continue;
        }
        match parse_row(&record) {
            Ok(snapshot) => match snapshot.validate() {
                Ok(()) => {
                    lines.push(line);
                    rows.push(snapshot);
                }
                Err(msg) => rejections.push(Rejection {
                    position: line,
                    station_id: Some(snapshot.station_id),
                    reason: RejectReason::Invariant(msg),
                }),
            },
            Err(reason) => rejections.push(Rejection {
                position: line,
                station_id: record.get(0).and_then(|f| f.trim().parse().ok()),
                reason,
            }),
        }
    }

    let station_of: Vec<u32> = rows.iter().map(|r| r.station_id).collect();
    let (archive, dropped) = SnapshotArchive::from_rows(rows, source);
    rejections.extend(dropped.into_iter().map(|i| Rejection {
        position: lines[i],
        station_id: Some(station_of[i]),
        reason: RejectReason::Duplicate,
    }));
    rejections.sort_by_key(|r| r.position);
    Ok(ArchiveRead { archive, rejections })
}

fn parse_row(record: &StringRecord) -> Result<StationSnapshot, RejectReason> {
    if record.len() != HEADER.len() {
        return Err(RejectReason::Arity { expected: HEADER.len(), found: record.len() });
    }
    fn field<T: std::str::FromStr>(record: &StringRecord, i: usize) -> Result<T, RejectReason> {
        let raw = record[i].trim();
        raw.parse().map_err(|_| RejectReason::Malformed(format!("{}: cannot parse {raw:?}", HEADER[i])))
    }
    let latitude: f64 = field(record, 2)?;
    let longitude: f64 = field(record, 3)?;
    if !latitude.is_finite() || !longitude.is_finite() {
        return Err(RejectReason::Malformed("non-finite coordinate".into()));
    }
    Ok(StationSnapshot {
        station_id: field(record, 0)?,
        station_name: record[1].to_string(),
        latitude,
        longitude,
        total_stands: field(record, 4)?,
        available_stands: field(record, 5)?,
        available_bikes: field(record, 6)?,
        observed_at: parse_timestamp(record[7].trim())
            .ok_or_else(|| RejectReason::Malformed(format!("last_update: cannot parse {:?}", &record[7])))?,
    })
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let ts = DateTime::parse_from_rfc3339(raw).ok()?.with_timezone(&Utc);
    ts.duration_trunc(TimeDelta::milliseconds(1)).ok()
}

pub(crate) fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn record_of(row: &StationSnapshot) -> [String; 8] {
    [
        row.station_id.to_string(),
        row.station_name.clone(),
        row.latitude.to_string(),
        row.longitude.to_string(),
        row.total_stands.to_string(),
        row.available_stands.to_string(),
        row.available_bikes.to_string(),
        format_timestamp(&row.observed_at),
    ]
}

/// Writes the archive as CSV with a header line. Returns the number of data rows.
pub fn write_archive(archive: &SnapshotArchive, path: impl AsRef<Path>) -> Result<usize, IngestError> {
    let path = path.as_ref();
    let io_err = |source| IngestError::Io { path: path.display().to_string(), source };
    let mut file = File::create(path).map_err(io_err)?;
    let n = write_archive_to(archive, &mut file).map_err(io_err)?;
    file.sync_all().map_err(io_err)?;
    Ok(n)
}

pub fn write_archive_to(archive: &SnapshotArchive, writer: impl Write) -> std::io::Result<usize> {
    let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(writer);
    csv.write_record(HEADER)?;
    for row in archive.rows() {
        csv.write_record(record_of(row))?;
    }
    csv.flush()?;
    Ok(archive.len())
}

/// Appends snapshots to a CSV archive file, writing the header when the file is
/// new or empty. Rows are appended in arrival order; [`read_archive`] restores
/// the sorted form.
#[derive(Debug)]
pub struct CsvArchiveSink {
    path: String,
    file: File,
}

impl CsvArchiveSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let io_err = |source| IngestError::Io { path: display.clone(), source };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        if file.metadata().map_err(io_err)?.len() == 0 {
            let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(&mut file);
            csv.write_record(HEADER).and_then(|_| csv.flush().map_err(Into::into)).map_err(|e| {
                IngestError::Csv { path: display.clone(), message: e.to_string() }
            })?;
        }
        Ok(CsvArchiveSink { path: display, file })
    }
}

impl SnapshotSink for CsvArchiveSink {
    fn append(&mut self, rows: &[StationSnapshot]) -> Result<usize, IngestError> {
        let mut csv = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(&mut self.file);
        for row in rows {
            csv.write_record(record_of(row))
                .map_err(|e| IngestError::Csv { path: self.path.clone(), message: e.to_string() })?;
        }
        csv.flush().map_err(|source| IngestError::Io { path: self.path.clone(), source })?;
        Ok(rows.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tests::snap;

    fn roundtrip(archive: &SnapshotArchive) -> ArchiveRead {
        let mut buf = Vec::new();
        write_archive_to(archive, &mut buf).unwrap();
        read_archive_from(buf.as_slice(), "mem").unwrap()
    }

    #[test]
    fn empty_archive_is_header_only() {
        let mut buf = Vec::new();
        assert_eq!(write_archive_to(&SnapshotArchive::new("x"), &mut buf).unwrap(), 0);
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", HEADER.join(",")));
    }

    #[test]
    fn three_rows_round_trip() {
        let (a, _) = SnapshotArchive::from_rows(
            vec![snap(1, 1, 2, 3, 1_473_766_200_123), snap(1, 0, 3, 3, 1_473_766_800_000), snap(2, 5, 0, 5, 0)],
            "mem",
        );
        let mut buf = Vec::new();
        write_archive_to(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("2016-09-13T11:30:00.123Z"));
        assert!(!text.contains('\r'));
        let back = read_archive_from(buf.as_slice(), "mem").unwrap();
        assert!(back.rejections.is_empty());
        assert_eq!(back.archive.rows(), a.rows());
    }

    #[test]
    fn comma_in_name_is_quoted() {
        let mut s = snap(7, 1, 1, 2, 0);
        s.station_name = "CUSTOM HOUSE, QUAY \"north\"".into();
        let (a, _) = SnapshotArchive::from_rows(vec![s], "mem");
        let mut buf = Vec::new();
        write_archive_to(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"CUSTOM HOUSE, QUAY \"\"north\"\"\""));
        assert_eq!(roundtrip(&a).archive.rows(), a.rows());
    }

    #[test]
    fn duplicate_row_is_reported_once() {
        let text = "1,A,53.3,-6.2,20,10,10,2016-09-13T00:00:00.000Z\n\
                    1,A,53.3,-6.2,20,10,10,2016-09-13T00:00:00.000Z\n\
                    1,A,53.3,-6.2,20,11,9,2016-09-13T00:10:00.000Z\n";
        let read = read_archive_from(text.as_bytes(), "mem").unwrap();
        assert_eq!(read.archive.len(), 2);
        assert_eq!(read.rejections.len(), 1);
        assert_eq!(read.rejections[0].position, 2);
        assert_eq!(read.rejections[0].reason, RejectReason::Duplicate);
    }

    #[test]
    fn bad_rows_are_rejected_with_line_numbers() {
        let text = format!(
            "{}\n1,A,north,-6.2,20,10,10,2016-09-13T00:00:00Z\n1,A,53.3,-6.2,20,10\n\
             1,A,53.3,-6.2,20,10,11,2016-09-13T00:00:00Z\n2,B,53.3,-6.2,20,10,10,2016-09-13T00:00:00+01:00\n",
            HEADER.join(",")
        );
        let read = read_archive_from(text.as_bytes(), "mem").unwrap();
        let lines: Vec<usize> = read.rejections.iter().map(|r| r.position).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert!(matches!(read.rejections[0].reason, RejectReason::Malformed(_)));
        assert_eq!(read.rejections[1].reason, RejectReason::Arity { expected: 8, found: 6 });
        assert!(matches!(read.rejections[2].reason, RejectReason::Invariant(_)));
        assert_eq!(read.archive.len(), 1);
        assert_eq!(read.archive.rows()[0].observed_at.to_rfc3339(), "2016-09-12T23:00:00+00:00");
    }

    #[test]
    fn sink_appends_under_a_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let mut sink = CsvArchiveSink::open(&path).unwrap();
        sink.append(&[snap(2, 1, 1, 2, 600_000)]).unwrap();
        drop(sink);
        let mut sink = CsvArchiveSink::open(&path).unwrap();
        sink.append(&[snap(1, 1, 1, 2, 0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("station_number").count(), 1);
        let read = read_archive(&path).unwrap();
        assert_eq!(read.archive.station_ids(), vec![1, 2]);
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(read_archive("/nonexistent/velostat.csv"), Err(IngestError::Io { .. })));
    }
}
