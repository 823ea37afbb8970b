//! Raw sensor CSV ingestion and emission.
//!
//! One file per person; the file stem is the person id. Fields that are
//! absent (location, label) are empty strings.

use super::{DataError, SensorReading};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// The exact header every raw file must carry.
pub const RAW_CSV_HEADER: &str = "timestamp,ax,ay,az,rx,ry,rz,yaw,pitch,roll,location_type,label";

/// Reads one person's raw CSV into ordered readings.
///
/// Rejects malformed rows with their line number and decreasing
/// timestamps with the person and offending timestamp. Equal
/// consecutive timestamps are allowed: sub-second samples share one
/// integer UTC second.
pub fn ingest_csv(path: &Path) -> Result<Vec<SensorReading>, DataError> {
    let person = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(source))) => {
            return Err(DataError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        None => String::new(),
    };
    if header.trim_end() != RAW_CSV_HEADER {
        return Err(DataError::SchemaMismatch {
            path: path.to_path_buf(),
            expected: RAW_CSV_HEADER.to_string(),
            found: header,
        });
    }

    let mut readings = Vec::new();
    let mut last_ts: Option<i64> = None;
    for (idx, line) in lines {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(DataError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let timestamp: i64 = fields[0].parse().map_err(|_| DataError::MalformedRow {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("bad timestamp `{}`", fields[0]),
        })?;
        let mut motion = [0.0f64; 9];
        for (i, m) in motion.iter_mut().enumerate() {
            *m = fields[i + 1].parse().map_err(|_| DataError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("bad numeric value `{}` in column {}", fields[i + 1], i + 2),
            })?;
            if !m.is_finite() {
                return Err(DataError::MalformedRow {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("non-finite value in column {}", i + 2),
                });
            }
        }
        if let Some(prev) = last_ts {
            if timestamp < prev {
                return Err(DataError::NonMonotoneTimestamps {
                    person: person.clone(),
                    timestamp,
                });
            }
        }
        last_ts = Some(timestamp);
        let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
        readings.push(SensorReading {
            timestamp,
            motion,
            location: opt(fields[10]),
            label: opt(fields[11]),
            person: person.clone(),
        });
    }
    Ok(readings)
}

/// Writes readings back out in the raw schema (the inverse of
/// [`ingest_csv`] up to the float formatting used here).
pub fn write_csv(path: &Path, readings: &[SensorReading]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", RAW_CSV_HEADER).map_err(io_err)?;
    for r in readings {
        let mut row = String::with_capacity(128);
        row.push_str(&r.timestamp.to_string());
        for m in r.motion {
            row.push(',');
            // shortest round-trip decimal keeps re-reads exact
            let mut buf = ryu_format(m);
            row.push_str(&mut buf);
        }
        row.push(',');
        if let Some(loc) = &r.location {
            row.push_str(loc);
        }
        row.push(',');
        if let Some(label) = &r.label {
            row.push_str(label);
        }
        writeln!(out, "{}", row).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

fn ryu_format(v: f64) -> String {
    // serde_json's float formatting is the shortest round-trip form
    serde_json::to_string(&v).expect("finite float")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn reading(ts: i64, label: Option<&str>) -> SensorReading {
        SensorReading {
            timestamp: ts,
            motion: [0.1, -0.2, 0.3, 1.0, 2.0, 3.0, 0.5, 0.25, -0.125],
            location: Some("house".into()),
            label: label.map(String::from),
            person: "p1".into(),
        }
    }

    #[test]
    fn three_row_file_yields_three_readings() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p1.csv");
        write_csv(&path, &[reading(10, Some("work")), reading(10, None), reading(11, None)]).unwrap();
        let got = ingest_csv(&path).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].person, "p1");
        assert_eq!(got[0].label.as_deref(), Some("work"));
        assert_eq!(got[1].label, None);
    }

    #[test]
    fn roundtrip_preserves_readings() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p1.csv");
        let rows = vec![reading(100, Some("eat")), reading(100, Some("eat")), reading(101, None)];
        write_csv(&path, &rows).unwrap();
        assert_eq!(ingest_csv(&path).unwrap(), rows);
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p1.csv");
        std::fs::write(
            &path,
            format!("{}\n5,0,0,0,0,0,0,0,0,0,,\n6,zebra,0,0,0,0,0,0,0,0,,\n", RAW_CSV_HEADER),
        )
        .unwrap();
        match ingest_csv(&path) {
            Err(DataError::MalformedRow { line, message, .. }) => {
                assert_eq!(line, 3, "zebra row is the third file line");
                assert!(message.contains("zebra"));
            }
            other => panic!("expected malformed row, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p7.csv");
        std::fs::write(
            &path,
            format!("{}\n10,0,0,0,0,0,0,0,0,0,,\n9,0,0,0,0,0,0,0,0,0,,\n", RAW_CSV_HEADER),
        )
        .unwrap();
        match ingest_csv(&path) {
            Err(DataError::NonMonotoneTimestamps { person, timestamp }) => {
                assert_eq!(person, "p7");
                assert_eq!(timestamp, 9);
            }
            other => panic!("expected timestamp error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p1.csv");
        std::fs::write(&path, "time,ax\n1,2\n").unwrap();
        assert!(matches!(ingest_csv(&path), Err(DataError::SchemaMismatch { .. })));
    }
}
