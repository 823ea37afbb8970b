//! The preprocessing stages: decimation to 10 Hz with location
//! carry-forward, backward label assignment from prompts, context
//! feature encoding, and segmentation into fixed non-overlapping
//! windows. Plus the JSON Lines window format.

use super::{
    DataError, LabelVocabulary, LocationType, SensorReading, TimeSeriesWindow, WindowRecord,
    MOTION_CHANNELS,
};
use crate::tensor::Array;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Context features: 6 location one-hot + day-of-week + hour + minutes
/// past midnight.
pub const CONTEXT_DIM: usize = LocationType::ALL.len() + 3;

/// Seconds each label prompt reaches backward.
const PROMPT_WINDOW_SECONDS: i64 = 300;

/// Day of week for a UTC timestamp, Monday = 0.
pub fn day_of_week(timestamp: i64) -> u32 {
    // 1970-01-01 was a Thursday (index 3)
    (timestamp.div_euclid(86_400) + 3).rem_euclid(7) as u32
}

/// Monday-aligned week bucket of a UTC timestamp.
pub fn week_of_timestamp(timestamp: i64) -> i64 {
    (timestamp.div_euclid(86_400) + 3).div_euclid(7)
}

/// Decimates readings to `target_rate` Hz and carries the last observed
/// location forward, per person.
///
/// Keeps every `input_rate / target_rate`-th sample. Readings before
/// the first location observation carry `other`. Errors when the rate
/// ratio is not a positive integer.
pub fn resample_and_carry_forward(
    readings: &[SensorReading],
    input_rate: u32,
    target_rate: u32,
) -> Result<Vec<SensorReading>, DataError> {
    if target_rate == 0 || input_rate < target_rate || input_rate % target_rate != 0 {
        return Err(DataError::BadRate {
            input: input_rate,
            target: target_rate,
        });
    }
    let k = (input_rate / target_rate) as usize;

    let mut out = Vec::with_capacity(readings.len() / k + 1);
    let mut person: Option<&str> = None;
    let mut carried: Option<String> = None;
    let mut index_in_person = 0usize;
    for r in readings {
        if person != Some(r.person.as_str()) {
            person = Some(r.person.as_str());
            carried = None;
            index_in_person = 0;
        }
        if let Some(loc) = &r.location {
            carried = Some(loc.clone());
        }
        if index_in_person % k == 0 {
            let mut kept = r.clone();
            kept.location = Some(carried.clone().unwrap_or_else(|| LocationType::Other.name().to_string()));
            out.push(kept);
        }
        index_in_person += 1;
    }
    Ok(out)
}

/// Applies prompt labels backward in time: a prompt `(t, label)` labels
/// every reading with `t - 300 <= u <= t`; on overlap the later prompt
/// wins. Prompts must be time-sorted.
pub fn assign_labels(
    readings: &mut [SensorReading],
    prompts: &[(i64, String)],
) -> Result<(), DataError> {
    if prompts.windows(2).any(|p| p[0].0 > p[1].0) {
        return Err(DataError::UnsortedPrompts);
    }
    for (t, label) in prompts {
        let lo = t - PROMPT_WINDOW_SECONDS;
        for r in readings.iter_mut() {
            if r.timestamp >= lo && r.timestamp <= *t {
                r.label = Some(label.clone());
            }
        }
    }
    Ok(())
}

/// Context feature vector for one reading: location one-hot over the
/// six categories (unknown names map to `other` with a warning), then
/// day-of-week (Monday = 0), hour 0-23, and minutes past midnight.
pub fn encode_features(reading: &SensorReading) -> Vec<f64> {
    let location = match reading.location.as_deref() {
        None => LocationType::Other,
        Some(name) => LocationType::from_name(name).unwrap_or_else(|| {
            log::warn!("unknown location category `{name}`, mapping to other");
            LocationType::Other
        }),
    };
    let mut context = vec![0.0; CONTEXT_DIM];
    context[location.index()] = 1.0;
    let seconds_of_day = reading.timestamp.rem_euclid(86_400);
    context[6] = day_of_week(reading.timestamp) as f64;
    context[7] = (seconds_of_day / 3600) as f64;
    context[8] = (seconds_of_day / 60) as f64;
    context
}

/// Segments readings into non-overlapping windows of `h` steps, never
/// crossing a person or week boundary; trailing remainders are dropped.
///
/// A window is labeled with the majority label of its readings when at
/// least half of them carry one (ties break toward the smallest class
/// index); context features come from the window's first reading.
/// Weeks are emitted as absolute Monday-aligned buckets; call
/// [`rebase_weeks`] once the whole dataset is assembled.
pub fn segment_windows(
    readings: &[SensorReading],
    h: usize,
    vocabulary: &LabelVocabulary,
) -> Vec<TimeSeriesWindow> {
    assert!(h >= 1, "window length must be >= 1");
    let mut groups: BTreeMap<(String, i64), Vec<&SensorReading>> = BTreeMap::new();
    for r in readings {
        groups
            .entry((r.person.clone(), week_of_timestamp(r.timestamp)))
            .or_default()
            .push(r);
    }

    let mut windows = Vec::new();
    for ((person, week), group) in groups {
        for chunk in group.chunks_exact(h) {
            let mut values = vec![0.0; MOTION_CHANNELS * h];
            for (t, r) in chunk.iter().enumerate() {
                for c in 0..MOTION_CHANNELS {
                    values[c * h + t] = r.motion[c];
                }
            }
            let mut counts = vec![0usize; vocabulary.len()];
            let mut labeled = 0usize;
            for r in chunk {
                if let Some(idx) = r.label.as_deref().and_then(|l| vocabulary.index_of(l)) {
                    counts[idx] += 1;
                    labeled += 1;
                }
            }
            let label = if labeled * 2 >= h {
                counts
                    .iter()
                    .enumerate()
                    .max_by(|(ia, ca), (ib, cb)| ca.cmp(cb).then(ib.cmp(ia)))
                    .filter(|(_, &c)| c > 0)
                    .map(|(i, _)| i)
            } else {
                None
            };
            windows.push(TimeSeriesWindow {
                person: person.clone(),
                week: week.max(0) as u32,
                label,
                context: encode_features(chunk[0]),
                values: Array::new(vec![MOTION_CHANNELS, h], values).expect("shape matches"),
            });
        }
    }
    windows
}

/// Shifts week indices so the earliest week in the dataset becomes 0.
pub fn rebase_weeks(windows: &mut [TimeSeriesWindow]) {
    if let Some(min) = windows.iter().map(|w| w.week).min() {
        for w in windows {
            w.week -= min;
        }
    }
}

/// Writes windows as JSON Lines, one record per window.
pub fn write_windows_jsonl(path: &Path, windows: &[TimeSeriesWindow]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    for w in windows {
        let record = WindowRecord::from(w);
        let line = serde_json::to_string(&record).expect("window serializes");
        writeln!(out, "{}", line).map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a JSON Lines window file, checking that channel count and
/// window length are consistent across records.
pub fn read_windows_jsonl(path: &Path) -> Result<Vec<TimeSeriesWindow>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut windows = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let record: WindowRecord =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        let k = record.values.len();
        let h = record.values.first().map(|v| v.len()).unwrap_or(0);
        if k == 0 || h == 0 || record.values.iter().any(|row| row.len() != h) {
            return Err(DataError::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: "values must be a non-empty rectangular [K][H] array".into(),
            });
        }
        match dims {
            None => dims = Some((k, h)),
            Some(d) if d != (k, h) => {
                return Err(DataError::MalformedRow {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("window is [{k} x {h}] but the dataset is [{} x {}]", d.0, d.1),
                });
            }
            _ => {}
        }
        let mut flat = Vec::with_capacity(k * h);
        for row in &record.values {
            flat.extend_from_slice(row);
        }
        windows.push(TimeSeriesWindow {
            person: record.person,
            week: record.week,
            label: record.label,
            context: record.context,
            values: Array::new(vec![k, h], flat).expect("validated rectangular"),
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(person: &str, ts: i64, location: Option<&str>, label: Option<&str>) -> SensorReading {
        SensorReading {
            timestamp: ts,
            motion: [ts as f64; 9],
            location: location.map(String::from),
            label: label.map(String::from),
            person: person.into(),
        }
    }

    #[test]
    fn decimation_50hz_to_10hz() {
        // 500 samples at 50 Hz (10 per timestamp tick of 0.02s -> use
        // 50 rows per second) decimate to 100
        let readings: Vec<SensorReading> =
            (0..500).map(|i| reading("p", i / 50, None, None)).collect();
        let out = resample_and_carry_forward(&readings, 50, 10).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn identity_at_10hz_preserves_motion() {
        let readings: Vec<SensorReading> =
            (0..40).map(|i| reading("p", i / 10, Some("road"), None)).collect();
        let out = resample_and_carry_forward(&readings, 10, 10).unwrap();
        assert_eq!(out.len(), readings.len());
        for (a, b) in out.iter().zip(&readings) {
            assert_eq!(a.motion, b.motion);
            assert_eq!(a.timestamp, b.timestamp);
        }
    }

    #[test]
    fn non_integer_ratio_rejected() {
        let readings = vec![reading("p", 0, None, None)];
        match resample_and_carry_forward(&readings, 25, 10) {
            Err(DataError::BadRate { input: 25, target: 10 }) => {}
            other => panic!("expected rate error, got {other:?}"),
        }
        assert!(resample_and_carry_forward(&readings, 5, 10).is_err());
    }

    #[test]
    fn carry_forward_fills_gaps() {
        let mut readings: Vec<SensorReading> = (0..10).map(|i| reading("p", i, None, None)).collect();
        readings[0].location = Some("house".into());
        let out = resample_and_carry_forward(&readings, 10, 10).unwrap();
        assert!(out.iter().all(|r| r.location.as_deref() == Some("house")));
    }

    #[test]
    fn before_first_observation_is_other() {
        let mut readings: Vec<SensorReading> = (0..6).map(|i| reading("p", i, None, None)).collect();
        readings[3].location = Some("work".into());
        let out = resample_and_carry_forward(&readings, 10, 10).unwrap();
        assert_eq!(out[0].location.as_deref(), Some("other"));
        assert_eq!(out[2].location.as_deref(), Some("other"));
        assert_eq!(out[3].location.as_deref(), Some("work"));
        assert_eq!(out[5].location.as_deref(), Some("work"));
        // invariant: after the first observation nothing is absent
        assert!(out.iter().all(|r| r.location.is_some()));
    }

    #[test]
    fn label_prompt_boundaries() {
        let mut readings = vec![
            reading("p", 1000 - 301, None, None),
            reading("p", 1000 - 300, None, None),
            reading("p", 1000 - 299, None, None),
            reading("p", 1000, None, None),
            reading("p", 1001, None, None),
        ];
        assign_labels(&mut readings, &[(1000, "work".into())]).unwrap();
        assert_eq!(readings[0].label, None); // t - 301: outside
        assert_eq!(readings[1].label.as_deref(), Some("work")); // exactly t - 300
        assert_eq!(readings[2].label.as_deref(), Some("work")); // t - 299
        assert_eq!(readings[3].label.as_deref(), Some("work")); // exactly t
        assert_eq!(readings[4].label, None);
    }

    #[test]
    fn overlapping_prompts_later_wins() {
        let mut readings = vec![reading("p", 500, None, None)];
        assign_labels(
            &mut readings,
            &[(600, "eat".into()), (700, "work".into())],
        )
        .unwrap();
        assert_eq!(readings[0].label.as_deref(), Some("work"));
        // unsorted prompts are a contract violation
        let mut readings = vec![reading("p", 500, None, None)];
        assert!(assign_labels(&mut readings, &[(700, "a".into()), (600, "b".into())]).is_err());
    }

    #[test]
    fn encode_features_cases() {
        // Wednesday 14:30 UTC: 2021-06-16 is a Wednesday
        let wednesday = 18_794 * 86_400 + 14 * 3600 + 30 * 60;
        assert_eq!(day_of_week(wednesday), 2);
        let r = reading("p", wednesday, Some("house"), None);
        let ctx = encode_features(&r);
        assert_eq!(&ctx[0..6], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(ctx[6], 2.0);
        assert_eq!(ctx[7], 14.0);
        assert_eq!(ctx[8], 870.0);

        // midnight Monday: 1970-01-05
        let monday = 4 * 86_400;
        let r = reading("p", monday, None, None);
        let ctx = encode_features(&r);
        assert_eq!(&ctx[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(ctx[0], 1.0); // absent location -> other

        // unknown location maps to other
        let r = reading("p", monday, Some("moon"), None);
        assert_eq!(encode_features(&r)[0], 1.0);
    }

    #[test]
    fn segmentation_counts_and_labels() {
        let vocab = LabelVocabulary::from_labels(["work"]);
        // 1000 readings, h=128 -> 7 windows, 104 dropped
        let readings: Vec<SensorReading> =
            (0..1000).map(|i| reading("p", i / 10, None, None)).collect();
        let windows = segment_windows(&readings, 128, &vocab);
        assert_eq!(windows.len(), 7);
        assert!(windows.iter().all(|w| w.label.is_none()));

        // 128 readings all labeled work -> one labeled window
        let readings: Vec<SensorReading> =
            (0..128).map(|i| reading("p", i / 10, None, Some("work"))).collect();
        let windows = segment_windows(&readings, 128, &vocab);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].label, Some(0));

        // only 40 of 128 labeled -> below the 50% threshold
        let readings: Vec<SensorReading> = (0..128)
            .map(|i| reading("p", i / 10, None, if i < 40 { Some("work") } else { None }))
            .collect();
        let windows = segment_windows(&readings, 128, &vocab);
        assert_eq!(windows[0].label, None);
    }

    #[test]
    fn segmentation_majority_and_tiebreak() {
        let vocab = LabelVocabulary::from_labels(["eat", "work"]);
        // 65 eat vs 63 work -> eat (index 0)
        let readings: Vec<SensorReading> = (0..128)
            .map(|i| reading("p", i / 10, None, Some(if i < 65 { "eat" } else { "work" })))
            .collect();
        assert_eq!(segment_windows(&readings, 128, &vocab)[0].label, Some(0));
        // exact tie 64/64 -> smallest index wins
        let readings: Vec<SensorReading> = (0..128)
            .map(|i| reading("p", i / 10, None, Some(if i < 64 { "work" } else { "eat" })))
            .collect();
        assert_eq!(segment_windows(&readings, 128, &vocab)[0].label, Some(0));
    }

    #[test]
    fn windows_never_cross_person_or_week_boundaries() {
        let vocab = LabelVocabulary::from_labels([]);
        let week = 7 * 86_400;
        let mut readings = Vec::new();
        // person a: 6 readings in week 0, 6 in week 1; person b: 6 in week 0
        for i in 0..6 {
            readings.push(reading("a", i, None, None));
        }
        for i in 0..6 {
            readings.push(reading("a", 4 * 86_400 + week + i, None, None));
        }
        for i in 0..6 {
            readings.push(reading("b", i, None, None));
        }
        let windows = segment_windows(&readings, 4, &vocab);
        // each group yields floor(6/4) = 1 window
        assert_eq!(windows.len(), 3);
        let mut keys: Vec<(String, u32)> = windows.iter().map(|w| (w.person.clone(), w.week)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 3, "each window belongs to a distinct (person, week)");
        // values inside one window come from one contiguous group
        for w in &windows {
            let first = w.values.data()[0];
            assert!(w.values.data()[..4].iter().zip(0..4).all(|(v, i)| *v == first + i as f64));
        }
    }

    #[test]
    fn jsonl_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jsonl");
        let vocab = LabelVocabulary::from_labels(["work"]);
        let readings: Vec<SensorReading> =
            (0..256).map(|i| reading("p", i / 10, Some("road"), Some("work"))).collect();
        let mut windows = segment_windows(&readings, 128, &vocab);
        rebase_weeks(&mut windows);
        write_windows_jsonl(&path, &windows).unwrap();
        let back = read_windows_jsonl(&path).unwrap();
        assert_eq!(back, windows);

        // inconsistent channel counts rejected
        std::fs::write(
            &path,
            "{\"person\":\"p\",\"week\":0,\"label\":null,\"context\":[],\"values\":[[1.0]]}\n{\"person\":\"p\",\"week\":0,\"label\":null,\"context\":[],\"values\":[[1.0],[2.0]]}\n",
        )
        .unwrap();
        assert!(matches!(read_windows_jsonl(&path), Err(DataError::MalformedRow { line: 2, .. })));
    }

    #[test]
    fn week_bucketing_is_monday_aligned() {
        assert_eq!(week_of_timestamp(0), 0); // Thursday 1970-01-01
        assert_eq!(week_of_timestamp(3 * 86_400), 0); // Sunday
        assert_eq!(week_of_timestamp(4 * 86_400), 1); // Monday starts week 1
        assert_eq!(week_of_timestamp(10 * 86_400 + 86_399), 1); // next Sunday
        assert_eq!(week_of_timestamp(11 * 86_400), 2);
    }
}
