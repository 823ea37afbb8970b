//! Sensor data types, the preprocessing pipeline, synthetic benchmark
//! generation, and dataset splitting.

mod csv_io;
mod pipeline;
mod split;
mod synthetic;

pub use csv_io::{ingest_csv, write_csv, RAW_CSV_HEADER};
pub use pipeline::{
    assign_labels, encode_features, read_windows_jsonl, rebase_weeks, resample_and_carry_forward,
    segment_windows, write_windows_jsonl, day_of_week, week_of_timestamp, CONTEXT_DIM,
};
pub use split::{measure_label_proportions, split_train_valid_test, SplitFractions};
pub use synthetic::{emit_raw_csv, generate_synthetic, DomainShift, GeneratedDomain, SyntheticSpec};

use crate::losses::LabelProportions;
use crate::tensor::Array;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: header mismatch, expected `{expected}` but found `{found}`")]
    SchemaMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("non-monotone timestamps for person {person} at {timestamp}")]
    NonMonotoneTimestamps { person: String, timestamp: i64 },
    #[error("cannot decimate {input} Hz to {target} Hz: ratio must be a positive integer")]
    BadRate { input: u32, target: u32 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("domain {id}: {count} windows are too few for a {fractions} split")]
    TooFewWindows {
        id: String,
        count: usize,
        fractions: String,
    },
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("no labeled windows to measure proportions from")]
    NoLabeledWindows,
    #[error("label index {label} exceeds class count {classes}")]
    LabelIndexOutOfRange { label: usize, classes: usize },
    #[error("prompts must be sorted by time")]
    UnsortedPrompts,
    #[error(transparent)]
    Proportions(#[from] crate::losses::LossError),
}

/// The six location categories; `Other` doubles as the fallback for
/// unknown names and for readings before the first observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationType {
    Other,
    House,
    Road,
    Service,
    Work,
    Attraction,
}

impl LocationType {
    pub const ALL: [LocationType; 6] = [
        LocationType::Other,
        LocationType::House,
        LocationType::Road,
        LocationType::Service,
        LocationType::Work,
        LocationType::Attraction,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LocationType::Other => "other",
            LocationType::House => "house",
            LocationType::Road => "road",
            LocationType::Service => "service",
            LocationType::Work => "work",
            LocationType::Attraction => "attraction",
        }
    }

    pub fn from_name(name: &str) -> Option<LocationType> {
        LocationType::ALL.iter().copied().find(|l| l.name() == name)
    }

    /// Index within the one-hot encoding.
    pub fn index(&self) -> usize {
        LocationType::ALL.iter().position(|l| l == self).expect("member of ALL")
    }
}

/// One raw sensor reading: timestamp in UTC seconds, nine motion values
/// (3-axis user acceleration, 3-axis rotation rate, yaw, pitch, roll),
/// and optional location and label observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorReading {
    pub timestamp: i64,
    pub motion: [f64; 9],
    pub location: Option<String>,
    pub label: Option<String>,
    pub person: String,
}

/// Number of motion channels in the raw CSV schema.
pub const MOTION_CHANNELS: usize = 9;

/// A fixed-length multivariate window plus its context features.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesWindow {
    pub person: String,
    pub week: u32,
    pub label: Option<usize>,
    /// Location one-hot (6) followed by day-of-week, hour, and minutes
    /// past midnight.
    pub context: Vec<f64>,
    /// `[K, H]` sensor values.
    pub values: Array,
}

impl TimeSeriesWindow {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// JSON Lines record mirroring [`TimeSeriesWindow`].
#[derive(Serialize, Deserialize)]
pub(crate) struct WindowRecord {
    pub person: String,
    pub week: u32,
    pub label: Option<usize>,
    pub context: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl From<&TimeSeriesWindow> for WindowRecord {
    fn from(w: &TimeSeriesWindow) -> Self {
        let (k, h) = (w.channels(), w.len());
        let values = (0..k)
            .map(|c| w.values.data()[c * h..(c + 1) * h].to_vec())
            .collect();
        WindowRecord {
            person: w.person.clone(),
            week: w.week,
            label: w.label,
            context: w.context.clone(),
            values,
        }
    }
}

/// Declarative label remapping applied at ingestion: rename first,
/// then drop. A dropped label leaves the reading unlabeled.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LabelMap {
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: BTreeSet<String>,
}

impl LabelMap {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::MalformedRow {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn apply(&self, label: &str) -> Option<String> {
        let renamed = self.rename.get(label).map(|s| s.as_str()).unwrap_or(label);
        if self.drop.contains(renamed) {
            None
        } else {
            Some(renamed.to_string())
        }
    }
}

/// Lexicographically ordered label names defining the class indices of
/// a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    names: Vec<String>,
}

impl LabelVocabulary {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        Self {
            names: set.into_iter().map(String::from).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One domain's splits. The target training split is served
/// label-stripped; the labeled view exists for the train-on-target
/// bound and counts every access so the unsupervised contract can be
/// asserted after a run.
#[derive(Debug)]
pub struct DomainDataset {
    id: String,
    train_labeled: Vec<TimeSeriesWindow>,
    train_unlabeled: Vec<TimeSeriesWindow>,
    valid: Vec<TimeSeriesWindow>,
    test: Vec<TimeSeriesWindow>,
    label_reads: AtomicU64,
}

impl DomainDataset {
    pub(crate) fn from_splits(
        id: String,
        train: Vec<TimeSeriesWindow>,
        valid: Vec<TimeSeriesWindow>,
        test: Vec<TimeSeriesWindow>,
    ) -> Self {
        let train_unlabeled = train
            .iter()
            .map(|w| TimeSeriesWindow {
                label: None,
                ..w.clone()
            })
            .collect();
        Self {
            id,
            train_labeled: train,
            train_unlabeled,
            valid,
            test,
            label_reads: AtomicU64::new(0),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Training windows with labels removed; the only training view a
    /// target domain exposes to adaptation methods.
    pub fn unlabeled_train(&self) -> &[TimeSeriesWindow] {
        &self.train_unlabeled
    }

    /// Labeled training windows. Every call is counted; see
    /// [`DomainDataset::label_access_count`].
    pub fn labeled_train(&self) -> &[TimeSeriesWindow] {
        self.label_reads.fetch_add(1, Ordering::Relaxed);
        &self.train_labeled
    }

    pub fn valid(&self) -> &[TimeSeriesWindow] {
        &self.valid
    }

    pub fn test(&self) -> &[TimeSeriesWindow] {
        &self.test
    }

    /// How many times the labeled training view was accessed.
    pub fn label_access_count(&self) -> u64 {
        self.label_reads.load(Ordering::Relaxed)
    }

    /// Empirical label proportions of the training split, consumed in
    /// aggregate only (simulating self-reported activity proportions);
    /// does not count as a per-window label access.
    pub fn train_label_proportions(&self, num_classes: usize) -> Result<LabelProportions, DataError> {
        measure_label_proportions(&self.train_labeled, num_classes)
    }

    pub fn train_len(&self) -> usize {
        self.train_unlabeled.len()
    }
}

/// Groups windows by person, preserving input order within each group.
pub fn group_by_person(windows: Vec<TimeSeriesWindow>) -> BTreeMap<String, Vec<TimeSeriesWindow>> {
    let mut map: BTreeMap<String, Vec<TimeSeriesWindow>> = BTreeMap::new();
    for w in windows {
        map.entry(w.person.clone()).or_default().push(w);
    }
    map
}

/// Groups windows by `(person, week)` with composite ids `person@week`.
pub fn group_by_person_week(
    windows: Vec<TimeSeriesWindow>,
) -> BTreeMap<String, Vec<TimeSeriesWindow>> {
    let mut map: BTreeMap<String, Vec<TimeSeriesWindow>> = BTreeMap::new();
    for w in windows {
        map.entry(format!("{}@{}", w.person, w.week)).or_default().push(w);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn location_names_roundtrip() {
        for loc in LocationType::ALL {
            assert_eq!(LocationType::from_name(loc.name()), Some(loc));
        }
        assert_eq!(LocationType::from_name("volcano"), None);
        assert_eq!(LocationType::House.index(), 1);
    }

    #[test]
    fn label_map_rename_then_drop() {
        let map: LabelMap = serde_json::from_str(
            r#"{"rename": {"cook": "mealtime", "eat": "mealtime"}, "drop": ["errands"]}"#,
        )
        .unwrap();
        assert_eq!(map.apply("cook").as_deref(), Some("mealtime"));
        assert_eq!(map.apply("eat").as_deref(), Some("mealtime"));
        assert_eq!(map.apply("errands"), None);
        assert_eq!(map.apply("work").as_deref(), Some("work"));
    }

    #[test]
    fn vocabulary_is_sorted_and_stable() {
        let v = LabelVocabulary::from_labels(["work", "eat", "work", "cook"]);
        assert_eq!(v.names(), &["cook", "eat", "work"]);
        assert_eq!(v.index_of("eat"), Some(1));
        assert_eq!(v.index_of("sleep"), None);
    }

    #[test]
    fn dataset_counts_labeled_accesses() {
        let w = TimeSeriesWindow {
            person: "p".into(),
            week: 0,
            label: Some(1),
            context: vec![0.0; 9],
            values: Array::zeros(&[1, 4]),
        };
        let ds = DomainDataset::from_splits("p".into(), vec![w.clone()], vec![w.clone()], vec![w]);
        assert_eq!(ds.label_access_count(), 0);
        assert!(ds.unlabeled_train()[0].label.is_none());
        assert_eq!(ds.label_access_count(), 0);
        let _ = ds.labeled_train();
        let _ = ds.labeled_train();
        assert_eq!(ds.label_access_count(), 2);
        // aggregate proportions do not count as label accesses
        let p = ds.train_label_proportions(2).unwrap();
        assert_eq!(p.probabilities(), &[0.0, 1.0]);
        assert_eq!(ds.label_access_count(), 2);
    }
}
