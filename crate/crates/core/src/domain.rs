//! Shared vocabulary: plates, records, detections, taxonomies, predictions,
//! tallies and splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Reserved sentinel for "the model produced nothing usable".
pub const NO_DETECTION: &str = "NO_DETECTION";

/// Containment slack for normalized box coordinates.
pub const BBOX_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("invalid plate id {0:?}")]
    InvalidPlate(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("unknown label {label:?} for task {task}")]
    UnknownLabel { task: Task, label: String },
    #[error("invalid taxonomy for {task}: {reason}")]
    InvalidTaxonomy { task: Task, reason: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid location: {0}")]
    InvalidLocation(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    #[error("tally invariant violated for plate {plate}: {reason}")]
    InvalidTally { plate: String, reason: String },
}

/// Normalized number plate: uppercase, whitespace removed, `[A-Z0-9-]+`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PlateId(String);

impl PlateId {
    pub fn parse(raw: &str) -> Result<Self, DomainError> {
        let value: String = raw
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_uppercase)
            .collect();
        if value.is_empty() || !value.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(DomainError::InvalidPlate(raw.to_string()));
        }
        Ok(PlateId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PlateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for PlateId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PlateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        PlateId::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Make,
    Shape,
    Colour,
    ColourBinary,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Make, Task::Shape, Task::Colour, Task::ColourBinary];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Make => "make",
            Task::Shape => "shape",
            Task::Colour => "colour",
            Task::ColourBinary => "colour_binary",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "make" => Ok(Task::Make),
            "shape" => Ok(Task::Shape),
            "colour" => Ok(Task::Colour),
            "colour_binary" | "colour-binary" => Ok(Task::ColourBinary),
            other => Err(DomainError::UnknownTask(other.to_string())),
        }
    }
}

/// A label as it appears in predictions and tallies: either a canonical
/// taxonomy label or the `NO_DETECTION` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(value: impl Into<String>) -> Self {
        Label(value.into())
    }

    pub fn no_detection() -> Self {
        Label(NO_DETECTION.to_string())
    }

    pub fn is_no_detection(&self) -> bool {
        self.0 == NO_DETECTION
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::InvalidLocation(format!("({lat}, {lon})")));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Normalized YOLO box: center plus extents, all relative to image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, DomainError> {
        let finite = [cx, cy, w, h].iter().all(|v| v.is_finite());
        if !finite {
            return Err(DomainError::InvalidBox("non-finite coordinate".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(DomainError::InvalidBox(format!("non-positive extent w={w} h={h}")));
        }
        for (c, e, axis) in [(cx, w, "x"), (cy, h, "y")] {
            if c - e / 2.0 < -BBOX_EPSILON || c + e / 2.0 > 1.0 + BBOX_EPSILON {
                return Err(DomainError::InvalidBox(format!(
                    "{axis} extent [{}, {}] leaves the frame",
                    c - e / 2.0,
                    c + e / 2.0
                )));
            }
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    /// Whole-frame box, used when an annotation carries a label but no box.
    pub fn full_frame() -> Self {
        BoundingBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            cx: f64,
            cy: f64,
            w: f64,
            h: f64,
        }
        let raw = Raw::deserialize(d)?;
        BoundingBox::new(raw.cx, raw.cy, raw.w, raw.h).map_err(serde::de::Error::custom)
    }
}

fn check_confidence(confidence: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&confidence) {
        Ok(())
    } else {
        Err(DomainError::InvalidConfidence(confidence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub class_name: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn new(
        class_id: u32,
        class_name: impl Into<String>,
        confidence: f64,
        bbox: BoundingBox,
    ) -> Result<Self, DomainError> {
        check_confidence(confidence)?;
        Ok(Detection { class_id, class_name: class_name.into(), confidence, bbox })
    }
}

/// One entry of a classifier's ranked output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub class_name: String,
    pub confidence: f64,
}

impl RankedLabel {
    pub fn new(class_name: impl Into<String>, confidence: f64) -> Result<Self, DomainError> {
        check_confidence(confidence)?;
        Ok(RankedLabel { class_name: class_name.into(), confidence })
    }
}

/// Annotated label for one task, optionally with the box it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub record_id: String,
    pub plate_id: PlateId,
    pub image_ref: String,
    pub captured_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth: BTreeMap<Task, GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    Bright,
    Dark,
}

impl Tone {
    pub fn as_str(self) -> &'static str {
        match self {
            Tone::Bright => "bright",
            Tone::Dark => "dark",
        }
    }
}

/// Per-task label set with alias merges and a plate-frequency floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub task: Task,
    pub labels: Vec<String>,
    #[serde(default)]
    pub merge_map: BTreeMap<String, String>,
    #[serde(default)]
    pub min_plate_frequency: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary_map: Option<BTreeMap<String, Tone>>,
}

impl Taxonomy {
    /// Builds and validates a taxonomy.
    pub fn new(
        task: Task,
        labels: Vec<String>,
        merge_map: BTreeMap<String, String>,
        min_plate_frequency: u32,
        binary_map: Option<BTreeMap<String, Tone>>,
    ) -> Result<Self, DomainError> {
        let taxonomy = Taxonomy { task, labels, merge_map, min_plate_frequency, binary_map };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let invalid = |reason: String| DomainError::InvalidTaxonomy { task: self.task, reason };
        let mut seen = BTreeSet::new();
        for label in &self.labels {
            if label.is_empty() || label == NO_DETECTION {
                return Err(invalid(format!("reserved or empty label {label:?}")));
            }
            if !seen.insert(label.as_str()) {
                return Err(invalid(format!("duplicate label {label:?}")));
            }
        }
        for (alias, target) in &self.merge_map {
            if seen.contains(alias.as_str()) {
                return Err(invalid(format!("alias {alias:?} is also a canonical label")));
            }
            if !seen.contains(target.as_str()) {
                return Err(invalid(format!("alias {alias:?} targets unknown label {target:?}")));
            }
        }
        match (self.task, &self.binary_map) {
            (Task::ColourBinary, None) => {
                return Err(invalid("colour_binary requires a binary_map".into()));
            }
            (Task::ColourBinary, Some(map)) => {
                for tone in map.values() {
                    if !seen.contains(tone.as_str()) {
                        return Err(invalid(format!("tone {} missing from labels", tone.as_str())));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn canonicalize(&self, raw_label: &str) -> Result<String, DomainError> {
        if let Some(target) = self.merge_map.get(raw_label) {
            return Ok(target.clone());
        }
        if self.labels.iter().any(|l| l == raw_label) {
            return Ok(raw_label.to_string());
        }
        Err(DomainError::UnknownLabel { task: self.task, label: raw_label.to_string() })
    }

    /// Maps a canonical colour label onto its bright/dark group.
    pub fn binarize_colour(&self, colour_label: &str) -> Result<Tone, DomainError> {
        self.binary_map
            .as_ref()
            .and_then(|m| m.get(colour_label))
            .copied()
            .ok_or_else(|| DomainError::UnknownLabel {
                task: self.task,
                label: colour_label.to_string(),
            })
    }

    pub fn class_id(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32)
    }

    /// Stable hex digest of the taxonomy content, used for report provenance.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("taxonomy serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// A per-image final label for one task and backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub plate_id: PlateId,
    pub task: Task,
    pub backend_id: String,
    pub label: Label,
    pub confidence: f64,
    pub no_detection: bool,
    pub error: Option<String>,
    pub produced_at: DateTime<Utc>,
}

impl Prediction {
    pub fn labelled(
        record_id: impl Into<String>,
        plate_id: PlateId,
        task: Task,
        backend_id: impl Into<String>,
        label: Label,
        confidence: f64,
        produced_at: DateTime<Utc>,
    ) -> Result<Self, DomainError> {
        check_confidence(confidence)?;
        if label.is_no_detection() {
            return Ok(Self::no_detection(record_id, plate_id, task, backend_id, None, produced_at));
        }
        if confidence == 0.0 {
            return Err(DomainError::InvalidPrediction(format!(
                "label {label} carries zero confidence"
            )));
        }
        Ok(Prediction {
            record_id: record_id.into(),
            plate_id,
            task,
            backend_id: backend_id.into(),
            label,
            confidence,
            no_detection: false,
            error: None,
            produced_at,
        })
    }

    pub fn no_detection(
        record_id: impl Into<String>,
        plate_id: PlateId,
        task: Task,
        backend_id: impl Into<String>,
        error: Option<String>,
        produced_at: DateTime<Utc>,
    ) -> Self {
        Prediction {
            record_id: record_id.into(),
            plate_id,
            task,
            backend_id: backend_id.into(),
            label: Label::no_detection(),
            confidence: 0.0,
            no_detection: true,
            error,
            produced_at,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        check_confidence(self.confidence)?;
        let sentinel = self.label.is_no_detection();
        if sentinel != (self.confidence == 0.0) || sentinel != self.no_detection {
            return Err(DomainError::InvalidPrediction(format!(
                "record {}: NO_DETECTION must coincide with zero confidence",
                self.record_id
            )));
        }
        Ok(())
    }
}

/// Outcome of majority voting over one plate's predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub plate_id: PlateId,
    pub task: Task,
    pub backend_id: String,
    pub counts: BTreeMap<Label, u32>,
    pub winner: Label,
    pub tie_broken: bool,
    pub evidence: Vec<String>,
}

impl VoteTally {
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: &str| DomainError::InvalidTally {
            plate: self.plate_id.to_string(),
            reason: reason.to_string(),
        };
        if self.counts.values().any(|&c| c == 0) {
            return Err(fail("zero count"));
        }
        let total: u64 = self.counts.values().map(|&c| u64::from(c)).sum();
        if total != self.evidence.len() as u64 {
            return Err(fail("counts do not sum to evidence length"));
        }
        let Some(&winning) = self.counts.get(&self.winner) else {
            return Err(fail("winner missing from counts"));
        };
        let has_real = self.counts.keys().any(|l| !l.is_no_detection());
        if self.winner.is_no_detection() && has_real {
            return Err(fail("NO_DETECTION won against a real label"));
        }
        let dominated = self
            .counts
            .iter()
            .any(|(label, &count)| !label.is_no_detection() && count > winning);
        if dominated {
            return Err(fail("winner out-voted by another label"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// Deterministic plate-to-partition assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub val_fraction_of_remainder: f64,
    pub assignment: BTreeMap<PlateId, Partition>,
}

impl SplitManifest {
    pub fn partition_of(&self, plate: &PlateId) -> Option<Partition> {
        self.assignment.get(plate).copied()
    }

    pub fn plates_in(&self, partition: Partition) -> impl Iterator<Item = &PlateId> {
        self.assignment.iter().filter(move |(_, &p)| p == partition).map(|(plate, _)| plate)
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.plates_in(partition).count()
    }
}
