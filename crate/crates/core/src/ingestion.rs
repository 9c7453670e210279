//! Manifest loading, YOLO label files, plate grouping and dataset layout
//! validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curation::select_primary_detection;
use crate::domain::{
    BoundingBox, Detection, DomainError, GeoPoint, GroundTruth, ImageRecord, Partition, PlateId,
    SplitManifest, Task,
};

/// Exact manifest header.
pub const MANIFEST_HEADER: [&str; 7] =
    ["record_id", "plate_id", "image_path", "label_path", "captured_at", "lat", "lon"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: row {row}, column {column}: {reason}")]
    Parse { path: PathBuf, row: u64, column: String, reason: String },
    #[error("{path}: duplicate record_id {record_id:?} at row {row}")]
    DuplicateRecordId { path: PathBuf, record_id: String, row: u64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {reason}")]
pub struct LabelParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub row: u64,
    pub record_id: String,
    pub plate_id: PlateId,
    pub image_path: String,
    pub label_path: Option<PathBuf>,
    pub captured_at: DateTime<Utc>,
    pub location: Option<GeoPoint>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// How to interpret the label files a manifest points at: which task they
/// annotate and the class list their `class_id`s index into.
#[derive(Debug, Clone)]
pub struct LabelSource {
    pub task: Task,
    pub classes: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, IngestError> {
        let parse_err = |row: u64, column: &str, reason: String| IngestError::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            reason,
        };
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| parse_err(1, "header", e.to_string()))?;
        if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
            return Err(parse_err(
                1,
                "header",
                format!("expected {:?}", MANIFEST_HEADER.join(",")),
            ));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = BTreeSet::new();
        let mut rows = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| {
                let row = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(row, "*", e.to_string())
            })?;
            let row = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| record.get(i).unwrap_or("").trim();

            let record_id = field(0).to_string();
            if record_id.is_empty() {
                return Err(parse_err(row, "record_id", "empty".into()));
            }
            if !seen.insert(record_id.clone()) {
                return Err(IngestError::DuplicateRecordId {
                    path: path.to_path_buf(),
                    record_id,
                    row,
                });
            }
            let plate_id =
                PlateId::parse(field(1)).map_err(|e| parse_err(row, "plate_id", e.to_string()))?;
            let image_path = field(2).to_string();
            if image_path.is_empty() {
                return Err(parse_err(row, "image_path", "empty".into()));
            }
            let label_path = match field(3) {
                "" => None,
                p => Some(base.join(p)),
            };
            let captured_at = DateTime::parse_from_rfc3339(field(4))
                .map(|t| t.with_timezone(&Utc))
                .map_err(|e| parse_err(row, "captured_at", format!("{:?}: {e}", field(4))))?;
            let coord = |i: usize, name: &str| -> Result<Option<f64>, IngestError> {
                match field(i) {
                    "" => Ok(None),
                    v => v
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|e| parse_err(row, name, format!("{v:?}: {e}"))),
                }
            };
            let location = match (coord(5, "lat")?, coord(6, "lon")?) {
                (Some(lat), Some(lon)) => Some(
                    GeoPoint::new(lat, lon).map_err(|e| parse_err(row, "lat", e.to_string()))?,
                ),
                (None, None) => None,
                _ => return Err(parse_err(row, "lat", "lat and lon must both be present".into())),
            };
            rows.push(ManifestRow {
                row,
                record_id,
                plate_id,
                image_path,
                label_path,
                captured_at,
                location,
            });
        }
        Ok(Manifest { path: path.to_path_buf(), rows })
    }

    /// Converts rows into records, attaching ground truth from the label
    /// files when a source is given. Label files with several boxes keep the
    /// largest one; empty label files leave the record without truth.
    pub fn into_records(self, labels: Option<&LabelSource>) -> Result<Vec<ImageRecord>, IngestError> {
        let mut records = Vec::with_capacity(self.rows.len());
        for row in self.rows {
            let mut ground_truth = BTreeMap::new();
            if let (Some(source), Some(label_path)) = (labels, row.label_path.as_ref()) {
                let text = fs::read_to_string(label_path)
                    .map_err(|e| IngestError::io(label_path, e))?;
                let entries = parse_yolo_label(&text).map_err(|e| IngestError::Parse {
                    path: label_path.clone(),
                    row: e.line as u64,
                    column: "label".into(),
                    reason: e.reason,
                })?;
                let detections = entries
                    .into_iter()
                    .map(|(class_id, bbox)| {
                        let name = source.classes.get(class_id as usize).ok_or_else(|| {
                            IngestError::Parse {
                                path: label_path.clone(),
                                row: row.row,
                                column: "class_id".into(),
                                reason: format!(
                                    "class {class_id} outside {} classes",
                                    source.classes.len()
                                ),
                            }
                        })?;
                        Ok(Detection::new(class_id, name.clone(), 1.0, bbox)
                            .expect("unit confidence is valid"))
                    })
                    .collect::<Result<Vec<_>, IngestError>>()?;
                if let Ok(primary) = select_primary_detection(&detections) {
                    ground_truth.insert(
                        source.task,
                        GroundTruth { label: primary.class_name.clone(), bbox: Some(primary.bbox) },
                    );
                }
            }
            records.push(ImageRecord {
                record_id: row.record_id,
                plate_id: row.plate_id,
                image_ref: row.image_path,
                captured_at: row.captured_at,
                location: row.location,
                ground_truth,
            });
        }
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        Ok(records)
    }
}

/// Loads a manifest without ground truth, sorted by record_id.
pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>, IngestError> {
    Manifest::load(path)?.into_records(None)
}

pub fn load_manifest_with_labels(
    path: &Path,
    labels: &LabelSource,
) -> Result<Vec<ImageRecord>, IngestError> {
    Manifest::load(path)?.into_records(Some(labels))
}

/// Parses a YOLO label file: one `class_id cx cy w h` per non-empty line.
pub fn parse_yolo_label(text: &str) -> Result<Vec<(u32, BoundingBox)>, LabelParseError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |reason: String| LabelParseError { line: line_no, reason };
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(err(format!("expected 5 tokens, found {}", tokens.len())));
        }
        let class_id: i64 = tokens[0]
            .parse()
            .map_err(|_| err(format!("class_id {:?} is not an integer", tokens[0])))?;
        if class_id < 0 || class_id > i64::from(u32::MAX) {
            return Err(err(format!("class_id {class_id} out of range")));
        }
        let mut coords = [0f64; 4];
        for (slot, token) in coords.iter_mut().zip(&tokens[1..]) {
            *slot = token
                .parse()
                .map_err(|_| err(format!("{token:?} is not a number")))?;
        }
        let bbox = BoundingBox::new(coords[0], coords[1], coords[2], coords[3])
            .map_err(|e: DomainError| err(e.to_string()))?;
        out.push((class_id as u32, bbox));
    }
    Ok(out)
}

/// Writes label lines with 6-decimal fixed point and LF endings.
pub fn format_yolo_label(entries: &[(u32, BoundingBox)]) -> String {
    let mut out = String::new();
    for (class_id, b) in entries {
        let _ = writeln!(out, "{class_id} {:.6} {:.6} {:.6} {:.6}", b.cx, b.cy, b.w, b.h);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateGroup {
    pub plate_id: PlateId,
    pub records: Vec<ImageRecord>,
}

/// Groups records by plate. Groups come out ordered by plate id, records
/// within a group by `(captured_at, record_id)`.
pub fn group_by_plate(records: &[ImageRecord]) -> Vec<PlateGroup> {
    let mut groups: BTreeMap<&PlateId, Vec<ImageRecord>> = BTreeMap::new();
    for record in records {
        groups.entry(&record.plate_id).or_default().push(record.clone());
    }
    groups
        .into_iter()
        .map(|(plate, mut records)| {
            records.sort_by(|a, b| {
                a.captured_at.cmp(&b.captured_at).then_with(|| a.record_id.cmp(&b.record_id))
            });
            PlateGroup { plate_id: plate.clone(), records }
        })
        .collect()
}

pub fn read_classes(path: &Path) -> io::Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingDirectory,
    MissingClasses,
    MissingLabel,
    OrphanLabel,
    LabelParse,
    ClassOutOfRange,
    InvalidSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub path: PathBuf,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    fn push(&mut self, kind: FindingKind, path: &Path, detail: impl Into<String>) {
        self.findings.push(Finding { kind, path: path.to_path_buf(), detail: detail.into() });
    }
}

fn stems(dir: &Path) -> io::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Checks a YOLO dataset tree and reports every violation found.
pub fn validate_dataset_dir(root: &Path) -> io::Result<ValidationReport> {
    let mut report = ValidationReport::default();
    if !root.is_dir() {
        return Err(io::Error::new(io::ErrorKind::NotFound, format!("{} is not a directory", root.display())));
    }
    let classes_path = root.join("classes.txt");
    let classes = if classes_path.is_file() {
        Some(read_classes(&classes_path)?)
    } else {
        report.push(FindingKind::MissingClasses, &classes_path, "classes.txt not found");
        None
    };

    let split_path = root.join("split.json");
    match fs::read(&split_path) {
        Ok(bytes) => {
            if let Err(e) = serde_json::from_slice::<SplitManifest>(&bytes) {
                report.push(FindingKind::InvalidSplit, &split_path, e.to_string());
            }
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            report.push(FindingKind::InvalidSplit, &split_path, "split.json not found");
        }
        Err(e) => return Err(e),
    }

    for partition in Partition::ALL {
        let image_dir = root.join("images").join(partition.as_str());
        let label_dir = root.join("labels").join(partition.as_str());
        let mut present = true;
        for dir in [&image_dir, &label_dir] {
            if !dir.is_dir() {
                report.push(FindingKind::MissingDirectory, dir, "directory not found");
                present = false;
            }
        }
        if !present {
            continue;
        }
        let images = stems(&image_dir)?;
        let labels = stems(&label_dir)?;
        for (stem, path) in &images {
            if !labels.contains_key(stem) {
                report.push(FindingKind::MissingLabel, path, format!("missing label for {stem}"));
            }
        }
        for (stem, path) in &labels {
            if !images.contains_key(stem) {
                report.push(FindingKind::OrphanLabel, path, format!("label without image {stem}"));
            }
            let text = fs::read_to_string(path)?;
            match parse_yolo_label(&text) {
                Ok(entries) => {
                    if let Some(classes) = &classes {
                        for (class_id, _) in entries {
                            if class_id as usize >= classes.len() {
                                report.push(
                                    FindingKind::ClassOutOfRange,
                                    path,
                                    format!("class {class_id} out of range ({} classes)", classes.len()),
                                );
                            }
                        }
                    }
                }
                Err(e) => report.push(FindingKind::LabelParse, path, e.to_string()),
            }
        }
    }
    Ok(report)
}

/// Ingested records keyed by record_id, persisted as sorted JSONL.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordSet {
    records: BTreeMap<String, ImageRecord>,
}

impl RecordSet {
    pub fn load(path: &Path) -> io::Result<Self> {
        let mut set = RecordSet::default();
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(set),
            Err(e) => return Err(e),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: ImageRecord = serde_json::from_str(line)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            set.records.insert(record.record_id.clone(), record);
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = String::new();
        for record in self.records.values() {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out)
    }

    /// Inserts or merges records. Ground truth for tasks is unioned, so
    /// ingesting per-task label sets one after another accumulates truth.
    pub fn merge(&mut self, incoming: impl IntoIterator<Item = ImageRecord>) {
        for record in incoming {
            match self.records.get_mut(&record.record_id) {
                Some(existing) => {
                    let mut truth = std::mem::take(&mut existing.ground_truth);
                    truth.extend(record.ground_truth.clone());
                    *existing = ImageRecord { ground_truth: truth, ..record };
                }
                None => {
                    self.records.insert(record.record_id.clone(), record);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, record_id: &str) -> Option<&ImageRecord> {
        self.records.get(record_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.values()
    }

    pub fn to_vec(&self) -> Vec<ImageRecord> {
        self.records.values().cloned().collect()
    }

    pub fn plates(&self) -> Vec<PlateId> {
        let set: BTreeSet<&PlateId> = self.records.values().map(|r| &r.plate_id).collect();
        set.into_iter().cloned().collect()
    }
}
