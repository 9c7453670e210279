//! Dataset curation: primary-box selection, plate conflict removal, label
//! merging, low-frequency filtering, plate-disjoint splits and per-task
//! YOLO dataset building.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    BoundingBox, Detection, DomainError, ImageRecord, Partition, PlateId, SplitManifest, Task,
    Taxonomy,
};
use crate::ingestion::{format_yolo_label, group_by_plate, PlateGroup};

pub const DEFAULT_TEST_FRACTION: f64 = 0.30;
pub const DEFAULT_VAL_FRACTION_OF_REMAINDER: f64 = 0.20;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("no detections to choose from")]
    EmptyInput,
    #[error("split of {plates} plates leaves a partition empty (test={test}, val={val}, train={train})")]
    DegenerateSplit { plates: usize, test: usize, val: usize, train: usize },
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("partition {0} is empty after filtering")]
    EmptyPartition(Partition),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CurationError + '_ {
    move |source| CurationError::Io { path: path.to_path_buf(), source }
}

/// Picks the annotation/detection with the largest box area. Ties go to
/// higher confidence, then lower class id.
pub fn select_primary_detection(detections: &[Detection]) -> Result<&Detection, CurationError> {
    detections
        .iter()
        .max_by(|a, b| {
            a.bbox
                .area()
                .total_cmp(&b.bbox.area())
                .then_with(|| a.confidence.total_cmp(&b.confidence))
                .then_with(|| b.class_id.cmp(&a.class_id))
        })
        .ok_or(CurationError::EmptyInput)
}

/// Resolves a record's raw ground truth into a canonical label for one task.
///
/// Colour-binary truth is taken from an explicit `colour_binary` annotation
/// when present, otherwise derived from the colour annotation through the
/// colour merge map and the bright/dark map.
#[derive(Debug, Clone, Copy)]
pub struct LabelResolver<'a> {
    pub taxonomy: &'a Taxonomy,
    pub colour: Option<&'a Taxonomy>,
}

impl<'a> LabelResolver<'a> {
    pub fn new(taxonomy: &'a Taxonomy) -> Self {
        LabelResolver { taxonomy, colour: None }
    }

    pub fn with_colour(taxonomy: &'a Taxonomy, colour: Option<&'a Taxonomy>) -> Self {
        LabelResolver { taxonomy, colour }
    }

    pub fn task(&self) -> Task {
        self.taxonomy.task
    }

    /// `Ok(None)` when the record carries no truth for the task.
    pub fn resolve(&self, record: &ImageRecord) -> Result<Option<String>, DomainError> {
        let task = self.taxonomy.task;
        if let Some(truth) = record.ground_truth.get(&task) {
            return self.taxonomy.canonicalize(&truth.label).map(Some);
        }
        if task != Task::ColourBinary {
            return Ok(None);
        }
        let Some(colour) = record.ground_truth.get(&Task::Colour) else {
            return Ok(None);
        };
        let canonical = match self.colour {
            Some(c) => c.canonicalize(&colour.label)?,
            None => colour.label.clone(),
        };
        Ok(Some(self.taxonomy.binarize_colour(&canonical)?.as_str().to_string()))
    }

    fn bbox(&self, record: &ImageRecord) -> Option<BoundingBox> {
        let task = self.taxonomy.task;
        record
            .ground_truth
            .get(&task)
            .or_else(|| (task == Task::ColourBinary).then(|| record.ground_truth.get(&Task::Colour)).flatten())
            .and_then(|t| t.bbox)
    }
}

/// Plates whose records disagree on the canonical label for the task.
/// Records without truth, or with labels outside the taxonomy, are ignored
/// here and handled by the dataset builder.
pub fn detect_plate_conflicts(groups: &[PlateGroup], resolver: &LabelResolver<'_>) -> Vec<PlateId> {
    groups
        .iter()
        .filter(|group| {
            let labels: BTreeSet<String> = group
                .records
                .iter()
                .filter_map(|r| resolver.resolve(r).ok().flatten())
                .collect();
            labels.len() >= 2
        })
        .map(|g| g.plate_id.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyFilter {
    pub kept_labels: BTreeSet<String>,
    pub dropped_labels: BTreeSet<String>,
    pub dropped_plates: Vec<PlateId>,
    pub warnings: Vec<String>,
}

/// Drops labels supported by fewer than `min_plate_frequency` plates,
/// together with those plates. Counting is per plate, not per image.
pub fn filter_low_frequency(
    plate_labels: &BTreeMap<PlateId, String>,
    min_plate_frequency: u32,
) -> FrequencyFilter {
    let mut support: BTreeMap<&str, u32> = BTreeMap::new();
    for label in plate_labels.values() {
        *support.entry(label.as_str()).or_default() += 1;
    }
    let mut out = FrequencyFilter::default();
    for (label, count) in support {
        if count >= min_plate_frequency {
            out.kept_labels.insert(label.to_string());
        } else {
            out.dropped_labels.insert(label.to_string());
        }
    }
    out.dropped_plates = plate_labels
        .iter()
        .filter(|(_, label)| out.dropped_labels.contains(*label))
        .map(|(plate, _)| plate.clone())
        .collect();
    if out.kept_labels.is_empty() && !plate_labels.is_empty() {
        out.warnings.push(format!(
            "threshold {min_plate_frequency} removed every label; dataset is empty"
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOptions {
    pub test_fraction: f64,
    pub val_fraction_of_remainder: f64,
    /// For fewer than three plates: assign everything to train instead of
    /// failing with `DegenerateSplit`.
    pub small_set_fallback: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction_of_remainder: DEFAULT_VAL_FRACTION_OF_REMAINDER,
            small_set_fallback: false,
        }
    }
}

// Nearest integer, halves rounded up. The slack absorbs products like
// 0.3 * 5 landing a hair under 1.5.
fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Partition sizes `(test, val, train)` for `n` plates.
pub fn split_sizes(n: usize, test_fraction: f64, val_fraction_of_remainder: f64) -> (usize, usize, usize) {
    let test = round_half_up(n as f64 * test_fraction).min(n);
    let rest = n - test;
    let val = round_half_up(rest as f64 * val_fraction_of_remainder).min(rest);
    (test, val, rest - val)
}

/// Seeded plate-disjoint split. Plates are sorted, shuffled with a seeded
/// Fisher-Yates pass, then cut into test, val and train in that order.
pub fn make_split(plates: &[PlateId], seed: u64, options: SplitOptions) -> Result<SplitManifest, CurationError> {
    for f in [options.test_fraction, options.val_fraction_of_remainder] {
        if !(f > 0.0 && f < 1.0) {
            return Err(CurationError::InvalidFraction(f));
        }
    }
    let mut ordered: Vec<PlateId> = plates.to_vec();
    ordered.sort();
    ordered.dedup();
    let n = ordered.len();
    let manifest = |assignment| SplitManifest {
        seed,
        test_fraction: options.test_fraction,
        val_fraction_of_remainder: options.val_fraction_of_remainder,
        assignment,
    };

    let (test, val, train) = split_sizes(n, options.test_fraction, options.val_fraction_of_remainder);
    if n < 3 {
        if options.small_set_fallback {
            return Ok(manifest(ordered.into_iter().map(|p| (p, Partition::Train)).collect()));
        }
        return Err(CurationError::DegenerateSplit { plates: n, test, val, train });
    }
    if test == 0 || val == 0 || train == 0 {
        return Err(CurationError::DegenerateSplit { plates: n, test, val, train });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);
    let assignment = ordered
        .into_iter()
        .enumerate()
        .map(|(i, plate)| {
            let partition = if i < test {
                Partition::Test
            } else if i < test + val {
                Partition::Val
            } else {
                Partition::Train
            };
            (plate, partition)
        })
        .collect();
    Ok(manifest(assignment))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageFinding {
    pub plate_id: PlateId,
    pub partitions: BTreeSet<Partition>,
}

/// Reports every plate that shows up in more than one partition, across the
/// split itself and all built datasets.
pub fn check_leakage(split: &SplitManifest, datasets: &[&TaskDataset]) -> Vec<LeakageFinding> {
    let mut seen: BTreeMap<&PlateId, BTreeSet<Partition>> = BTreeMap::new();
    for (plate, partition) in &split.assignment {
        seen.entry(plate).or_default().insert(*partition);
    }
    for dataset in datasets {
        for entry in &dataset.entries {
            seen.entry(&entry.plate_id).or_default().insert(entry.partition);
        }
    }
    seen.into_iter()
        .filter(|(_, parts)| parts.len() > 1)
        .map(|(plate, partitions)| LeakageFinding { plate_id: plate.clone(), partitions })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub partition: Partition,
    pub plate_id: PlateId,
    pub record_id: String,
    pub image_ref: String,
    pub label: String,
    pub class_id: u32,
    pub bbox: BoundingBox,
}

/// Why records or plates were left out of a task dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub missing_truth_records: Vec<String>,
    pub unknown_label_records: Vec<String>,
    pub conflict_plates: Vec<PlateId>,
    pub low_frequency_plates: Vec<PlateId>,
    pub low_frequency_labels: BTreeSet<String>,
    pub unassigned_plates: Vec<PlateId>,
    pub unseen_in_train_plates: Vec<PlateId>,
}

/// Store-wide curation outcome for one task, before any split is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub task: Task,
    pub taxonomy_digest: String,
    /// Canonical label per surviving plate.
    pub plate_labels: BTreeMap<PlateId, String>,
    pub dropped: DropSummary,
    pub warnings: Vec<String>,
}

/// Applies truth resolution, conflict removal and frequency filtering.
pub fn curate_task(records: &[ImageRecord], resolver: &LabelResolver<'_>) -> CurationReport {
    let mut dropped = DropSummary::default();
    let mut usable = Vec::new();
    for record in records {
        match resolver.resolve(record) {
            Ok(Some(_)) => usable.push(record.clone()),
            Ok(None) => dropped.missing_truth_records.push(record.record_id.clone()),
            Err(_) => dropped.unknown_label_records.push(record.record_id.clone()),
        }
    }
    let groups = group_by_plate(&usable);
    dropped.conflict_plates = detect_plate_conflicts(&groups, resolver);
    let conflicts: BTreeSet<&PlateId> = dropped.conflict_plates.iter().collect();

    let mut plate_labels = BTreeMap::new();
    for group in &groups {
        if conflicts.contains(&group.plate_id) {
            continue;
        }
        let label = resolver
            .resolve(&group.records[0])
            .ok()
            .flatten()
            .expect("usable records resolve");
        plate_labels.insert(group.plate_id.clone(), label);
    }
    let freq = filter_low_frequency(&plate_labels, resolver.taxonomy.min_plate_frequency);
    for plate in &freq.dropped_plates {
        plate_labels.remove(plate);
    }
    dropped.low_frequency_plates = freq.dropped_plates;
    dropped.low_frequency_labels = freq.dropped_labels;

    CurationReport {
        task: resolver.task(),
        taxonomy_digest: resolver.taxonomy.digest(),
        plate_labels,
        dropped,
        warnings: freq.warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task: Task,
    /// Class list written to `classes.txt`; index == class id.
    pub classes: Vec<String>,
    pub entries: Vec<DatasetEntry>,
    pub dropped: DropSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub images: usize,
    pub plates: usize,
}

/// Per-partition image and plate counts for one task dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub task: Task,
    pub classes: usize,
    pub total_plates: usize,
    pub total_images: usize,
    pub train: PartitionCounts,
    pub val: PartitionCounts,
    pub test: PartitionCounts,
}

impl TaskDataset {
    pub fn partition_entries(&self, partition: Partition) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.partition == partition)
    }

    pub fn classes_in(&self, partition: Partition) -> BTreeSet<&str> {
        self.partition_entries(partition).map(|e| e.label.as_str()).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let counts = |p: Partition| {
            let plates: BTreeSet<&PlateId> = self.partition_entries(p).map(|e| &e.plate_id).collect();
            PartitionCounts { images: self.partition_entries(p).count(), plates: plates.len() }
        };
        let (train, val, test) = (counts(Partition::Train), counts(Partition::Val), counts(Partition::Test));
        DatasetSummary {
            task: self.task,
            classes: self.classes.len(),
            total_plates: train.plates + val.plates + test.plates,
            total_images: train.images + val.images + test.images,
            train,
            val,
            test,
        }
    }
}

/// Builds the in-memory dataset for one task. Every filter runs over the
/// whole record set before partitioning, so train, val and test see the
/// same rules; afterwards val/test plates whose class never reached train
/// are removed.
pub fn plan_task_dataset(
    records: &[ImageRecord],
    resolver: &LabelResolver<'_>,
    split: &SplitManifest,
) -> Result<TaskDataset, CurationError> {
    let report = curate_task(records, resolver);
    let mut dropped = report.dropped;

    let mut plate_partition: BTreeMap<&PlateId, Partition> = BTreeMap::new();
    for plate in report.plate_labels.keys() {
        match split.partition_of(plate) {
            Some(p) => {
                plate_partition.insert(plate, p);
            }
            None => dropped.unassigned_plates.push(plate.clone()),
        }
    }
    let train_labels: BTreeSet<&str> = plate_partition
        .iter()
        .filter(|(_, &p)| p == Partition::Train)
        .map(|(plate, _)| report.plate_labels[*plate].as_str())
        .collect();
    plate_partition.retain(|plate, partition| {
        let keep = *partition == Partition::Train
            || train_labels.contains(report.plate_labels[*plate].as_str());
        if !keep {
            dropped.unseen_in_train_plates.push((*plate).clone());
        }
        keep
    });

    let classes: Vec<String> = resolver
        .taxonomy
        .labels
        .iter()
        .filter(|l| train_labels.contains(l.as_str()))
        .cloned()
        .collect();
    let class_ids: BTreeMap<&str, u32> =
        classes.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();

    let mut entries = Vec::new();
    for record in records {
        let Some(&partition) = plate_partition.get(&record.plate_id) else {
            continue;
        };
        let Ok(Some(label)) = resolver.resolve(record) else {
            continue;
        };
        entries.push(DatasetEntry {
            partition,
            plate_id: record.plate_id.clone(),
            record_id: record.record_id.clone(),
            image_ref: record.image_ref.clone(),
            class_id: class_ids[label.as_str()],
            bbox: resolver.bbox(record).unwrap_or_else(BoundingBox::full_frame),
            label,
        });
    }
    entries.sort_by(|a, b| a.partition.cmp(&b.partition).then_with(|| a.record_id.cmp(&b.record_id)));

    let dataset = TaskDataset {
        task: resolver.task(),
        classes,
        entries,
        dropped,
        warnings: report.warnings,
    };
    for partition in Partition::ALL {
        if dataset.partition_entries(partition).next().is_none() {
            return Err(CurationError::EmptyPartition(partition));
        }
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMode {
    Copy,
    #[cfg(unix)]
    Symlink,
}

fn file_stem(record_id: &str) -> String {
    record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn sorted_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Writes `images/`, `labels/`, `classes.txt`, `split.json` and
/// `summary.json` under `out_dir`. Images are copied (or linked) from each
/// record's `image_ref`, which must be a readable local path.
pub fn write_task_dataset(
    dataset: &TaskDataset,
    split: &SplitManifest,
    out_dir: &Path,
    mode: ImageMode,
) -> Result<DatasetSummary, CurationError> {
    for partition in Partition::ALL {
        for kind in ["images", "labels"] {
            let dir = out_dir.join(kind).join(partition.as_str());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
    }
    for entry in &dataset.entries {
        let stem = file_stem(&entry.record_id);
        let source = Path::new(&entry.image_ref);
        let ext = source.extension().and_then(|e| e.to_str()).unwrap_or("jpg");
        let image_dest = out_dir
            .join("images")
            .join(entry.partition.as_str())
            .join(format!("{stem}.{ext}"));
        match mode {
            ImageMode::Copy => {
                fs::copy(source, &image_dest).map_err(io_err(source))?;
            }
            #[cfg(unix)]
            ImageMode::Symlink => {
                let absolute = fs::canonicalize(source).map_err(io_err(source))?;
                let _ = fs::remove_file(&image_dest);
                std::os::unix::fs::symlink(absolute, &image_dest).map_err(io_err(&image_dest))?;
            }
        }
        let label_dest = out_dir
            .join("labels")
            .join(entry.partition.as_str())
            .join(format!("{stem}.txt"));
        fs::write(&label_dest, format_yolo_label(&[(entry.class_id, entry.bbox)]))
            .map_err(io_err(&label_dest))?;
    }

    let classes_path = out_dir.join("classes.txt");
    let classes: String = dataset.classes.iter().map(|c| format!("{c}\n")).collect();
    fs::write(&classes_path, classes).map_err(io_err(&classes_path))?;

    let split_path = out_dir.join("split.json");
    fs::write(&split_path, sorted_json(split)).map_err(io_err(&split_path))?;

    let summary = dataset.summary();
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, sorted_json(&summary)).map_err(io_err(&summary_path))?;
    Ok(summary)
}

pub fn build_task_dataset(
    records: &[ImageRecord],
    resolver: &LabelResolver<'_>,
    split: &SplitManifest,
    out_dir: &Path,
    mode: ImageMode,
) -> Result<(TaskDataset, DatasetSummary), CurationError> {
    let dataset = plan_task_dataset(records, resolver, split)?;
    let summary = write_task_dataset(&dataset, split, out_dir, mode)?;
    Ok((dataset, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GroundTruth, Tone};
    use chrono::{DateTime, Utc};
    use proptest::prelude::*;

    fn det(class_id: u32, conf: f64, w: f64, h: f64) -> Detection {
        Detection::new(class_id, format!("c{class_id}"), conf, BoundingBox::new(0.5, 0.5, w, h).unwrap())
            .unwrap()
    }

    fn plates(n: usize) -> Vec<PlateId> {
        (0..n).map(|i| PlateId::parse(&format!("P{i:05}")).unwrap()).collect()
    }

    fn record(id: &str, plate: &str, task: Task, label: &str) -> ImageRecord {
        ImageRecord {
            record_id: id.into(),
            plate_id: PlateId::parse(plate).unwrap(),
            image_ref: format!("{id}.jpg"),
            captured_at: DateTime::<Utc>::UNIX_EPOCH,
            location: None,
            ground_truth: [(task, GroundTruth { label: label.into(), bbox: None })].into(),
        }
    }

    fn colour_taxonomy() -> Taxonomy {
        Taxonomy::new(
            Task::Colour,
            ["Red", "White", "Beige"].iter().map(|s| s.to_string()).collect(),
            [("Maroon", "Red"), ("Gold", "Beige")]
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn primary_detection_rules() {
        let big = det(3, 0.1, 0.4, 0.3); // 0.12
        let small = det(1, 0.9, 0.3, 0.2); // 0.06
        assert_eq!(select_primary_detection(&[small.clone(), big.clone()]).unwrap(), &big);
        let a = det(4, 0.9, 0.5, 0.2);
        let b = det(2, 0.7, 0.5, 0.2);
        assert_eq!(select_primary_detection(&[b.clone(), a.clone()]).unwrap(), &a);
        let c = det(1, 0.7, 0.5, 0.2);
        assert_eq!(select_primary_detection(&[b, c.clone()]).unwrap(), &c);
        assert_eq!(select_primary_detection(std::slice::from_ref(&small)).unwrap(), &small);
        assert!(matches!(select_primary_detection(&[]), Err(CurationError::EmptyInput)));
    }

    #[test]
    fn conflicts_after_canonicalization() {
        let make = Taxonomy::new(Task::Make, vec!["Toyota".into(), "Mazda".into()], BTreeMap::new(), 0, None)
            .unwrap();
        let recs = vec![
            record("a1", "A", Task::Make, "Toyota"),
            record("a2", "A", Task::Make, "Toyota"),
            record("a3", "A", Task::Make, "Mazda"),
            record("b1", "B", Task::Make, "Toyota"),
            record("b2", "B", Task::Make, "Toyota"),
        ];
        let groups = group_by_plate(&recs);
        let flagged = detect_plate_conflicts(&groups, &LabelResolver::new(&make));
        assert_eq!(flagged, vec![PlateId::parse("A").unwrap()]);

        let colour = colour_taxonomy();
        let recs = vec![record("c1", "C", Task::Colour, "Red"), record("c2", "C", Task::Colour, "Maroon")];
        assert!(detect_plate_conflicts(&group_by_plate(&recs), &LabelResolver::new(&colour)).is_empty());
    }

    #[test]
    fn frequency_filter() {
        let mut labels = BTreeMap::new();
        for i in 0..5 {
            labels.insert(PlateId::parse(&format!("A{i}")).unwrap(), "A".to_string());
        }
        for i in 0..2 {
            labels.insert(PlateId::parse(&format!("B{i}")).unwrap(), "B".to_string());
        }
        let out = filter_low_frequency(&labels, 3);
        assert_eq!(out.kept_labels, BTreeSet::from(["A".to_string()]));
        assert_eq!(out.dropped_plates.len(), 2);
        assert!(out.warnings.is_empty());

        let identity = filter_low_frequency(&labels, 0);
        assert_eq!(identity.kept_labels.len(), 2);
        assert!(identity.dropped_plates.is_empty());

        let all = filter_low_frequency(&labels, 6);
        assert!(all.kept_labels.is_empty());
        assert_eq!(all.dropped_plates.len(), 7);
        assert_eq!(all.warnings.len(), 1);
    }

    #[test]
    fn split_hundred() {
        let split = make_split(&plates(100), 42, SplitOptions::default()).unwrap();
        assert_eq!(split.count(Partition::Test), 30);
        assert_eq!(split.count(Partition::Val), 14);
        assert_eq!(split.count(Partition::Train), 56);
        let again = make_split(&plates(100), 42, SplitOptions::default()).unwrap();
        assert_eq!(split, again);
        let other = make_split(&plates(100), 43, SplitOptions::default()).unwrap();
        assert_ne!(split.assignment, other.assignment);
    }

    #[test]
    fn split_small_sets() {
        let err = make_split(&plates(2), 1, SplitOptions::default()).unwrap_err();
        assert!(matches!(err, CurationError::DegenerateSplit { plates: 2, .. }));
        let fallback = make_split(&plates(2), 1, SplitOptions { small_set_fallback: true, ..Default::default() })
            .unwrap();
        assert_eq!(fallback.count(Partition::Train), 2);
        // 3 plates: test=1, val=round(0.4)=0 -> degenerate
        assert!(matches!(make_split(&plates(3), 1, SplitOptions::default()), Err(CurationError::DegenerateSplit { .. })));
        assert!(make_split(&plates(10), 1, SplitOptions { test_fraction: 1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn split_ignores_input_order() {
        let mut shuffled = plates(40);
        shuffled.reverse();
        assert_eq!(
            make_split(&plates(40), 9, SplitOptions::default()).unwrap(),
            make_split(&shuffled, 9, SplitOptions::default()).unwrap()
        );
    }

    #[test]
    fn rounding_ties_go_up() {
        // 5 * 0.3 = 1.5 -> 2 test; remainder 3 * 0.5 = 1.5 -> 2 val
        assert_eq!(split_sizes(5, 0.3, 0.5), (2, 2, 1));
        assert_eq!(split_sizes(97, 0.3, 0.2), (29, 14, 54));
    }

    #[test]
    fn leakage() {
        let split = make_split(&plates(10), 3, SplitOptions::default()).unwrap();
        assert!(check_leakage(&split, &[]).is_empty());
        let train_plate = split.plates_in(Partition::Train).next().unwrap().clone();
        let entry = |partition, rid: &str| DatasetEntry {
            partition,
            plate_id: train_plate.clone(),
            record_id: rid.into(),
            image_ref: String::new(),
            label: "x".into(),
            class_id: 0,
            bbox: BoundingBox::full_frame(),
        };
        let same = TaskDataset {
            task: Task::Make,
            classes: vec!["x".into()],
            entries: vec![entry(Partition::Train, "r1"), entry(Partition::Train, "r2")],
            dropped: DropSummary::default(),
            warnings: vec![],
        };
        assert!(check_leakage(&split, &[&same]).is_empty());
        let mut leaky = same.clone();
        leaky.entries.push(entry(Partition::Test, "r3"));
        let findings = check_leakage(&split, &[&leaky]);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].partitions, BTreeSet::from([Partition::Train, Partition::Test]));
    }

    #[test]
    fn binary_truth_derived_from_colour() {
        let colour = colour_taxonomy();
        let binary = Taxonomy::new(
            Task::ColourBinary,
            vec!["bright".into(), "dark".into()],
            BTreeMap::new(),
            0,
            Some(
                [("Red", Tone::Dark), ("White", Tone::Bright), ("Beige", Tone::Bright)]
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect(),
            ),
        )
        .unwrap();
        let resolver = LabelResolver::with_colour(&binary, Some(&colour));
        let r = record("m", "M", Task::Colour, "Maroon");
        assert_eq!(resolver.resolve(&r).unwrap().as_deref(), Some("dark"));
        let g = record("g", "G", Task::Colour, "Gold");
        assert_eq!(resolver.resolve(&g).unwrap().as_deref(), Some("bright"));
    }

    proptest! {
        #[test]
        fn split_is_partition_and_deterministic(n in 3usize..400, seed in any::<u64>()) {
            let ps = plates(n);
            match make_split(&ps, seed, SplitOptions::default()) {
                Ok(split) => {
                    prop_assert_eq!(split.assignment.len(), n);
                    let test = split.count(Partition::Test);
                    let val = split.count(Partition::Val);
                    prop_assert!((test as f64 - n as f64 * 0.3).abs() <= 1.0);
                    prop_assert!((val as f64 - (n - test) as f64 * 0.2).abs() <= 1.0);
                    prop_assert_eq!(split.clone(), make_split(&ps, seed, SplitOptions::default()).unwrap());
                }
                Err(CurationError::DegenerateSplit { .. }) => prop_assert!(n < 8),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
