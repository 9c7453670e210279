//! Per-plate attribute index backed by an append-only event log.
//!
//! Layout of a store directory:
//!
//! ```text
//! records.jsonl        ingested image records
//! events.jsonl         {"seq","kind","payload","checksum"} rows
//! snapshot.json        state rebuilt from the log
//! store.json           active backend per task
//! taxonomies/<t>.json  one taxonomy per task
//! split.json           plate partition
//! ```
//!
//! The snapshot is a pure function of the log; replaying `events.jsonl`
//! reproduces it byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{GeoPoint, ImageRecord, Label, PlateId, Prediction, Task, Taxonomy, VoteTally};
use crate::ingestion::RecordSet;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const CONFIG_FILE: &str = "store.json";
pub const SPLIT_FILE: &str = "split.json";
pub const TAXONOMY_DIR: &str = "taxonomies";

pub const MAX_PAGE: usize = 500;
pub const DEFAULT_PAGE: usize = 50;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log corrupt at seq {seq}: {reason}")]
    StoreCorrupt { seq: u64, reason: String },
    #[error("plate {0} not found")]
    NotFound(String),
    #[error("unknown label {label:?} for task {task}")]
    UnknownLabel { task: Task, label: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Tally,
    Correction,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::Tally => "tally",
            EventKind::Correction => "correction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub checksum: String,
}

impl EventRow {
    fn new(seq: u64, kind: EventKind, payload: serde_json::Value) -> Self {
        let checksum = Self::compute_checksum(seq, kind, &payload);
        EventRow { seq, kind, payload, checksum }
    }

    pub fn compute_checksum(seq: u64, kind: EventKind, payload: &serde_json::Value) -> String {
        let mut hasher = Sha256::new();
        hasher.update(seq.to_string().as_bytes());
        hasher.update(b"\n");
        hasher.update(kind.as_str().as_bytes());
        hasher.update(b"\n");
        hasher.update(serde_json::to_string(payload).expect("value serializes").as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub record_id: String,
    pub captured_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<GeoPoint>,
}

impl Sighting {
    pub fn from_record(record: &ImageRecord) -> Self {
        Sighting { record_id: record.record_id.clone(), captured_at: record.captured_at, location: record.location }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyPayload {
    pub tally: VoteTally,
    pub predictions: Vec<Prediction>,
    pub sightings: Vec<Sighting>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub plate_id: PlateId,
    pub task: Task,
    pub label: Label,
    pub author: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyEntry {
    pub tally: VoteTally,
    pub predictions: BTreeMap<String, Prediction>,
    pub dangling_evidence: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateState {
    /// task -> backend -> latest tally
    pub tallies: BTreeMap<Task, BTreeMap<String, TallyEntry>>,
    /// task -> corrections in append order
    pub corrections: BTreeMap<Task, Vec<Correction>>,
    pub sightings: BTreeMap<String, Sighting>,
}

impl PlateState {
    fn last_seen(&self) -> Option<DateTime<Utc>> {
        self.sightings.values().map(|s| s.captured_at).max()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub last_seq: u64,
    /// First backend seen per task; overridable through the store config.
    pub default_backend: BTreeMap<Task, String>,
    pub plates: BTreeMap<PlateId, PlateState>,
}

impl StoreState {
    fn apply(&mut self, event: &EventRow) -> Result<(), StoreError> {
        let corrupt = |reason: String| StoreError::StoreCorrupt { seq: event.seq, reason };
        let expected = EventRow::compute_checksum(event.seq, event.kind, &event.payload);
        if expected != event.checksum {
            return Err(corrupt("checksum mismatch".into()));
        }
        if event.seq != self.last_seq + 1 {
            return Err(corrupt(format!("expected seq {}", self.last_seq + 1)));
        }
        match event.kind {
            EventKind::Tally => {
                let payload: TallyPayload =
                    serde_json::from_value(event.payload.clone()).map_err(|e| corrupt(e.to_string()))?;
                payload.tally.validate().map_err(|e| corrupt(e.to_string()))?;
                let tally = payload.tally;
                let plate = self.plates.entry(tally.plate_id.clone()).or_default();
                for s in payload.sightings {
                    plate.sightings.insert(s.record_id.clone(), s);
                }
                let predictions: BTreeMap<String, Prediction> =
                    payload.predictions.into_iter().map(|p| (p.record_id.clone(), p)).collect();
                let dangling = tally
                    .evidence
                    .iter()
                    .filter(|id| !predictions.contains_key(*id))
                    .cloned()
                    .collect();
                self.default_backend.entry(tally.task).or_insert_with(|| tally.backend_id.clone());
                plate
                    .tallies
                    .entry(tally.task)
                    .or_default()
                    .insert(tally.backend_id.clone(), TallyEntry { tally, predictions, dangling_evidence: dangling });
            }
            EventKind::Correction => {
                let correction: Correction =
                    serde_json::from_value(event.payload.clone()).map_err(|e| corrupt(e.to_string()))?;
                let plate = self
                    .plates
                    .get_mut(&correction.plate_id)
                    .ok_or_else(|| corrupt(format!("correction for unknown plate {}", correction.plate_id)))?;
                plate.corrections.entry(correction.task).or_default().push(correction);
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }

    pub fn replay(events: &[EventRow]) -> Result<Self, StoreError> {
        let mut state = StoreState::default();
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("state serializes");
        bytes.push(b'\n');
        bytes
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    #[serde(default)]
    pub active_backend: BTreeMap<Task, String>,
}

/// What one attribute of a plate looks like to a reader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeView {
    pub backend_id: String,
    pub winner: Label,
    /// Newest correction if any, otherwise the voted winner.
    pub effective: Label,
    pub corrected: bool,
    pub tie_broken: bool,
    pub counts: BTreeMap<Label, u32>,
    pub evidence: Vec<String>,
    pub dangling_evidence: Vec<String>,
    pub correction: Option<Correction>,
    /// Newest first.
    pub correction_history: Vec<Correction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateProfile {
    pub plate_id: PlateId,
    pub attributes: BTreeMap<Task, AttributeView>,
    pub backends: BTreeMap<Task, Vec<String>>,
    pub last_seen: Option<DateTime<Utc>>,
    pub sightings: Vec<Sighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<Prediction>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoBox {
    fn contains(&self, p: &GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub labels: BTreeMap<Task, BTreeSet<String>>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub area: Option<GeoBox>,
    pub include_unknown: bool,
    pub offset: usize,
    pub limit: usize,
}

impl Default for Query {
    fn default() -> Self {
        Query {
            labels: BTreeMap::new(),
            from: None,
            to: None,
            area: None,
            include_unknown: false,
            offset: 0,
            limit: DEFAULT_PAGE,
        }
    }
}

impl Query {
    pub fn with_labels(mut self, task: Task, labels: &[&str]) -> Self {
        self.labels.entry(task).or_default().extend(labels.iter().map(|s| s.to_string()));
        self
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let has_filter = self.labels.values().any(|s| !s.is_empty())
            || self.from.is_some()
            || self.to.is_some()
            || self.area.is_some();
        if !has_filter {
            return Err(StoreError::InvalidQuery("at least one filter is required".into()));
        }
        if let (Some(from), Some(to)) = (self.from, self.to) {
            if from > to {
                return Err(StoreError::InvalidQuery("time window ends before it starts".into()));
            }
        }
        if let Some(b) = self.area {
            let ordered = b.lat_min <= b.lat_max && b.lon_min <= b.lon_max;
            let in_range = [b.lat_min, b.lat_max].iter().all(|v| (-90.0..=90.0).contains(v))
                && [b.lon_min, b.lon_max].iter().all(|v| (-180.0..=180.0).contains(v));
            if !ordered || !in_range {
                return Err(StoreError::InvalidQuery("geographic box is not well ordered".into()));
            }
        }
        if self.limit == 0 || self.limit > MAX_PAGE {
            return Err(StoreError::InvalidQuery(format!("limit must be in 1..={MAX_PAGE}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPage {
    pub total: usize,
    pub items: Vec<PlateProfile>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertOutcome {
    pub appended: usize,
    pub unchanged: usize,
    /// `(plate, record)` pairs whose evidence has no matching prediction.
    pub dangling: Vec<(PlateId, String)>,
}

/// The attribute index. Mutations go through `&mut self`; callers that need
/// concurrent readers wrap it in a lock.
#[derive(Debug)]
pub struct Store {
    dir: Option<PathBuf>,
    state: StoreState,
    config: StoreConfig,
    taxonomies: BTreeMap<Task, Taxonomy>,
}

impl Store {
    pub fn in_memory(taxonomies: impl IntoIterator<Item = Taxonomy>) -> Self {
        Store {
            dir: None,
            state: StoreState::default(),
            config: StoreConfig::default(),
            taxonomies: taxonomies.into_iter().map(|t| (t.task, t)).collect(),
        }
    }

    /// Opens (or initializes) a store directory and replays its event log.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let taxonomies = load_taxonomies(dir)?;
        let events = read_events(dir)?;
        let state = StoreState::replay(&events)?;
        let config_path = dir.join(CONFIG_FILE);
        let config = match fs::read(&config_path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| StoreError::Invalid(format!("{}: {e}", config_path.display())))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => StoreConfig::default(),
            Err(e) => return Err(io_err(&config_path)(e)),
        };
        let store = Store { dir: Some(dir.to_path_buf()), state, config, taxonomies };
        store.write_snapshot()?;
        Ok(store)
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn taxonomies(&self) -> &BTreeMap<Task, Taxonomy> {
        &self.taxonomies
    }

    pub fn plate_count(&self) -> usize {
        self.state.plates.len()
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        self.state.snapshot_bytes()
    }

    fn write_snapshot(&self) -> Result<(), StoreError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(SNAPSHOT_FILE);
            let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
            fs::write(&tmp, self.snapshot_bytes()).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        Ok(())
    }

    fn append(&mut self, kind: EventKind, payload: serde_json::Value) -> Result<(), StoreError> {
        let event = EventRow::new(self.state.last_seq + 1, kind, payload);
        let mut next = self.state.clone();
        next.apply(&event)?;
        if let Some(dir) = &self.dir {
            let path = dir.join(EVENTS_FILE);
            let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        }
        self.state = next;
        self.write_snapshot()
    }

    pub fn set_active_backend(&mut self, task: Task, backend_id: &str) -> Result<(), StoreError> {
        self.config.active_backend.insert(task, backend_id.to_string());
        if let Some(dir) = &self.dir {
            let path = dir.join(CONFIG_FILE);
            let bytes = serde_json::to_vec_pretty(&self.config).expect("config serializes");
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn active_backend(&self, task: Task) -> Option<&str> {
        self.config
            .active_backend
            .get(&task)
            .or_else(|| self.state.default_backend.get(&task))
            .map(String::as_str)
    }

    /// Applies tallies with their supporting predictions. Re-applying a tally
    /// identical to the stored one for `(plate, task, backend)` is a no-op.
    pub fn upsert_results(
        &mut self,
        tallies: &[VoteTally],
        predictions: &[Prediction],
        records: &RecordSet,
    ) -> Result<UpsertOutcome, StoreError> {
        let mut by_key: BTreeMap<(&str, Task, &str), &Prediction> = BTreeMap::new();
        for p in predictions {
            by_key.insert((p.backend_id.as_str(), p.task, p.record_id.as_str()), p);
        }
        let mut sightings_by_plate: BTreeMap<&PlateId, Vec<Sighting>> = BTreeMap::new();
        for record in records.iter() {
            sightings_by_plate.entry(&record.plate_id).or_default().push(Sighting::from_record(record));
        }

        let mut outcome = UpsertOutcome::default();
        for tally in tallies {
            tally.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
            let mut support = Vec::new();
            for id in &tally.evidence {
                match by_key.get(&(tally.backend_id.as_str(), tally.task, id.as_str())) {
                    Some(p) if p.plate_id == tally.plate_id => support.push((*p).clone()),
                    _ => outcome.dangling.push((tally.plate_id.clone(), id.clone())),
                }
            }
            let sightings = sightings_by_plate.get(&tally.plate_id).cloned().unwrap_or_default();

            let existing = self
                .state
                .plates
                .get(&tally.plate_id)
                .and_then(|p| p.tallies.get(&tally.task))
                .and_then(|m| m.get(&tally.backend_id));
            let sightings_known = self.state.plates.get(&tally.plate_id).is_some_and(|p| {
                sightings.iter().all(|s| p.sightings.get(&s.record_id) == Some(s))
            });
            let unchanged = existing.is_some_and(|entry| {
                entry.tally == *tally
                    && entry.predictions.len() == support.len()
                    && support.iter().all(|p| entry.predictions.get(&p.record_id) == Some(p))
            }) && sightings_known;
            if unchanged {
                outcome.unchanged += 1;
                continue;
            }
            let payload = TallyPayload { tally: tally.clone(), predictions: support, sightings };
            self.append(EventKind::Tally, serde_json::to_value(&payload).expect("payload serializes"))?;
            outcome.appended += 1;
        }
        Ok(outcome)
    }

    pub fn submit_correction(
        &mut self,
        plate_id: &PlateId,
        task: Task,
        label: &str,
        author: &str,
        at: DateTime<Utc>,
    ) -> Result<PlateProfile, StoreError> {
        if !self.state.plates.contains_key(plate_id) {
            return Err(StoreError::NotFound(plate_id.to_string()));
        }
        let unknown = || StoreError::UnknownLabel { task, label: label.to_string() };
        let label = if label == crate::domain::NO_DETECTION {
            Label::no_detection()
        } else {
            let taxonomy = self.taxonomies.get(&task).ok_or_else(unknown)?;
            Label::new(taxonomy.canonicalize(label).map_err(|_| unknown())?)
        };
        if author.trim().is_empty() {
            return Err(StoreError::Invalid("author must not be empty".into()));
        }
        let correction = Correction { plate_id: plate_id.clone(), task, label, author: author.to_string(), at };
        self.append(EventKind::Correction, serde_json::to_value(&correction).expect("serializes"))?;
        self.get_plate(plate_id)
    }

    fn view(&self, plate: &PlateState, task: Task) -> Option<AttributeView> {
        let backend = self.active_backend(task)?;
        let entry = plate.tallies.get(&task)?.get(backend)?;
        let history = plate.corrections.get(&task).cloned().unwrap_or_default();
        let newest = history.last().cloned();
        let effective = newest.as_ref().map_or_else(|| entry.tally.winner.clone(), |c| c.label.clone());
        Some(AttributeView {
            backend_id: backend.to_string(),
            winner: entry.tally.winner.clone(),
            effective,
            corrected: newest.is_some(),
            tie_broken: entry.tally.tie_broken,
            counts: entry.tally.counts.clone(),
            evidence: entry.tally.evidence.clone(),
            dangling_evidence: entry.dangling_evidence.clone(),
            correction: newest,
            correction_history: history.into_iter().rev().collect(),
        })
    }

    fn profile(&self, plate_id: &PlateId, plate: &PlateState, with_evidence: bool) -> PlateProfile {
        let attributes = Task::ALL
            .iter()
            .filter_map(|&task| self.view(plate, task).map(|v| (task, v)))
            .collect();
        let backends = plate
            .tallies
            .iter()
            .map(|(task, by_backend)| (*task, by_backend.keys().cloned().collect()))
            .collect();
        let mut sightings: Vec<Sighting> = plate.sightings.values().cloned().collect();
        sightings.sort_by(|a, b| a.captured_at.cmp(&b.captured_at).then_with(|| a.record_id.cmp(&b.record_id)));
        let evidence = with_evidence.then(|| {
            Task::ALL
                .iter()
                .filter_map(|&task| {
                    let backend = self.active_backend(task)?;
                    plate.tallies.get(&task)?.get(backend)
                })
                .flat_map(|entry| entry.predictions.values().cloned())
                .collect()
        });
        PlateProfile {
            plate_id: plate_id.clone(),
            attributes,
            backends,
            last_seen: plate.last_seen(),
            sightings,
            evidence,
        }
    }

    pub fn get_plate(&self, plate_id: &PlateId) -> Result<PlateProfile, StoreError> {
        let plate = self
            .state
            .plates
            .get(plate_id)
            .ok_or_else(|| StoreError::NotFound(plate_id.to_string()))?;
        Ok(self.profile(plate_id, plate, true))
    }

    fn matches(&self, plate: &PlateState, query: &Query, filters: &BTreeMap<Task, BTreeSet<String>>) -> bool {
        for (&task, wanted) in filters {
            if wanted.is_empty() {
                continue;
            }
            let Some(view) = self.view(plate, task) else {
                return false;
            };
            let ok = if view.effective.is_no_detection() {
                query.include_unknown
            } else {
                wanted.contains(view.effective.as_str())
            };
            if !ok {
                return false;
            }
        }
        if query.from.is_none() && query.to.is_none() && query.area.is_none() {
            return true;
        }
        plate.sightings.values().any(|s| {
            query.from.is_none_or(|from| s.captured_at >= from)
                && query.to.is_none_or(|to| s.captured_at <= to)
                && query.area.is_none_or(|area| s.location.is_some_and(|loc| area.contains(&loc)))
        })
    }

    /// Conjunctive attribute/time/area search, most recently seen first.
    pub fn search(&self, query: &Query) -> Result<SearchPage, StoreError> {
        query.validate()?;
        // Accept aliases in filters (e.g. Maroon finds Red plates).
        let filters: BTreeMap<Task, BTreeSet<String>> = query
            .labels
            .iter()
            .map(|(task, labels)| {
                let canonical = labels
                    .iter()
                    .map(|l| match self.taxonomies.get(task) {
                        Some(t) => t.canonicalize(l).unwrap_or_else(|_| l.clone()),
                        None => l.clone(),
                    })
                    .collect();
                (*task, canonical)
            })
            .collect();
        let mut hits: Vec<(&PlateId, &PlateState)> = self
            .state
            .plates
            .iter()
            .filter(|(_, plate)| self.matches(plate, query, &filters))
            .collect();
        hits.sort_by(|(a_id, a), (b_id, b)| b.last_seen().cmp(&a.last_seen()).then_with(|| a_id.cmp(b_id)));
        let total = hits.len();
        let items = hits
            .into_iter()
            .skip(query.offset)
            .take(query.limit)
            .map(|(id, plate)| self.profile(id, plate, false))
            .collect();
        Ok(SearchPage { total, items })
    }
}

pub fn read_events(dir: &Path) -> Result<Vec<EventRow>, StoreError> {
    let path = dir.join(EVENTS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| StoreError::StoreCorrupt {
                seq: i as u64 + 1,
                reason: format!("unparseable row: {e}"),
            })
        })
        .collect()
}

pub fn load_taxonomies(dir: &Path) -> Result<BTreeMap<Task, Taxonomy>, StoreError> {
    let tax_dir = dir.join(TAXONOMY_DIR);
    let mut out = BTreeMap::new();
    for task in Task::ALL {
        let path = tax_dir.join(format!("{task}.json"));
        match fs::read(&path) {
            Ok(bytes) => {
                let taxonomy: Taxonomy = serde_json::from_slice(&bytes)
                    .map_err(|e| StoreError::Invalid(format!("{}: {e}", path.display())))?;
                taxonomy.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
                out.insert(task, taxonomy);
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
    }
    Ok(out)
}

pub fn save_taxonomy(dir: &Path, taxonomy: &Taxonomy) -> Result<(), StoreError> {
    let tax_dir = dir.join(TAXONOMY_DIR);
    fs::create_dir_all(&tax_dir).map_err(io_err(&tax_dir))?;
    let path = tax_dir.join(format!("{}.json", taxonomy.task));
    let bytes = serde_json::to_vec_pretty(taxonomy).expect("taxonomy serializes");
    fs::write(&path, bytes).map_err(io_err(&path))
}
