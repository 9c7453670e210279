//! SVI/MVI scoring, confusion matrices, report tables and the multi-view
//! gain simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregation::tally_votes;
use crate::backend::StochasticProfile;
use crate::domain::{Label, PlateId, Prediction, Task, VoteTally, NO_DETECTION};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no truth label for {0}")]
    MissingTruth(String),
    #[error("more than one tally for plate {0}")]
    DuplicateTally(PlateId),
    #[error("nothing to evaluate")]
    Empty,
}

/// Rows are truth labels, columns predicted labels; the last column is
/// `NO_DETECTION`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn new(mut labels: Vec<String>) -> Self {
        labels.retain(|l| l != NO_DETECTION);
        labels.push(NO_DETECTION.to_string());
        let n = labels.len();
        ConfusionMatrix { labels, counts: vec![vec![0; n]; n] }
    }

    fn index(&self, label: &str) -> usize {
        self.labels.iter().position(|l| l == label).expect("label registered")
    }

    pub fn get(&self, truth: &str, predicted: &str) -> u64 {
        self.counts[self.index(truth)][self.index(predicted)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, truth: &str) -> u64 {
        self.counts[self.index(truth)].iter().sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.labels.len() - 1).map(|i| self.counts[i][i]).sum()
    }

    pub fn no_detection_column(&self) -> u64 {
        let nd = self.labels.len() - 1;
        self.counts.iter().map(|row| row[nd]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub unknown_rate: f64,
    pub items: usize,
    pub confusion: ConfusionMatrix,
    pub per_class_accuracy: BTreeMap<String, f64>,
}

/// Shared fold: `pairs` are `(truth, predicted)`. Labels are ordered as in
/// `label_order`, with unseen labels appended alphabetically.
fn score<'a>(pairs: &[(&'a str, &'a str)], label_order: &[String]) -> Result<Scores, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut labels: Vec<String> = label_order.to_vec();
    let known: BTreeSet<&str> = label_order.iter().map(String::as_str).collect();
    let extra: BTreeSet<&str> = pairs
        .iter()
        .flat_map(|(t, p)| [*t, *p])
        .filter(|l| *l != NO_DETECTION && !known.contains(l))
        .collect();
    labels.extend(extra.into_iter().map(String::from));
    let mut confusion = ConfusionMatrix::new(labels);
    for (truth, predicted) in pairs {
        let (r, c) = (confusion.index(truth), confusion.index(predicted));
        confusion.counts[r][c] += 1;
    }
    let total = confusion.total() as f64;
    let mut per_class_accuracy = BTreeMap::new();
    for (i, label) in confusion.labels[..confusion.labels.len() - 1].iter().enumerate() {
        let support: u64 = confusion.counts[i].iter().sum();
        if support > 0 {
            per_class_accuracy.insert(label.clone(), confusion.counts[i][i] as f64 / support as f64);
        }
    }
    Ok(Scores {
        accuracy: confusion.diagonal() as f64 / total,
        unknown_rate: confusion.no_detection_column() as f64 / total,
        items: pairs.len(),
        confusion,
        per_class_accuracy,
    })
}

/// Per-image accuracy. `NO_DETECTION` counts as wrong and is also reported
/// as the unknown rate.
pub fn svi_accuracy(
    predictions: &[Prediction],
    truth: &BTreeMap<String, String>,
    label_order: &[String],
) -> Result<Scores, EvalError> {
    let pairs = predictions
        .iter()
        .map(|p| {
            truth
                .get(&p.record_id)
                .map(|t| (t.as_str(), p.label.as_str()))
                .ok_or_else(|| EvalError::MissingTruth(p.record_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    score(&pairs, label_order)
}

/// Per-plate accuracy of the voted winners, same unknown policy as SVI.
pub fn mvi_accuracy(
    tallies: &[VoteTally],
    truth_per_plate: &BTreeMap<PlateId, String>,
    label_order: &[String],
) -> Result<Scores, EvalError> {
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(tallies.len());
    for t in tallies {
        if !seen.insert(&t.plate_id) {
            return Err(EvalError::DuplicateTally(t.plate_id.clone()));
        }
        let truth = truth_per_plate
            .get(&t.plate_id)
            .ok_or_else(|| EvalError::MissingTruth(t.plate_id.to_string()))?;
        pairs.push((truth.as_str(), t.winner.as_str()));
    }
    score(&pairs, label_order)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub taxonomy_digest: String,
    pub split_seed: Option<u64>,
    pub predictions_digest: String,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub backend_id: String,
    pub svi_accuracy: f64,
    pub mvi_accuracy: f64,
    pub unknown_rate_svi: f64,
    pub unknown_rate_mvi: f64,
    /// Plate-level (MVI) confusion.
    pub confusion_matrix: ConfusionMatrix,
    pub svi_confusion_matrix: ConfusionMatrix,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub images: usize,
    pub plates: usize,
    pub provenance: Provenance,
}

pub fn evaluate(
    task: Task,
    predictions: &[Prediction],
    tallies: &[VoteTally],
    truth_per_record: &BTreeMap<String, String>,
    truth_per_plate: &BTreeMap<PlateId, String>,
    label_order: &[String],
    provenance: Provenance,
) -> Result<EvalReport, EvalError> {
    let svi = svi_accuracy(predictions, truth_per_record, label_order)?;
    let mvi = mvi_accuracy(tallies, truth_per_plate, label_order)?;
    Ok(EvalReport {
        task,
        backend_id: provenance.backend_id.clone(),
        svi_accuracy: svi.accuracy,
        mvi_accuracy: mvi.accuracy,
        unknown_rate_svi: svi.unknown_rate,
        unknown_rate_mvi: mvi.unknown_rate,
        confusion_matrix: mvi.confusion,
        svi_confusion_matrix: svi.confusion,
        per_class_accuracy: mvi.per_class_accuracy,
        images: svi.items,
        plates: mvi.items,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub size: String,
    pub svi: f64,
    pub mvi: f64,
    pub unknown_svi: f64,
    pub unknown_mvi: f64,
}

impl ReportRow {
    pub fn from_eval(model: impl Into<String>, size: impl Into<String>, report: &EvalReport) -> Self {
        ReportRow {
            model: model.into(),
            size: size.into(),
            svi: report.svi_accuracy,
            mvi: report.mvi_accuracy,
            unknown_svi: report.unknown_rate_svi,
            unknown_mvi: report.unknown_rate_mvi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: Task,
    pub rows: Vec<ReportRow>,
    pub provenance: BTreeMap<String, Provenance>,
}

const SIZE_ORDER: [&str; 5] = ["nano", "small", "medium", "large", "x-large"];

fn ordered_unique<'a>(values: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn size_columns<'a>(rows: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut sizes = ordered_unique(rows);
    // Known sizes first in model-family order, the rest as they appeared.
    sizes.sort_by_key(|s| {
        SIZE_ORDER.iter().position(|k| k.eq_ignore_ascii_case(s)).unwrap_or(SIZE_ORDER.len())
    });
    sizes
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Grid of the cells the report actually contains: one row per
/// `(model, inference)` and one column per size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportGrid {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// `(row, column)` of the best MVI cell, counting data cells only.
    pub best_mvi: Option<(usize, usize)>,
}

pub fn report_grid(report: &Report) -> ReportGrid {
    let models = ordered_unique(report.rows.iter().map(|r| r.model.as_str()));
    let sizes = size_columns(report.rows.iter().map(|r| r.size.as_str()));
    let cell = |model: &str, size: &str| report.rows.iter().find(|r| r.model == model && r.size == size);

    let best = report
        .rows
        .iter()
        .max_by(|a, b| a.mvi.total_cmp(&b.mvi))
        .map(|r| (r.model.as_str(), r.size.as_str()));

    let mut header = vec!["Model".to_string(), "Inference".to_string()];
    header.extend(sizes.iter().map(|s| s.to_string()));
    let mut rows = Vec::new();
    let mut best_mvi = None;
    for model in &models {
        for (inference, is_mvi) in [("SVI", false), ("MVI", true)] {
            let mut row = vec![model.to_string(), inference.to_string()];
            for (col, size) in sizes.iter().enumerate() {
                let text = match cell(model, size) {
                    Some(r) => {
                        let value = if is_mvi { r.mvi } else { r.svi };
                        if is_mvi && best == Some((model, size)) {
                            best_mvi = Some((rows.len(), col));
                            format!("**{}**", pct(value))
                        } else {
                            pct(value)
                        }
                    }
                    None => "-".to_string(),
                };
                row.push(text);
            }
            rows.push(row);
        }
    }
    ReportGrid { header, rows, best_mvi }
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

/// Markdown grid with models as row pairs (SVI, MVI) and sizes as columns;
/// the best MVI accuracy is bolded. Values are percentages.
pub fn render_markdown(report: &Report) -> String {
    let grid = report_grid(report);
    let mut out = format!("### {} accuracy (%)\n\n", report.task);
    out.push_str(&markdown_table(&grid.header, &grid.rows));
    let has_unknown = report.rows.iter().any(|r| r.unknown_svi > 0.0 || r.unknown_mvi > 0.0);
    if has_unknown {
        out.push_str("\nUnknown (NO_DETECTION) rates:\n\n");
        let header: Vec<String> =
            ["Model", "Size", "SVI unknown", "MVI unknown"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| vec![r.model.clone(), r.size.clone(), pct(r.unknown_svi), pct(r.unknown_mvi)])
            .collect();
        out.push_str(&markdown_table(&header, &rows));
    }
    out
}

/// One cell of a side-by-side variant comparison (e.g. zero-shot vs
/// fine-tuned).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub attribute: String,
    pub size: String,
    pub variant: String,
    pub accuracy: f64,
}

/// Rows are `(attribute, size)`, one column per variant.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let variants = ordered_unique(rows.iter().map(|r| r.variant.as_str()));
    let attributes = ordered_unique(rows.iter().map(|r| r.attribute.as_str()));
    let mut header = vec!["Attribute".to_string(), "Size".to_string()];
    header.extend(variants.iter().map(|v| format!("{v} (%)")));
    let mut body = Vec::new();
    for attribute in &attributes {
        let sizes = size_columns(rows.iter().filter(|r| r.attribute == *attribute).map(|r| r.size.as_str()));
        for size in sizes {
            let mut row = vec![attribute.to_string(), size.to_string()];
            for variant in &variants {
                let cell = rows
                    .iter()
                    .find(|r| r.attribute == *attribute && r.size == size && r.variant == *variant);
                row.push(cell.map_or_else(|| "-".to_string(), |r| pct(r.accuracy)));
            }
            body.push(row);
        }
    }
    markdown_table(&header, &body)
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub svi_est: f64,
    pub mvi_est: f64,
    pub analytic_mvi: Option<f64>,
    pub plates: usize,
    pub views: usize,
}

/// Largest outcome space the analytic path will enumerate.
pub const MAX_ENUMERATED_OUTCOMES: f64 = 1e6;

/// Monte Carlo SVI and MVI accuracy for `plates` plates of `views` images
/// each, voted with [`tally_votes`], plus the exact MVI probability where it
/// is cheap to compute.
pub fn simulate_mvi_gain(
    profile: &StochasticProfile,
    num_labels: usize,
    views: usize,
    plates: usize,
) -> SimulationResult {
    assert!(views >= 1 && plates >= 1 && num_labels >= 1, "simulation needs k, n, labels >= 1");
    let labels: Vec<String> = (0..num_labels).map(|i| format!("L{i}")).collect();
    let at = chrono::DateTime::<chrono::Utc>::UNIX_EPOCH;

    let per_plate = par::map_range(plates, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        rng.set_stream(i as u64);
        let truth = i % num_labels;
        let plate = PlateId::parse(&format!("SIM{i}")).expect("valid plate");
        let mut correct_views = 0usize;
        let predictions: Vec<Prediction> = (0..views)
            .map(|v| {
                let view = profile.draw(&mut rng, truth, num_labels);
                let record = format!("{i}-{v}");
                match view.label {
                    Some(l) => {
                        if l == truth {
                            correct_views += 1;
                        }
                        Prediction::labelled(
                            record,
                            plate.clone(),
                            Task::Make,
                            "sim",
                            Label::new(labels[l].clone()),
                            view.confidence,
                            at,
                        )
                        .expect("valid prediction")
                    }
                    None => Prediction::no_detection(record, plate.clone(), Task::Make, "sim", None, at),
                }
            })
            .collect();
        let tally = tally_votes(&predictions).expect("homogeneous group");
        (correct_views, tally.winner.as_str() == labels[truth])
    });

    let correct_views: usize = per_plate.iter().map(|(c, _)| c).sum();
    let correct_plates = per_plate.iter().filter(|(_, ok)| *ok).count();
    SimulationResult {
        svi_est: correct_views as f64 / (plates * views) as f64,
        mvi_est: correct_plates as f64 / plates as f64,
        analytic_mvi: analytic_mvi(profile.p_correct, profile.p_no_detection, num_labels, views),
        plates,
        views,
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact probability that the plurality vote names the true label.
///
/// Two labels, no misses and odd `k` use the binomial tail directly. Other
/// cases enumerate vote-count vectors; ties among real labels credit the
/// truth with `1/t`, since confidences are i.i.d. and each of `t` tied labels
/// is equally likely to hold the largest confidence sum. Returns `None` when
/// the outcome space exceeds [`MAX_ENUMERATED_OUTCOMES`].
pub fn analytic_mvi(p_correct: f64, p_no_detection: f64, num_labels: usize, views: usize) -> Option<f64> {
    let k = views as u64;
    if num_labels == 2 && p_no_detection == 0.0 && views % 2 == 1 {
        let q = 1.0 - p_correct;
        let need = k / 2 + 1;
        return Some(
            (need..=k)
                .map(|j| binomial(k, j) * p_correct.powi(j as i32) * q.powi((k - j) as i32))
                .sum(),
        );
    }
    let wrong = num_labels.saturating_sub(1);
    let (p_wrong_each, p_none) = if wrong == 0 {
        (0.0, 1.0 - p_correct)
    } else {
        (((1.0 - p_correct - p_no_detection) / wrong as f64).max(0.0), p_no_detection)
    };
    // categories: truth, wrong_1..wrong_m, none
    let categories = num_labels + 1;
    let outcome_vectors = binomial(k + categories as u64 - 1, categories as u64 - 1);
    if outcome_vectors > MAX_ENUMERATED_OUTCOMES {
        return None;
    }
    let mut probs = vec![p_correct];
    probs.extend(std::iter::repeat_n(p_wrong_each, wrong));
    probs.push(p_none);

    fn walk(
        idx: usize,
        remaining: u64,
        counts: &mut Vec<u64>,
        probs: &[f64],
        total: u64,
        acc: &mut f64,
    ) {
        if idx == probs.len() - 1 {
            counts.push(remaining);
            let real = &counts[..counts.len() - 1];
            let best = *real.iter().max().expect("truth category");
            if best > 0 && real[0] == best {
                let tied = real.iter().filter(|&&c| c == best).count() as f64;
                // multinomial coefficient times outcome probability
                let mut coef = 1.0;
                let mut left = total;
                for &c in counts.iter() {
                    coef *= binomial(left, c);
                    left -= c;
                }
                let p: f64 = counts.iter().zip(probs).map(|(&c, &p)| p.powi(c as i32)).product();
                *acc += coef * p / tied;
            }
            counts.pop();
            return;
        }
        for c in 0..=remaining {
            counts.push(c);
            walk(idx + 1, remaining - c, counts, probs, total, acc);
            counts.pop();
        }
    }

    let mut acc = 0.0;
    walk(0, k, &mut Vec::with_capacity(categories), &probs, k, &mut acc);
    Some(acc)
}

/// Plain-text summary of a simulation, used by the CLI.
pub fn describe_simulation(result: &SimulationResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "plates={} views={}", result.plates, result.views);
    let _ = writeln!(out, "svi_est={:.5}", result.svi_est);
    let _ = writeln!(out, "mvi_est={:.5}", result.mvi_est);
    match result.analytic_mvi {
        Some(a) => {
            let _ = writeln!(out, "analytic_mvi={a:.5}");
        }
        None => {
            let _ = writeln!(out, "analytic_mvi=n/a");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn at() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    fn pred(record: &str, plate: &str, label: &str) -> Prediction {
        let plate = PlateId::parse(plate).unwrap();
        if label == NO_DETECTION {
            Prediction::no_detection(record, plate, Task::Make, "b", None, at())
        } else {
            Prediction::labelled(record, plate, Task::Make, "b", label.into(), 0.9, at()).unwrap()
        }
    }

    #[test]
    fn svi_ten_images() {
        let mut preds = Vec::new();
        let mut truth = BTreeMap::new();
        for i in 0..10 {
            let id = format!("r{i}");
            truth.insert(id.clone(), "T".to_string());
            let label = match i {
                8 => "F",
                9 => NO_DETECTION,
                _ => "T",
            };
            preds.push(pred(&id, "P", label));
        }
        let s = svi_accuracy(&preds, &truth, &["T".into(), "F".into()]).unwrap();
        assert!((s.accuracy - 0.8).abs() < 1e-12);
        assert!((s.unknown_rate - 0.1).abs() < 1e-12);
        assert_eq!(s.confusion.get("T", "F"), 1);
        assert_eq!(s.confusion.row_sum("T"), 10);
    }

    #[test]
    fn svi_all_unknown_and_missing_truth() {
        let preds: Vec<_> = (0..3).map(|i| pred(&format!("r{i}"), "P", NO_DETECTION)).collect();
        let truth: BTreeMap<_, _> = (0..3).map(|i| (format!("r{i}"), "T".to_string())).collect();
        let s = svi_accuracy(&preds, &truth, &[]).unwrap();
        assert_eq!(s.accuracy, 0.0);
        assert_eq!(s.unknown_rate, 1.0);
        let partial: BTreeMap<_, _> = truth.into_iter().take(2).collect();
        assert!(matches!(svi_accuracy(&preds, &partial, &[]), Err(EvalError::MissingTruth(_))));
    }

    #[test]
    fn mvi_four_plates() {
        let mk = |plate: &str, winner: &str| VoteTally {
            plate_id: PlateId::parse(plate).unwrap(),
            task: Task::Make,
            backend_id: "b".into(),
            counts: [(Label::new(winner), 1)].into(),
            winner: Label::new(winner),
            tie_broken: false,
            evidence: vec![format!("{plate}-1")],
        };
        let tallies = vec![mk("A", "T"), mk("B", "T"), mk("C", "F"), mk("D", NO_DETECTION)];
        let truth: BTreeMap<_, _> = ["A", "B", "C", "D"]
            .iter()
            .map(|p| (PlateId::parse(p).unwrap(), "T".to_string()))
            .collect();
        let s = mvi_accuracy(&tallies, &truth, &[]).unwrap();
        assert!((s.accuracy - 0.5).abs() < 1e-12);
        assert!((s.unknown_rate - 0.25).abs() < 1e-12);
        let mut dup = tallies.clone();
        dup.push(mk("A", "T"));
        assert!(matches!(mvi_accuracy(&dup, &truth, &[]), Err(EvalError::DuplicateTally(_))));
    }

    #[test]
    fn grid_shape_and_best_cell() {
        let mut rows = Vec::new();
        for (m, model) in ["YOLO-v11", "YOLO-World", "YOLO-Classification"].iter().enumerate() {
            for (s, size) in ["X-Large", "Small", "Large"].iter().enumerate() {
                rows.push(ReportRow {
                    model: model.to_string(),
                    size: size.to_string(),
                    svi: 0.8,
                    mvi: 0.9 + 0.001 * (m * 3 + s) as f64,
                    unknown_svi: 0.0,
                    unknown_mvi: 0.0,
                });
            }
        }
        let report = Report { task: Task::Make, rows, provenance: BTreeMap::new() };
        let grid = report_grid(&report);
        assert_eq!(grid.rows.len(), 6);
        assert_eq!(grid.header, ["Model", "Inference", "Small", "Large", "X-Large"]);
        // best is YOLO-Classification / Large -> MVI row 5, column 1
        assert_eq!(grid.best_mvi, Some((5, 1)));
        assert!(render_markdown(&report).contains("**90.80**"));

        let single = Report {
            task: Task::Shape,
            rows: vec![ReportRow {
                model: "m".into(),
                size: "small".into(),
                svi: 0.5,
                mvi: 0.6,
                unknown_svi: 0.1,
                unknown_mvi: 0.0,
            }],
            provenance: BTreeMap::new(),
        };
        let g = report_grid(&single);
        assert_eq!(g.rows.len(), 2);
        assert_eq!(g.header.len(), 3);
        assert!(render_markdown(&single).contains("Unknown"));
    }

    #[test]
    fn comparison_table() {
        let rows: Vec<ComparisonRow> = [("Make", "Small", "No Fine Tuning", 0.018), ("Make", "Small", "Fine Tuning", 0.937)]
            .iter()
            .map(|(a, s, v, acc)| ComparisonRow {
                attribute: a.to_string(),
                size: s.to_string(),
                variant: v.to_string(),
                accuracy: *acc,
            })
            .collect();
        let md = render_comparison(&rows);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("No Fine Tuning (%)") && lines[0].contains("Fine Tuning (%)"));
        assert!(lines[2].contains("1.80") && lines[2].contains("93.70"));
    }

    #[test]
    fn simulation_degenerate_and_k1() {
        let perfect = StochasticProfile::new(1.0, 0.0, 1).unwrap();
        let r = simulate_mvi_gain(&perfect, 3, 4, 200);
        assert_eq!((r.svi_est, r.mvi_est), (1.0, 1.0));
        assert!((analytic_mvi(0.8, 0.0, 2, 1).unwrap() - 0.8).abs() < 1e-12);
        assert!((analytic_mvi(0.8, 0.0, 2, 5).unwrap() - 0.94208).abs() < 1e-12);
        assert!(analytic_mvi(0.5, 0.1, 40, 30).is_none());
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let profile = StochasticProfile::new(0.6, 0.1, 99).unwrap();
        let a = simulate_mvi_gain(&profile, 3, 3, 2000);
        let b = simulate_mvi_gain(&profile, 3, 3, 2000);
        assert_eq!(a, b);
    }
}
