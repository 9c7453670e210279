//! Single-view prediction (top-1 per image) and multi-view inference
//! (plurality vote per plate).

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::backend::{run_batch, Backend, BackendOutput, ImageRequest};
use crate::domain::{DomainError, ImageRecord, Label, PlateId, Prediction, Task, Taxonomy, VoteTally};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("cannot tally an empty group")]
    EmptyGroup,
    #[error("predictions mix groups: {0}")]
    MixedGroup(String),
}

/// Identity of the image a prediction is about.
#[derive(Debug, Clone)]
pub struct PredictionContext<'a> {
    pub record_id: &'a str,
    pub plate_id: &'a PlateId,
    pub backend_id: &'a str,
    pub produced_at: DateTime<Utc>,
}

/// Top-1 rule. Detections: highest confidence, then larger box, then lower
/// class id. Rankings: first entry. Empty output is `NO_DETECTION`.
pub fn predict_single(
    output: &BackendOutput,
    taxonomy: &Taxonomy,
    ctx: &PredictionContext<'_>,
) -> Result<Prediction, AggregationError> {
    let top = match output {
        BackendOutput::Detections(detections) => detections
            .iter()
            .max_by(|a, b| {
                a.confidence
                    .total_cmp(&b.confidence)
                    .then_with(|| a.bbox.area().total_cmp(&b.bbox.area()))
                    .then_with(|| b.class_id.cmp(&a.class_id))
            })
            .map(|d| (d.class_name.as_str(), d.confidence)),
        BackendOutput::Ranking(ranking) => ranking.first().map(|r| (r.class_name.as_str(), r.confidence)),
    };
    let task = taxonomy.task;
    let prediction = match top {
        Some((name, confidence)) if confidence > 0.0 => {
            let label = taxonomy.canonicalize(name)?;
            Prediction::labelled(
                ctx.record_id,
                ctx.plate_id.clone(),
                task,
                ctx.backend_id,
                Label::new(label),
                confidence,
                ctx.produced_at,
            )?
        }
        _ => Prediction::no_detection(ctx.record_id, ctx.plate_id.clone(), task, ctx.backend_id, None, ctx.produced_at),
    };
    Ok(prediction)
}

/// Plurality vote over one plate's predictions.
///
/// Every prediction is counted, `NO_DETECTION` included, but the sentinel
/// only wins when nothing else was predicted. Ties among real labels go to
/// the larger confidence sum, then to the lexicographically smaller label;
/// either fallback sets `tie_broken`.
pub fn tally_votes(predictions: &[Prediction]) -> Result<VoteTally, AggregationError> {
    let first = predictions.first().ok_or(AggregationError::EmptyGroup)?;
    let mut counts: BTreeMap<Label, u32> = BTreeMap::new();
    let mut confidences: BTreeMap<&Label, Vec<f64>> = BTreeMap::new();
    let mut evidence = Vec::with_capacity(predictions.len());
    for p in predictions {
        if p.plate_id != first.plate_id || p.task != first.task || p.backend_id != first.backend_id {
            return Err(AggregationError::MixedGroup(format!(
                "({}, {}, {}) vs ({}, {}, {})",
                first.plate_id, first.task, first.backend_id, p.plate_id, p.task, p.backend_id
            )));
        }
        *counts.entry(p.label.clone()).or_default() += 1;
        if !p.label.is_no_detection() {
            confidences.entry(&p.label).or_default().push(p.confidence);
        }
        evidence.push(p.record_id.clone());
    }
    evidence.sort();

    let best = counts
        .iter()
        .filter(|(l, _)| !l.is_no_detection())
        .map(|(_, &c)| c)
        .max();
    let (winner, tie_broken) = match best {
        None => (Label::no_detection(), false),
        Some(best) => {
            let leaders: Vec<&Label> = counts
                .iter()
                .filter(|(l, &c)| !l.is_no_detection() && c == best)
                .map(|(l, _)| l)
                .collect();
            if leaders.len() == 1 {
                (leaders[0].clone(), false)
            } else {
                // Sum in sorted order so the result does not depend on input order.
                let score = |l: &Label| {
                    let mut v = confidences[l].clone();
                    v.sort_by(f64::total_cmp);
                    v.iter().sum::<f64>()
                };
                // `leaders` is ascending, so keeping the first maximum picks
                // the smaller label on equal sums.
                let mut chosen = leaders[0];
                let mut chosen_score = score(chosen);
                for &candidate in &leaders[1..] {
                    let s = score(candidate);
                    if s > chosen_score {
                        chosen = candidate;
                        chosen_score = s;
                    }
                }
                (chosen.clone(), true)
            }
        }
    };

    let tally = VoteTally {
        plate_id: first.plate_id.clone(),
        task: first.task,
        backend_id: first.backend_id.clone(),
        counts,
        winner,
        tie_broken,
        evidence,
    };
    tally.validate()?;
    Ok(tally)
}

/// Runs a backend over records and turns each result into a prediction.
/// Backend failures and labels outside the taxonomy become `NO_DETECTION`
/// rows carrying the error text. Output is sorted by record id.
pub fn run_svi(
    backend: &dyn Backend,
    records: &[ImageRecord],
    taxonomy: &Taxonomy,
    workers: usize,
    produced_at: DateTime<Utc>,
) -> Vec<Prediction> {
    let task = taxonomy.task;
    let requests: Vec<ImageRequest> = records.iter().map(|r| ImageRequest::from_record(r, task)).collect();
    let plates: BTreeMap<&str, &PlateId> = records.iter().map(|r| (r.record_id.as_str(), &r.plate_id)).collect();
    let backend_id = backend.descriptor().backend_id.clone();
    run_batch(backend, &requests, workers)
        .into_iter()
        .map(|item| {
            let plate = plates[item.record_id.as_str()];
            let ctx = PredictionContext {
                record_id: &item.record_id,
                plate_id: plate,
                backend_id: &backend_id,
                produced_at,
            };
            let failed = |error: String| {
                Prediction::no_detection(&item.record_id, plate.clone(), task, &backend_id, Some(error), produced_at)
            };
            match item.result {
                Ok(output) => predict_single(&output, taxonomy, &ctx).unwrap_or_else(|e| failed(e.to_string())),
                Err(e) => failed(e.to_string()),
            }
        })
        .collect()
}

/// One tally per `(plate, task, backend)`, ordered by that key.
pub fn run_mvi(predictions: &[Prediction]) -> Result<Vec<VoteTally>, AggregationError> {
    let mut groups: BTreeMap<(&PlateId, Task, &str), Vec<Prediction>> = BTreeMap::new();
    for p in predictions {
        groups
            .entry((&p.plate_id, p.task, p.backend_id.as_str()))
            .or_default()
            .push(p.clone());
    }
    groups.values().map(|group| tally_votes(group)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundingBox, Detection, RankedLabel};
    use proptest::prelude::*;

    fn at() -> DateTime<Utc> {
        DateTime::<Utc>::UNIX_EPOCH
    }

    fn vote(i: usize, label: &str, confidence: f64) -> Prediction {
        let plate = PlateId::parse("PLATE1").unwrap();
        if label == crate::domain::NO_DETECTION {
            Prediction::no_detection(format!("r{i:03}"), plate, Task::Make, "b", None, at())
        } else {
            Prediction::labelled(format!("r{i:03}"), plate, Task::Make, "b", label.into(), confidence, at()).unwrap()
        }
    }

    fn votes(spec: &[(&str, usize, f64)]) -> Vec<Prediction> {
        let mut out = Vec::new();
        for &(label, n, conf) in spec {
            for _ in 0..n {
                out.push(vote(out.len(), label, conf));
            }
        }
        out
    }

    fn make_taxonomy() -> Taxonomy {
        Taxonomy::new(
            Task::Make,
            vec!["Mercedes".into(), "BMW".into(), "Red".into()],
            [("Maroon".to_string(), "Red".to_string())].into(),
            0,
            None,
        )
        .unwrap()
    }

    fn det(name: &str, conf: f64, w: f64, class_id: u32) -> Detection {
        Detection::new(class_id, name, conf, BoundingBox::new(0.5, 0.5, w, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn top1_rules() {
        let tax = make_taxonomy();
        let plate = PlateId::parse("A").unwrap();
        let ctx = PredictionContext { record_id: "r", plate_id: &plate, backend_id: "b", produced_at: at() };
        let out = BackendOutput::Detections(vec![det("BMW", 0.7, 0.9, 1), det("Mercedes", 0.9, 0.1, 0)]);
        assert_eq!(predict_single(&out, &tax, &ctx).unwrap().label.as_str(), "Mercedes");
        let empty = predict_single(&BackendOutput::Detections(vec![]), &tax, &ctx).unwrap();
        assert!(empty.label.is_no_detection() && empty.confidence == 0.0);
        let merged = BackendOutput::Detections(vec![det("Maroon", 0.8, 0.3, 2)]);
        assert_eq!(predict_single(&merged, &tax, &ctx).unwrap().label.as_str(), "Red");
        let tied = BackendOutput::Detections(vec![det("BMW", 0.8, 0.2, 1), det("Mercedes", 0.8, 0.6, 0)]);
        assert_eq!(predict_single(&tied, &tax, &ctx).unwrap().label.as_str(), "Mercedes");
        let unknown = BackendOutput::Detections(vec![det("Lada", 0.8, 0.3, 9)]);
        assert!(matches!(predict_single(&unknown, &tax, &ctx), Err(AggregationError::Domain(_))));
        let ranking = BackendOutput::Ranking(vec![
            RankedLabel::new("BMW", 0.6).unwrap(),
            RankedLabel::new("Mercedes", 0.3).unwrap(),
        ]);
        assert_eq!(predict_single(&ranking, &tax, &ctx).unwrap().label.as_str(), "BMW");
        assert!(predict_single(&BackendOutput::Ranking(vec![]), &tax, &ctx).unwrap().no_detection);
    }

    #[test]
    fn three_of_four_votes_win() {
        let t = tally_votes(&votes(&[("Mercedes", 3, 0.8), ("NO_DETECTION", 1, 0.0)])).unwrap();
        assert_eq!(t.winner.as_str(), "Mercedes");
        assert!(!t.tie_broken);
        assert_eq!(t.counts[&Label::no_detection()], 1);
        assert_eq!(t.evidence.len(), 4);
    }

    #[test]
    fn sentinel_and_ties() {
        let t = tally_votes(&votes(&[("NO_DETECTION", 4, 0.0)])).unwrap();
        assert!(t.winner.is_no_detection());
        let t = tally_votes(&votes(&[("Toyota", 2, 0.75), ("Mazda", 2, 0.9)])).unwrap();
        assert_eq!(t.winner.as_str(), "Mazda");
        assert!(t.tie_broken);
        let t = tally_votes(&votes(&[("Red", 2, 0.6), ("NO_DETECTION", 5, 0.0)])).unwrap();
        assert_eq!(t.winner.as_str(), "Red");
        let t = tally_votes(&votes(&[("Toyota", 1, 0.7), ("Mazda", 1, 0.7)])).unwrap();
        assert_eq!(t.winner.as_str(), "Mazda");
        assert!(t.tie_broken);
    }

    #[test]
    fn mixed_group_rejected() {
        let mut v = votes(&[("Toyota", 2, 0.5)]);
        v[1].backend_id = "other".into();
        assert!(matches!(tally_votes(&v), Err(AggregationError::MixedGroup(_))));
        assert!(matches!(tally_votes(&[]), Err(AggregationError::EmptyGroup)));
    }

    #[test]
    fn mvi_groups_and_singletons() {
        let mut preds = votes(&[("Toyota", 3, 0.5)]);
        let other = PlateId::parse("PLATE2").unwrap();
        preds.push(Prediction::labelled("z1", other, Task::Make, "b", "Mazda".into(), 0.4, at()).unwrap());
        let tallies = run_mvi(&preds).unwrap();
        assert_eq!(tallies.len(), 2);
        assert_eq!(tallies[1].winner.as_str(), "Mazda");
        assert_eq!(tallies[1].evidence, vec!["z1".to_string()]);
        let mut reversed = preds.clone();
        reversed.reverse();
        assert_eq!(run_mvi(&reversed).unwrap(), tallies);
    }

    fn arb_votes() -> impl Strategy<Value = Vec<(u8, u8)>> {
        // (label index 0..4 where 4 = NO_DETECTION, confidence bucket)
        proptest::collection::vec((0u8..5, 1u8..=10), 1..12)
    }

    fn build(raw: &[(u8, u8)]) -> Vec<Prediction> {
        raw.iter()
            .enumerate()
            .map(|(i, &(l, c))| {
                let name = ["A", "B", "C", "D", crate::domain::NO_DETECTION][l as usize];
                vote(i, name, f64::from(c) / 10.0)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn permutation_invariance(raw in arb_votes(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let v = build(&raw);
            let mut shuffled = v.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(tally_votes(&v).unwrap(), tally_votes(&shuffled).unwrap());
        }

        #[test]
        fn adding_winner_vote_keeps_winner(raw in arb_votes()) {
            let mut v = build(&raw);
            let before = tally_votes(&v).unwrap();
            let conf = if before.winner.is_no_detection() { 0.0 } else { 0.5 };
            v.push(vote(v.len(), before.winner.as_str(), conf));
            prop_assert_eq!(tally_votes(&v).unwrap().winner, before.winner);
        }
    }
}
