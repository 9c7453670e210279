use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use chrono::{DateTime, Utc};

use fleetlens_core::aggregation::tally_votes;
use fleetlens_core::ingestion::RecordSet;
use fleetlens_core::store::save_taxonomy;
use fleetlens_core::{GeoPoint, ImageRecord, Label, PlateId, Prediction, Query, Store, Task, Taxonomy, NO_DETECTION};
use fleetlens_service::client::Client;
use fleetlens_service::{spawn, AppState, BackgroundServer, CorrectionRequest};

fn at(secs: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(1_710_000_000 + secs, 0).unwrap()
}

fn seeded_store(dir: &std::path::Path) -> Store {
    let colour = Taxonomy::new(
        Task::Colour,
        ["Red", "White", "Black"].map(String::from).to_vec(),
        [("Maroon".to_string(), "Red".to_string())].into(),
        0,
        None,
    )
    .unwrap();
    let make = Taxonomy::new(Task::Make, ["Toyota", "Mazda"].map(String::from).to_vec(), BTreeMap::new(), 0, None).unwrap();
    save_taxonomy(dir, &colour).unwrap();
    save_taxonomy(dir, &make).unwrap();
    let mut store = Store::open(dir).unwrap();

    let plates = [("A1", "Toyota", "Red", 30), ("B2", "Toyota", "White", 20), ("C3", "Mazda", NO_DETECTION, 10)];
    let mut tallies = Vec::new();
    let mut preds = Vec::new();
    let mut records = RecordSet::default();
    for (plate, make, colour, seen) in plates {
        let id = PlateId::parse(plate).unwrap();
        let record = ImageRecord {
            record_id: format!("{plate}-0"),
            plate_id: id.clone(),
            image_ref: format!("{plate}.jpg"),
            captured_at: at(seen),
            location: Some(GeoPoint::new(-33.9, 151.2).unwrap()),
            ground_truth: BTreeMap::new(),
        };
        for (task, label) in [(Task::Make, make), (Task::Colour, colour)] {
            let p = if label == NO_DETECTION {
                Prediction::no_detection(&record.record_id, id.clone(), task, "yolo", None, at(0))
            } else {
                Prediction::labelled(&record.record_id, id.clone(), task, "yolo", Label::new(label), 0.9, at(0)).unwrap()
            };
            tallies.push(tally_votes(std::slice::from_ref(&p)).unwrap());
            preds.push(p);
        }
        records.merge([record]);
    }
    store.upsert_results(&tallies, &preds, &records).unwrap();
    store
}

fn server(dir: &std::path::Path) -> BackgroundServer {
    let state = AppState::new(seeded_store(dir)).with_clock(Arc::new(|| at(1000)));
    spawn("127.0.0.1:0", state).unwrap()
}

fn ids(page: &fleetlens_core::store::SearchPage) -> Vec<String> {
    page.items.iter().map(|p| p.plate_id.to_string()).collect()
}

#[test]
fn health_and_taxonomies() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path());
    let client = Client::new(&srv.base_url()).unwrap();
    let health = client.health().unwrap();
    assert_eq!((health.status.as_str(), health.plates), ("ok", 3));
    let body: serde_json::Value =
        reqwest::blocking::get(format!("{}/v1/health", srv.base_url())).unwrap().json().unwrap();
    assert_eq!(body, serde_json::json!({"status": "ok", "plates": 3}));
    let taxonomies = client.taxonomies().unwrap();
    assert_eq!(taxonomies[&Task::Colour].labels, ["Red", "White", "Black"]);
    assert_eq!(taxonomies[&Task::Colour].merge_map["Maroon"], "Red");
}

#[test]
fn search_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path());
    let client = Client::new(&srv.base_url()).unwrap();
    let toyota = Query::default().with_labels(Task::Make, &["Toyota"]);
    assert_eq!(ids(&client.search(&toyota).unwrap()), ["A1", "B2"]);
    let red = Query::default().with_labels(Task::Colour, &["Red"]);
    assert_eq!(ids(&client.search(&red).unwrap()), ["A1"]);
    let with_unknown = Query { include_unknown: true, ..red };
    assert_eq!(ids(&client.search(&with_unknown).unwrap()), ["A1", "C3"]);

    let raw = reqwest::blocking::get(format!("{}/v1/search?make=Toyota&colour=White", srv.base_url())).unwrap();
    assert_eq!(raw.status(), 200);
    let body: serde_json::Value = raw.json().unwrap();
    assert_eq!(body["total"], 1);
    assert_eq!(body["items"][0]["plate_id"], "B2");

    for bad in ["", "?colour=Red&limit=501", "?colour=Red&lat_min=3", "?flavour=Red"] {
        let resp = reqwest::blocking::get(format!("{}/v1/search{bad}", srv.base_url())).unwrap();
        assert_eq!(resp.status(), 400, "{bad}");
        let body: serde_json::Value = resp.json().unwrap();
        assert_eq!(body["error"], "InvalidQuery");
    }
}

#[test]
fn plate_detail_and_corrections() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path());
    let client = Client::new(&srv.base_url()).unwrap();

    let a1 = client.plate("A1").unwrap();
    assert_eq!(a1.attributes[&Task::Colour].winner.as_str(), "Red");
    assert_eq!(a1.evidence.as_ref().map(Vec::len), Some(2));
    assert_eq!(client.plate("ZZ9").unwrap_err().status(), Some(404));

    let fix = |label: &str| CorrectionRequest {
        plate_id: "A1".into(),
        task: "colour".into(),
        label: label.into(),
        author: "officer7".into(),
    };
    let updated = client.correct(&fix("White")).unwrap();
    let view = &updated.attributes[&Task::Colour];
    assert!(view.corrected);
    assert_eq!(view.effective.as_str(), "White");
    assert_eq!(view.correction.as_ref().unwrap().at, at(1000));
    let white = Query::default().with_labels(Task::Colour, &["White"]);
    assert_eq!(ids(&client.search(&white).unwrap()), ["A1", "B2"]);

    assert_eq!(client.correct(&fix("Teal")).unwrap_err().status(), Some(422));
    let missing = CorrectionRequest { plate_id: "ZZ9".into(), ..fix("Red") };
    assert_eq!(client.correct(&missing).unwrap_err().status(), Some(404));
    let resp = reqwest::blocking::Client::new()
        .post(format!("{}/v1/corrections", srv.base_url()))
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);

    // The correction survives a restart through the event log.
    drop(srv);
    let reopened = Store::open(dir.path()).unwrap();
    let view = &reopened.get_plate(&PlateId::parse("A1").unwrap()).unwrap().attributes[&Task::Colour];
    assert_eq!(view.effective.as_str(), "White");
}

#[test]
fn concurrent_readers_with_a_writer() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server(dir.path());
    let base = srv.base_url();
    let readers: Vec<_> = (0..4)
        .map(|_| {
            let base = base.clone();
            thread::spawn(move || {
                let client = Client::new(&base).unwrap();
                let q = Query::default().with_labels(Task::Make, &["Toyota"]);
                for _ in 0..25 {
                    let page = client.search(&q).unwrap();
                    assert_eq!(page.total, 2);
                    // Any observed colour view is either the voted or a corrected label, never torn.
                    for p in &page.items {
                        let v = &p.attributes[&Task::Colour];
                        assert_eq!(v.corrected, v.correction.is_some());
                    }
                }
            })
        })
        .collect();
    let client = Client::new(&base).unwrap();
    for i in 0..10 {
        let label = if i % 2 == 0 { "Black" } else { "Red" };
        client
            .correct(&CorrectionRequest { plate_id: "B2".into(), task: "colour".into(), label: label.into(), author: "w".into() })
            .unwrap();
    }
    for r in readers {
        r.join().unwrap();
    }
    let history = &client.plate("B2").unwrap().attributes[&Task::Colour].correction_history;
    assert_eq!(history.len(), 10);
    assert_eq!(history[0].label.as_str(), "Red");
}
