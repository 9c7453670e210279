use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use serde::Serialize;

use fleetlens_core::aggregation::{run_mvi, run_svi};
use fleetlens_core::backend::{BackendContext, BackendSpec, StochasticProfile};
use fleetlens_core::curation::{
    check_leakage, curate_task, make_split, plan_task_dataset, write_task_dataset, CurationReport, ImageMode,
    LabelResolver, SplitOptions,
};
use fleetlens_core::evaluation::{
    describe_simulation, digest_bytes, evaluate, render_comparison, render_markdown, simulate_mvi_gain,
    ComparisonRow, Provenance, Report, ReportRow,
};
use fleetlens_core::ingestion::{read_classes, validate_dataset_dir, LabelSource, Manifest, RecordSet};
use fleetlens_core::jsonl;
use fleetlens_core::store::{self, GeoBox, RECORDS_FILE, SPLIT_FILE};
use fleetlens_core::{ImageRecord, Partition, PlateId, Prediction, Query, SplitManifest, Store, Task, Taxonomy, VoteTally};
use fleetlens_service::client::Client;
use fleetlens_service::{AppState, CorrectionRequest};

use crate::{
    usage, AggregateArgs, BuildDatasetArgs, Cli, Command, CurateArgs, EvaluateArgs, IngestArgs, InferArgs,
    QueryArgs, ServeArgs, SimulateArgs, SplitArgs, SplitSelector,
};

const CURATION_DIR: &str = "curation";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(args) => ingest(cli.store()?, args),
        Command::Curate(args) => curate(cli.store()?, args),
        Command::Split(args) => split(cli.store()?, args),
        Command::BuildDataset(args) => build_dataset(cli.store()?, args),
        Command::Infer(args) => infer(cli.store()?, args),
        Command::Aggregate(args) => aggregate(cli.store.as_deref(), args),
        Command::Evaluate(args) => evaluate_runs(cli.store()?, args),
        Command::Simulate(args) => simulate(args),
        Command::Serve(args) => serve(cli.store()?, args),
        Command::Query(args) => query(args),
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_records(store: &Path) -> Result<RecordSet> {
    let path = store.join(RECORDS_FILE);
    let set = RecordSet::load(&path).with_context(|| format!("reading {}", path.display()))?;
    if set.is_empty() {
        bail!("store {} has no records; run `fleetlens ingest` first", store.display());
    }
    Ok(set)
}

fn load_split(store: &Path) -> Result<SplitManifest> {
    let path = store.join(SPLIT_FILE);
    let bytes = fs::read(&path).with_context(|| format!("reading {}; run `fleetlens split` first", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn taxonomies(store: &Path) -> Result<BTreeMap<Task, Taxonomy>> {
    Ok(store::load_taxonomies(store)?)
}

fn taxonomy_for(all: &BTreeMap<Task, Taxonomy>, task: Task) -> Result<&Taxonomy> {
    all.get(&task)
        .ok_or_else(|| anyhow::anyhow!("no taxonomy for {task}; install one with `fleetlens curate --taxonomy FILE`"))
}

fn load_curation(store: &Path, task: Task) -> Result<Option<CurationReport>> {
    let path = store.join(CURATION_DIR).join(format!("{task}.json"));
    match fs::read(&path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

// ---------------------------------------------------------------------------

fn ingest(store: &Path, args: &IngestArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let source = match (&args.task, &args.classes) {
        (Some(task), Some(classes)) => Some(LabelSource {
            task: *task,
            classes: read_classes(classes).with_context(|| format!("reading {}", classes.display()))?,
        }),
        _ => None,
    };
    let rows = manifest.rows.len();
    let incoming = manifest.into_records(source.as_ref())?;
    let labelled = source
        .as_ref()
        .map(|s| incoming.iter().filter(|r| r.ground_truth.contains_key(&s.task)).count());

    fs::create_dir_all(store).with_context(|| format!("creating {}", store.display()))?;
    let path = store.join(RECORDS_FILE);
    let mut set = RecordSet::load(&path).with_context(|| format!("reading {}", path.display()))?;
    set.merge(incoming);
    set.save(&path).with_context(|| format!("writing {}", path.display()))?;
    print!("ingested {rows} rows; store holds {} records over {} plates", set.len(), set.plates().len());
    match (labelled, &args.task) {
        (Some(n), Some(task)) => println!("; {n} rows carry {task} truth"),
        _ => println!(),
    }
    Ok(())
}

fn curate(store: &Path, args: &CurateArgs) -> Result<()> {
    for path in &args.taxonomy {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let taxonomy: Taxonomy = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        taxonomy.validate().with_context(|| format!("validating {}", path.display()))?;
        store::save_taxonomy(store, &taxonomy)?;
        println!("installed {} taxonomy ({} labels)", taxonomy.task, taxonomy.labels.len());
    }
    let all = taxonomies(store)?;
    let tasks: Vec<Task> = if args.task.is_empty() { all.keys().copied().collect() } else { args.task.clone() };
    if tasks.is_empty() {
        return Err(usage("no taxonomies installed; pass --taxonomy FILE"));
    }
    let records = load_records(store)?.to_vec();
    for task in tasks {
        let taxonomy = taxonomy_for(&all, task)?;
        let resolver = LabelResolver::with_colour(taxonomy, all.get(&Task::Colour));
        let report = curate_task(&records, &resolver);

        let mut merges: BTreeMap<(String, String), usize> = BTreeMap::new();
        for r in &records {
            if let Some(truth) = r.ground_truth.get(&task) {
                if let Some(target) = taxonomy.merge_map.get(&truth.label) {
                    *merges.entry((truth.label.clone(), target.clone())).or_default() += 1;
                }
            }
        }
        let path = store.join(CURATION_DIR).join(format!("{task}.json"));
        write_file(&path, pretty(&report))?;

        let d = &report.dropped;
        println!(
            "{task}: {} plates kept; {} conflicting plates, {} low-frequency plates, {} records without truth, {} with unknown labels",
            report.plate_labels.len(),
            d.conflict_plates.len(),
            d.low_frequency_plates.len(),
            d.missing_truth_records.len(),
            d.unknown_label_records.len()
        );
        for ((from, to), n) in &merges {
            println!("  merged {from} -> {to} on {n} records");
        }
        for w in &report.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}

fn split(store: &Path, args: &SplitArgs) -> Result<()> {
    let plates = load_records(store)?.plates();
    let options = SplitOptions {
        test_fraction: args.test,
        val_fraction_of_remainder: args.val,
        small_set_fallback: args.small_set_fallback,
    };
    let manifest = make_split(&plates, args.seed, options)?;
    write_file(&store.join(SPLIT_FILE), pretty(&manifest))?;
    println!(
        "split {} plates with seed {}: train {}, val {}, test {}",
        plates.len(),
        args.seed,
        manifest.count(Partition::Train),
        manifest.count(Partition::Val),
        manifest.count(Partition::Test)
    );
    Ok(())
}

fn build_dataset(store: &Path, args: &BuildDatasetArgs) -> Result<()> {
    let all = taxonomies(store)?;
    let taxonomy = taxonomy_for(&all, args.task)?;
    let resolver = LabelResolver::with_colour(taxonomy, all.get(&Task::Colour));
    let records = load_records(store)?.to_vec();
    let split = load_split(store)?;
    let dataset = plan_task_dataset(&records, &resolver, &split)?;
    let leaks = check_leakage(&split, &[&dataset]);
    if !leaks.is_empty() {
        bail!("plate leakage across partitions: {:?}", leaks.iter().map(|l| l.plate_id.as_str()).collect::<Vec<_>>());
    }
    let mode = if args.symlink {
        #[cfg(unix)]
        {
            ImageMode::Symlink
        }
        #[cfg(not(unix))]
        return Err(usage("--symlink needs a unix platform"));
    } else {
        ImageMode::Copy
    };
    let summary = write_task_dataset(&dataset, &split, &args.out, mode)?;
    let report = validate_dataset_dir(&args.out).with_context(|| format!("validating {}", args.out.display()))?;
    if !report.is_clean() {
        for f in &report.findings {
            eprintln!("  {f:?}");
        }
        bail!("dataset at {} failed validation with {} findings", args.out.display(), report.findings.len());
    }
    println!("{} classes, {} plates, {} images", summary.classes, summary.total_plates, summary.total_images);
    for (name, c) in [("train", summary.train), ("val", summary.val), ("test", summary.test)] {
        println!("  {name:<5} {:>7} images {:>6} plates", c.images, c.plates);
    }
    let d = &dataset.dropped;
    if !d.unseen_in_train_plates.is_empty() {
        println!("  dropped {} val/test plates whose class is absent from train", d.unseen_in_train_plates.len());
    }
    Ok(())
}

/// Canonical truth per record for a task, restricted to curated plates when
/// a curation report exists.
fn task_truth(
    records: &[ImageRecord],
    resolver: &LabelResolver<'_>,
    curation: Option<&CurationReport>,
) -> BTreeMap<String, String> {
    records
        .iter()
        .filter(|r| curation.is_none_or(|c| c.plate_labels.contains_key(&r.plate_id)))
        .filter_map(|r| resolver.resolve(r).ok().flatten().map(|l| (r.record_id.clone(), l)))
        .collect()
}

fn infer(store: &Path, args: &InferArgs) -> Result<()> {
    if args.parallel == 0 {
        return Err(usage("--parallel must be at least 1"));
    }
    let all = taxonomies(store)?;
    let taxonomy = taxonomy_for(&all, args.task)?;
    let resolver = LabelResolver::with_colour(taxonomy, all.get(&Task::Colour));
    let records = load_records(store)?.to_vec();
    let curation = load_curation(store, args.task)?;

    let selected: Vec<ImageRecord> = match args.split {
        SplitSelector::All => records.clone(),
        sel => {
            let partition = match sel {
                SplitSelector::Train => Partition::Train,
                SplitSelector::Val => Partition::Val,
                _ => Partition::Test,
            };
            let split = load_split(store)?;
            records.iter().filter(|r| split.partition_of(&r.plate_id) == Some(partition)).cloned().collect()
        }
    };
    let truth = task_truth(&selected, &resolver, curation.as_ref());
    let selected: Vec<ImageRecord> = match &curation {
        Some(_) => selected.into_iter().filter(|r| truth.contains_key(&r.record_id)).collect(),
        None => selected,
    };
    if selected.is_empty() {
        bail!("no records selected for {} in split {:?}", args.task, args.split);
    }

    let spec_text = match &args.backend {
        BackendSpec::Mock { path } => format!("mock:{path}"),
        BackendSpec::Sim { profile } => format!("sim:p={},q={},seed={}", profile.p_correct, profile.p_no_detection, profile.seed),
        BackendSpec::Remote { base_url } => format!("remote:{}", base_url.trim_end_matches('/')),
    };
    let backend_id = args.backend_id.clone().unwrap_or(spec_text);
    let backend = args.backend.build(BackendContext {
        backend_id: &backend_id,
        task: args.task,
        mode: args.mode,
        labels: taxonomy.labels.clone(),
        truth: &truth,
    })?;
    let produced_at = args.timestamp.unwrap_or_else(Utc::now);
    let predictions = run_svi(backend.as_ref(), &selected, taxonomy, args.parallel, produced_at);
    write_file(&args.out, jsonl::to_string(&predictions))?;
    let errors = predictions.iter().filter(|p| p.error.is_some()).count();
    let unknown = predictions.iter().filter(|p| p.no_detection).count();
    println!(
        "wrote {} predictions to {} ({unknown} NO_DETECTION, {errors} backend errors)",
        predictions.len(),
        args.out.display()
    );
    if let Some(e) = predictions.iter().find_map(|p| p.error.as_deref()) {
        eprintln!("  first backend error: {e}");
    }
    Ok(())
}

fn aggregate(store: Option<&Path>, args: &AggregateArgs) -> Result<()> {
    let predictions: Vec<Prediction> =
        jsonl::read(&args.preds).with_context(|| format!("reading {}", args.preds.display()))?;
    if predictions.is_empty() {
        bail!("{} holds no predictions", args.preds.display());
    }
    let tallies = run_mvi(&predictions)?;
    write_file(&args.out, jsonl::to_string(&tallies))?;
    let tie_broken = tallies.iter().filter(|t| t.tie_broken).count();
    println!("wrote {} plate tallies to {} ({tie_broken} tie-broken)", tallies.len(), args.out.display());

    if args.publish {
        let dir = store.ok_or_else(|| usage("--publish needs --store or FLEETLENS_STORE"))?;
        let records = RecordSet::load(&dir.join(RECORDS_FILE)).context("reading store records")?;
        let mut index = Store::open(dir)?;
        let outcome = index.upsert_results(&tallies, &predictions, &records)?;
        if args.activate {
            let pairs: BTreeSet<(Task, &str)> = tallies.iter().map(|t| (t.task, t.backend_id.as_str())).collect();
            for (task, backend) in pairs {
                index.set_active_backend(task, backend)?;
                println!("active {task} backend: {backend}");
            }
        }
        println!("published: {} appended, {} unchanged", outcome.appended, outcome.unchanged);
        for (plate, record) in &outcome.dangling {
            eprintln!("  warning: {plate} cites {record} without a matching prediction");
        }
    }
    Ok(())
}

fn plate_truth(
    records: &[ImageRecord],
    resolver: &LabelResolver<'_>,
    curation: Option<&CurationReport>,
) -> Result<BTreeMap<PlateId, String>> {
    if let Some(c) = curation {
        return Ok(c.plate_labels.clone());
    }
    let mut out: BTreeMap<PlateId, String> = BTreeMap::new();
    for r in records {
        if let Ok(Some(label)) = resolver.resolve(r) {
            if let Some(prev) = out.insert(r.plate_id.clone(), label.clone()) {
                if prev != label {
                    bail!("plate {} has conflicting truth ({prev} vs {label}); run `fleetlens curate` first", r.plate_id);
                }
            }
        }
    }
    Ok(out)
}

fn evaluate_runs(store: &Path, args: &EvaluateArgs) -> Result<()> {
    let all = taxonomies(store)?;
    let taxonomy = taxonomy_for(&all, args.task)?;
    let resolver = LabelResolver::with_colour(taxonomy, all.get(&Task::Colour));
    let records = load_records(store)?.to_vec();
    let curation = load_curation(store, args.task)?;
    let truth_records = task_truth(&records, &resolver, curation.as_ref());
    let truth_plates = plate_truth(&records, &resolver, curation.as_ref())?;
    let split_seed = load_split(store).ok().map(|s| s.seed);

    let mut rows = Vec::new();
    let mut provenance = BTreeMap::new();
    let mut details = BTreeMap::new();
    for run in &args.runs {
        let mut predictions: Vec<Prediction> =
            jsonl::read(&run.preds).with_context(|| format!("reading {}", run.preds.display()))?;
        predictions.retain(|p| p.task == args.task);
        predictions.sort_by(|a, b| a.record_id.cmp(&b.record_id).then_with(|| a.backend_id.cmp(&b.backend_id)));
        if predictions.is_empty() {
            bail!("{} holds no {} predictions", run.preds.display(), args.task);
        }
        let tallies: Vec<VoteTally> = match &run.tallies {
            Some(path) => {
                let mut t: Vec<VoteTally> = jsonl::read(path).with_context(|| format!("reading {}", path.display()))?;
                t.retain(|t| t.task == args.task);
                t
            }
            None => run_mvi(&predictions)?,
        };
        let backend_id = predictions[0].backend_id.clone();
        let prov = Provenance {
            backend_id,
            taxonomy_digest: taxonomy.digest(),
            split_seed,
            predictions_digest: digest_bytes(jsonl::to_string(&predictions).as_bytes()),
        };
        let key = format!("{}:{}", run.model, run.size);
        let report = evaluate(args.task, &predictions, &tallies, &truth_records, &truth_plates, &taxonomy.labels, prov.clone())
            .with_context(|| format!("evaluating {key}"))?;
        rows.push(ReportRow::from_eval(&run.model, &run.size, &report));
        provenance.insert(key.clone(), prov);
        details.insert(key, report);
    }

    let report = Report { task: args.task, rows, provenance };
    let mut markdown = render_markdown(&report);
    if args.comparison {
        let comparison: Vec<ComparisonRow> = report
            .rows
            .iter()
            .map(|r| ComparisonRow {
                attribute: args.task.to_string(),
                size: r.size.clone(),
                variant: r.model.clone(),
                accuracy: r.mvi,
            })
            .collect();
        markdown.push_str(&format!("\n### {} MVI accuracy by model (%)\n\n", args.task));
        markdown.push_str(&render_comparison(&comparison));
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_file(&args.out_dir.join("report.json"), pretty(&report))?;
    write_file(&args.out_dir.join("report.md"), &markdown)?;
    write_file(&args.out_dir.join("details.json"), pretty(&details))?;
    print!("{markdown}");
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.views == 0 || args.plates == 0 || args.labels == 0 {
        return Err(usage("--views, --plates and --labels must be at least 1"));
    }
    let profile = StochasticProfile::new(args.p, args.q, args.seed).map_err(|e| usage(e.to_string()))?;
    let result = simulate_mvi_gain(&profile, args.labels, args.views, args.plates);
    if args.json {
        print!("{}", pretty(&result));
    } else {
        print!("{}", describe_simulation(&result));
    }
    Ok(())
}

fn serve(store: &Path, args: &ServeArgs) -> Result<()> {
    let index = Store::open(store)?;
    fleetlens_service::run(&args.addr, AppState::new(index)).with_context(|| format!("serving on {}", args.addr))
}

fn query(args: &QueryArgs) -> Result<()> {
    let client = Client::new(&args.url)?;
    if args.health {
        print!("{}", pretty(&client.health()?));
        return Ok(());
    }
    if args.taxonomies {
        print!("{}", pretty(&client.taxonomies()?));
        return Ok(());
    }
    if let Some(plate) = &args.plate {
        let profile = match &args.correct {
            Some(spec) => {
                let (task, label) = spec.split_once('=').ok_or_else(|| usage("--correct expects TASK=LABEL"))?;
                client.correct(&CorrectionRequest {
                    plate_id: plate.clone(),
                    task: task.to_string(),
                    label: label.to_string(),
                    author: args.author.clone().unwrap_or_default(),
                })?
            }
            None => client.plate(plate)?,
        };
        print!("{}", pretty(&profile));
        return Ok(());
    }
    let mut q = Query { include_unknown: args.include_unknown, offset: args.offset, limit: args.limit, from: args.from, to: args.to, ..Query::default() };
    for (task, labels) in [
        (Task::Make, &args.make),
        (Task::Shape, &args.shape),
        (Task::Colour, &args.colour),
        (Task::ColourBinary, &args.colour_binary),
    ] {
        let set: BTreeSet<String> =
            labels.iter().flat_map(|l| l.split(',')).map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        if !set.is_empty() {
            q.labels.insert(task, set);
        }
    }
    match (args.lat_min, args.lat_max, args.lon_min, args.lon_max) {
        (Some(lat_min), Some(lat_max), Some(lon_min), Some(lon_max)) => {
            q.area = Some(GeoBox { lat_min, lat_max, lon_min, lon_max })
        }
        (None, None, None, None) => {}
        _ => return Err(usage("--lat-min, --lat-max, --lon-min and --lon-max go together")),
    }
    q.validate().map_err(|e| usage(e.to_string()))?;
    print!("{}", pretty(&client.search(&q)?));
    Ok(())
}
