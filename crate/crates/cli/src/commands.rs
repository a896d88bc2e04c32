use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cwe_moe::ablate::{run_variant, VariantContext, VariantSpec};
use cwe_moe::corpus::{
    head_tail, ingest, parse_record, split, split_from_manifest, CodeSample, Partition, SplitCorpus, SplitManifest,
};
use cwe_moe::eval::{evaluate as eval_report, ideal_routing_eval, map_samples, TestSet, VariantRow};
use cwe_moe::learn::{random_check, LossKind, ModelKind};
use cwe_moe::moe::{train_all_cached, FeatureCache, MoeModel};
use cwe_moe::taxonomy::{build_categories, load_tree, CategoryMap};
use serde_json::json;

use crate::config::{require_file, RunConfig};
use crate::CliError;

const SPLIT_FILE: &str = "split.json";
const CATEGORY_MAP_FILE: &str = "category_map.json";
const SUMMARY_FILE: &str = "summary.json";
const CONFIG_FILE: &str = "config.json";
const BUNDLE_DIR: &str = "bundle";
const TRACES_DIR: &str = "traces";
const TIMINGS_FILE: &str = "timings.json";

fn read(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::usage(format!("{what} not found: {}", path.display())),
        _ => CliError::internal(format!("cannot read {}: {e}", path.display())),
    })
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn load_samples(cfg: &RunConfig) -> Result<Vec<CodeSample>, CliError> {
    let path = require_file(cfg.dataset.as_deref(), "dataset")?;
    ingest(&read(path, "dataset")?).map_err(|e| CliError::from(e).in_file(path))
}

fn make_split(cfg: &RunConfig, samples: Vec<CodeSample>) -> Result<SplitCorpus, CliError> {
    match cfg.split_file.as_deref() {
        Some(p) => {
            let p = require_file(Some(p), "split file")?;
            let manifest = SplitManifest::from_json(&read(p, "split file")?).map_err(|e| CliError::from(e).in_file(p))?;
            split_from_manifest(samples, &manifest).map_err(|e| CliError::from(e).in_file(p))
        }
        None => Ok(split(samples, cfg.seed)?),
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    require_file(cfg.dataset.as_deref(), "dataset")?;
    let tax_path = require_file(cfg.taxonomy.as_deref(), "taxonomy")?;
    let samples = load_samples(cfg)?;
    let tree = load_tree(&read(tax_path, "taxonomy")?).map_err(|e| CliError::from(e).in_file(tax_path))?;
    let split = make_split(cfg, samples)?;
    let counts = split.vuln_counts(Partition::Train);
    let map = build_categories(&tree, &counts, cfg.min_instances)?;

    let mut category_counts: BTreeMap<String, u64> = BTreeMap::new();
    for (id, n) in &counts {
        let c = map.resolve(id, cfg.unknown_policy)?;
        *category_counts.entry(c.as_str().to_string()).or_default() += n;
    }
    let partitions: serde_json::Map<String, serde_json::Value> = [
        ("train", Partition::Train),
        ("valid", Partition::Valid),
        ("test", Partition::Test),
    ]
    .into_iter()
    .map(|(name, p)| {
        let total = split.indices(p).len();
        let vulnerable = split.iter(p).filter(|s| s.is_vulnerable()).count();
        (name.to_string(), json!({"samples": total, "vulnerable": vulnerable}))
    })
    .collect();
    let roster: Vec<_> = map
        .roster()
        .iter()
        .map(|c| json!({"category": c, "train_vulnerable": category_counts.get(c.as_str()).copied().unwrap_or(0)}))
        .collect();
    let summary = json!({
        "samples": split.samples().len(),
        "seed": cfg.seed,
        "min_instances": cfg.min_instances,
        "partitions": partitions,
        "train_vulnerable_by_cwe": counts,
        "categories": roster,
        "agg_members": map.agg_members,
        "head_tail": head_tail(split.iter(Partition::Train))?,
    });

    write(&out.join(SPLIT_FILE), &split.manifest().to_json())?;
    write(&out.join(CATEGORY_MAP_FILE), &map.to_json())?;
    write(&out.join(SUMMARY_FILE), &pretty(&summary))?;
    write(&out.join(CONFIG_FILE), &cfg.to_json())?;
    eprintln!(
        "prepared {} samples into {} categories: {}",
        split.samples().len(),
        map.roster().len(),
        out.display()
    );
    Ok(())
}

/// The split and category map written by `prepare`.
fn load_prepared(cfg: &RunConfig) -> Result<(SplitCorpus, CategoryMap), CliError> {
    let out = cfg.out_dir()?;
    let split_path = out.join(SPLIT_FILE);
    let map_path = out.join(CATEGORY_MAP_FILE);
    for p in [&split_path, &map_path] {
        if !p.is_file() {
            return Err(CliError::usage(format!("{} not found; run `prepare` first", p.display())));
        }
    }
    let manifest = SplitManifest::from_json(&read(&split_path, "split")?).map_err(|e| CliError::from(e).in_file(&split_path))?;
    let split = split_from_manifest(load_samples(cfg)?, &manifest).map_err(|e| CliError::from(e).in_file(&split_path))?;
    let map = CategoryMap::from_json(&read(&map_path, "category map")?).map_err(|e| CliError::from(e).in_file(&map_path))?;
    Ok((split, map))
}

fn file_stem(component: &str) -> String {
    component
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' })
        .collect()
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let (split, map) = load_prepared(cfg)?;
    let encoder = cfg.encoder().build()?;
    let started = Instant::now();
    let cache = FeatureCache::build(&split, &[Partition::Train], &encoder, cfg.workers);
    let featurized = started.elapsed();
    let trained = train_all_cached(&split, &map, &encoder, &cache, &cfg.train_config())?;

    let bundle = out.join(BUNDLE_DIR);
    if bundle.is_dir() {
        fs::remove_dir_all(&bundle).map_err(|e| CliError::internal(format!("cannot clear {}: {e}", bundle.display())))?;
    }
    trained.model.save(&bundle)?;

    let mut timings = vec![json!({"component": "featurize", "seconds": featurized.as_secs_f64()})];
    for r in &trained.reports {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in r.loss_trace.iter().enumerate() {
            csv.push_str(&format!("{},{l}\n", i + 1));
        }
        write(&out.join(TRACES_DIR).join(format!("{}.csv", file_stem(&r.component))), &csv)?;
        eprintln!(
            "trained {} on {} examples in {:.3}s, final loss {:.4}",
            r.component,
            r.examples,
            r.elapsed.as_secs_f64(),
            r.loss_trace.last().copied().unwrap_or(f64::NAN)
        );
        timings.push(json!({"component": r.component, "examples": r.examples, "seconds": r.elapsed.as_secs_f64()}));
    }
    let total = started.elapsed().as_secs_f64();
    write(
        &out.join(TIMINGS_FILE),
        &pretty(&json!({"workers": cfg.workers, "total_seconds": total, "components": timings})),
    )?;
    write(&out.join(CONFIG_FILE), &cfg.to_json())?;
    eprintln!("bundle written to {} in {total:.2}s", bundle.display());
    Ok(())
}

fn bundle_dir(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => cfg.out_dir()?.join(BUNDLE_DIR),
    };
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::usage(format!("no model bundle at {}", dir.display())));
    }
    Ok(dir)
}

pub struct PredictOptions {
    pub bundle: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub code: Option<String>,
    pub output: Option<PathBuf>,
    /// Explicit flag values; the bundle's own settings apply otherwise.
    pub k: Option<usize>,
    pub threshold: Option<f64>,
}

pub fn predict(cfg: &RunConfig, opts: &PredictOptions) -> Result<(), CliError> {
    let mut moe = MoeModel::load(&bundle_dir(cfg, opts.bundle.as_deref())?)?;
    if let Some(k) = opts.k {
        moe.set_k(k)?;
    }
    if let Some(t) = opts.threshold {
        moe.threshold = t;
    }

    // Each entry is a parsed (id, code) pair or an error for that line.
    let entries: Vec<(usize, Result<(String, String), String>)> = match (&opts.input, &opts.code) {
        (_, Some(code)) => vec![(1, Ok(("input".to_string(), code.clone())))],
        (Some(path), None) => {
            let text = if path.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| CliError::internal(format!("cannot read stdin: {e}")))?;
                s
            } else {
                read(path, "input")?
            };
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, parse_record(l, i + 1).map(|r| (r.id, r.func)).map_err(|e| e.to_string())))
                .collect()
        }
        (None, None) => return Err(CliError::usage("predict needs --input or --code")),
    };

    let rows = map_samples(entries.len(), cfg.workers, |i| {
        Ok(match &entries[i] {
            (_, Ok((id, code))) => {
                let p = moe.predict(code);
                json!({"id": id, "p_vul": p.p_vul, "decision": p.decision, "selected": p.selected})
            }
            (line, Err(message)) => json!({"line": line, "error": message}),
        })
    })?;

    let sink: Box<dyn Write> = match &opts.output {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
            }
            Box::new(fs::File::create(p).map_err(|e| CliError::internal(format!("cannot write {}: {e}", p.display())))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    for row in &rows {
        writeln!(sink, "{row}").map_err(|e| CliError::internal(format!("write failed: {e}")))?;
    }
    sink.flush().map_err(|e| CliError::internal(format!("write failed: {e}")))?;
    let errors = entries.iter().filter(|(_, r)| r.is_err()).count();
    eprintln!("predicted {} inputs, {errors} malformed", entries.len() - errors);
    Ok(())
}

/// Labeled samples from an explicit JSON-lines file.
fn load_test_file(path: &Path) -> Result<Vec<CodeSample>, CliError> {
    let text = read(path, "test set")?;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec = parse_record(line, i + 1).map_err(|e| CliError::from(e).in_file(path))?;
        if rec.label.is_none() {
            return Err(CliError::usage(format!(
                "{}: unlabeled test set, line {} has no `target`",
                path.display(),
                i + 1
            )));
        }
    }
    ingest(&text).map_err(|e| CliError::from(e).in_file(path))
}

/// Writes the report for the bundle into `<out>/<dir_name>`, with any
/// configured variant rows and the ideal-routing bound appended.
pub fn evaluate(cfg: &RunConfig, bundle: Option<&Path>, test_file: Option<&Path>, dir_name: &str) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let mut moe = MoeModel::load(&bundle_dir(cfg, bundle)?)?;
    moe.set_k(cfg.k)?;
    moe.threshold = cfg.threshold;

    let prepared = if test_file.is_none() || !cfg.variants.is_empty() {
        Some(load_prepared(cfg)?)
    } else {
        None
    };
    let external = test_file.map(load_test_file).transpose()?;
    let test_samples: Vec<&CodeSample> = match (&external, &prepared) {
        (Some(samples), _) => samples.iter().collect(),
        (None, Some((split, _))) => split.iter(Partition::Test).collect(),
        (None, None) => unreachable!("prepared split is loaded when no test file is given"),
    };
    let partition = match &prepared {
        Some((split, _)) => head_tail(split.iter(Partition::Train))?,
        None => head_tail(test_samples.iter().copied())?,
    };
    let test = TestSet::new(test_samples, moe.encoder(), cfg.workers);
    let (mut report, preds) = eval_report(&moe, &test, &partition, cfg.workers)?;

    if cfg.ideal_routing {
        report.variants.push(VariantRow {
            variant: "ideal_routing".into(),
            metrics: ideal_routing_eval(&moe, &test, &preds, cfg.workers)?,
            routing_correct_fraction: Some(1.0),
            note: Some("oracle selects the true-category expert for vulnerable samples".into()),
        });
    }
    if let (false, Some((split, _))) = (cfg.variants.is_empty(), &prepared) {
        let features = FeatureCache::build(split, &[Partition::Train], moe.encoder(), cfg.workers);
        let train_config = cfg.train_config();
        let ctx = VariantContext {
            moe: &moe,
            split,
            train_features: &features,
            test: &test,
            train_config: &train_config,
            workers: cfg.workers,
        };
        for &kind in &cfg.variants {
            let started = Instant::now();
            let row = run_variant(&ctx, &VariantSpec::new(kind, cfg.seed))?;
            eprintln!("variant {kind}: F1 {:.4} ({:.2}s)", row.metrics.f1, started.elapsed().as_secs_f64());
            report.variants.push(row);
        }
    }

    let dir = out.join(dir_name);
    report.write(&dir)?;
    let m = &report.overall;
    eprintln!(
        "k={} threshold={}: precision {:.4} recall {:.4} F1 {:.4} on {} samples; report in {}",
        report.k,
        report.threshold,
        m.precision,
        m.recall,
        m.f1,
        report.samples,
        dir.display()
    );
    Ok(())
}

pub fn gradcheck(first_seed: u64, seeds: u64) -> Result<(), CliError> {
    let mut failed = 0;
    let mut stdout = std::io::stdout().lock();
    for seed in first_seed..first_seed.saturating_add(seeds) {
        for kind in [ModelKind::Linear, ModelKind::Mlp1] {
            for loss in [LossKind::BinaryCe, LossKind::Focal] {
                let r = random_check(kind, loss, seed)?;
                failed += usize::from(!r.passed);
                let row = json!({
                    "seed": seed,
                    "model": kind,
                    "loss": loss,
                    "passed": r.passed,
                    "max_rel_error": r.max_rel_error,
                    "coordinates": r.checked.len(),
                });
                writeln!(stdout, "{row}").map_err(|e| CliError::internal(format!("write failed: {e}")))?;
            }
        }
    }
    if failed > 0 {
        return Err(CliError::internal(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
