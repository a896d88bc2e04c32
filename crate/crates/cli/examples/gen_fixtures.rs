//! Regenerates the bundled synthetic corpora under `fixtures/`.
//!
//! Usage: cargo run -p cwe-moe-cli --example gen_fixtures [-- <repo root>]

use std::fs;
use std::path::PathBuf;

use cwe_moe::fixtures::{self, FixtureSpec};
use cwe_moe_cli::config::{RunConfig, TrainParams};

fn run_config(spec: &FixtureSpec) -> RunConfig {
    let s = fixtures::settings(0, 1);
    let params = |t: &cwe_moe::learn::TrainConfig| TrainParams {
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        weight_decay: t.weight_decay,
    };
    RunConfig {
        dataset: Some("dataset.jsonl".into()),
        taxonomy: Some("taxonomy.tsv".into()),
        out: Some(format!("../../target/runs/{}", spec.name).into()),
        min_instances: s.min_instances,
        dim: s.encoder.dim,
        n_max: s.encoder.n_max,
        hash_seed: s.encoder.hash_seed,
        expert: params(&s.train.expert),
        router: params(&s.train.router),
        workers: 4,
        ..RunConfig::default()
    }
}

fn main() -> std::io::Result<()> {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../.."));
    for spec in [fixtures::separable_12(), fixtures::confusable_4()] {
        let dir = root.join("fixtures").join(spec.name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("dataset.jsonl"), FixtureSpec::to_jsonl(&spec.generate()))?;
        fs::write(dir.join("taxonomy.tsv"), &spec.taxonomy)?;
        fs::write(dir.join("config.json"), run_config(&spec).to_json())?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
