//! The well-formed files in the fuzz seed corpus must keep parsing as the
//! formats evolve, otherwise the fuzzers start from rejected inputs.

use std::path::PathBuf;

use cwe_moe::corpus::{ingest, SplitManifest};
use cwe_moe::learn::ModelFile;
use cwe_moe::moe::BundleManifest;
use cwe_moe::taxonomy::{load_tree, CategoryMap};

fn seed(target: &str, name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "../../fuzz/corpus", target, name].iter().collect();
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn taxonomy_seeds_load() {
    for name in ["tree15.tsv", "separable.tsv", "odd.tsv"] {
        load_tree(&seed("taxonomy", name)).unwrap();
    }
}

#[test]
fn record_seed_ingests() {
    assert_eq!(ingest(&seed("record", "fixture.jsonl")).unwrap().len(), 3);
}

#[test]
fn json_seeds_decode() {
    SplitManifest::from_json(&seed("split_manifest", "small.json")).unwrap();
    CategoryMap::from_json(&seed("category_map", "map.json")).unwrap();
    BundleManifest::from_json(&seed("bundle_manifest", "manifest.json")).unwrap();
    for name in ["router.json", "expert.json"] {
        ModelFile::from_json(&seed("model_file", name)).unwrap().to_model().unwrap();
    }
}
