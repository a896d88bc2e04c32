//! Hashed n-gram features against an independent xxHash64 implementation
//! and a checked-in golden file.

use std::collections::BTreeMap;
use std::path::Path;

use cwe_moe::features::{featurize, tokenize, DEFAULT_HASH_SEED};
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

/// Reference featurizer: counts every 1..=n_max window, bucketed by the
/// xxHash64 of its tokens joined with 0x1F, weighted 1 + ln(count) and
/// L2-normalized.
fn oracle(tokens: &[&str], dim: usize, n_max: usize, seed: u64) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for n in 1..=n_max {
        for w in tokens.windows(n) {
            let key = w.join("\u{1f}");
            let h = XxHash64::oneshot(seed, key.as_bytes());
            *counts.entry((h % dim as u64) as u32).or_default() += 1.0;
        }
    }
    let weights: BTreeMap<u32, f64> = counts.into_iter().map(|(k, c)| (k, 1.0 + c.ln())).collect();
    let norm = weights.values().map(|v| v * v).sum::<f64>().sqrt();
    weights.into_iter().map(|(k, v)| (k, v / norm)).collect()
}

fn library(code: &str, dim: usize, n_max: usize) -> BTreeMap<u32, f64> {
    let fv = featurize(&tokenize(code), dim, n_max, DEFAULT_HASH_SEED).unwrap();
    fv.indices().iter().copied().zip(fv.values().iter().copied()).collect()
}

#[test]
fn three_token_stream_matches_oracle() {
    let toks = tokenize("a b a");
    assert_eq!(toks.as_strs(), ["a", "b", "a"]);
    let want = oracle(&["a", "b", "a"], 16, 2, DEFAULT_HASH_SEED);
    assert_eq!(library("a b a", 16, 2), want);
    // Unigram `a` occurs twice, so its weight is (1 + ln 2) before scaling
    // unless it shares a bucket.
    let a = (XxHash64::oneshot(DEFAULT_HASH_SEED, b"a") % 16) as u32;
    assert!(want[&a] > *want.values().filter(|&&v| v != want[&a]).next().unwrap_or(&0.0));
}

const SNIPPETS: [&str; 4] = [
    "int main(void) { return 0; }",
    "static int read_buf(struct ctx *c, size_t len)\n{\n    memcpy(c->buf, src, len); /* copy */\n    return len > 16 ? -1 : 0;\n}",
    "char *s = \"x\\\"y\"; char c = '\\n'; x += 0x1F;",
    "",
];

#[test]
fn snippets_match_oracle() {
    for code in SNIPPETS {
        let toks = tokenize(code);
        for (dim, n_max) in [(16, 1), (1024, 2), (1 << 18, 3)] {
            let got = library(code, dim, n_max);
            if toks.is_empty() {
                assert!(got.is_empty());
                continue;
            }
            let want = oracle(&toks.as_strs(), dim, n_max, DEFAULT_HASH_SEED);
            assert_eq!(got.keys().collect::<Vec<_>>(), want.keys().collect::<Vec<_>>(), "{code:?} {dim}");
            for (k, v) in &want {
                assert!((got[k] - v).abs() < 1e-15, "{code:?} {dim} bucket {k}");
            }
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct Golden {
    code: String,
    tokens: Vec<String>,
    dim: usize,
    n_max: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Pins tokenizer output and feature vectors across releases. Set
/// `UPDATE_GOLDEN=1` to rewrite the file after an intended change.
#[test]
fn golden_features_are_stable() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/featurize_golden.json");
    let current: Vec<Golden> = SNIPPETS
        .iter()
        .map(|code| {
            let toks = tokenize(code);
            let fv = featurize(&toks, 1024, 2, DEFAULT_HASH_SEED).unwrap();
            Golden {
                code: code.to_string(),
                tokens: toks.as_strs().iter().map(|s| s.to_string()).collect(),
                dim: 1024,
                n_max: 2,
                indices: fv.indices().to_vec(),
                values: fv.values().to_vec(),
            }
        })
        .collect();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&current).unwrap() + "\n").unwrap();
    }
    let stored: Vec<Golden> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored.len(), current.len());
    for (s, c) in stored.iter().zip(&current) {
        assert_eq!((&s.code, &s.tokens, s.dim, s.n_max, &s.indices), (&c.code, &c.tokens, c.dim, c.n_max, &c.indices));
        for (a, b) in s.values.iter().zip(&c.values) {
            assert!((a - b).abs() < 1e-12, "{:?}: {a} vs {b}", c.code);
        }
    }
}
