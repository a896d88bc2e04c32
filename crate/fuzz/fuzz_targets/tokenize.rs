#![no_main]

use cwe_moe::features::{featurize, tokenize, DEFAULT_HASH_SEED};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let code = String::from_utf8_lossy(data);
    let tokens = tokenize(&code);
    let fv = featurize(&tokens, 1 << 10, 3, DEFAULT_HASH_SEED).unwrap();
    let norm: f64 = fv.values().iter().map(|v| v * v).sum();
    assert!(tokens.is_empty() || (norm - 1.0).abs() < 1e-9);
});
