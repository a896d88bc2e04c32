#![no_main]

use cwe_moe::corpus::{ingest, parse_record};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    for (i, line) in data.lines().enumerate() {
        let _ = parse_record(line, i + 1);
    }
    if let Ok(samples) = ingest(data) {
        assert!(samples.len() <= data.lines().count());
    }
});
