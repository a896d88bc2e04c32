#![no_main]

use cwe_moe::corpus::SplitManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = SplitManifest::from_json(data) {
        assert_eq!(SplitManifest::from_json(&m.to_json()).unwrap(), m);
    }
});
