#![no_main]

use cwe_moe::moe::BundleManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = BundleManifest::from_json(data) {
        // Accepted manifests never point outside the bundle directory.
        for f in m.experts.iter().map(|e| &e.file).chain([&m.router, &m.category_map]) {
            assert!(!f.contains(['/', '\\']) && !f.starts_with('.'));
        }
    }
});
