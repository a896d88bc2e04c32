#![no_main]

use cwe_moe::taxonomy::{CategoryMap, UnknownPolicy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(map) = CategoryMap::from_json(data) {
        for id in map.assignment.keys() {
            let _ = map.resolve(id, UnknownPolicy::FallbackToAgg);
        }
        assert_eq!(CategoryMap::from_json(&map.to_json()).unwrap(), map);
    }
});
