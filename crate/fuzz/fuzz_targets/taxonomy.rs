#![no_main]

use cwe_moe::taxonomy::{build_categories, load_tree, CweId};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(tree) = load_tree(data) else { return };
    // Every node resolves to at least one root, and a map over unit counts
    // assigns every counted id.
    let counts = tree.nodes().map(|n| (n.clone(), 1u64)).collect::<std::collections::BTreeMap<CweId, u64>>();
    for n in tree.nodes() {
        assert!(!tree.top_level_of(n).unwrap().is_empty());
    }
    if let Ok(map) = build_categories(&tree, &counts, 2) {
        for id in counts.keys() {
            assert!(map.category_of(id).is_ok());
        }
    }
});
