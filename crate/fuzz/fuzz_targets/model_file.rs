#![no_main]

use cwe_moe::learn::ModelFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(file) = ModelFile::from_json(data) {
        let _ = file.to_model();
    }
});
