#![no_main]

use libfuzzer_sys::fuzz_target;
use mvir_core::data::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(manifest) = DatasetManifest::parse(text) {
            let again = DatasetManifest::parse(&manifest.to_text()).expect("round trip");
            assert_eq!(again.assignment, manifest.assignment);
        }
    }
});
