#![no_main]

use libfuzzer_sys::fuzz_target;
use mvir_core::data::{decode_fixture, encode_fixture};

fuzz_target!(|data: &[u8]| {
    if let Ok(fixture) = decode_fixture(data) {
        let bytes = encode_fixture(&fixture).expect("decoded fixture re-encodes");
        assert_eq!(decode_fixture(&bytes).expect("round trip"), fixture);
    }
});
