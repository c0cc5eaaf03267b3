#![no_main]

use libfuzzer_sys::fuzz_target;
use mvir_core::checkpoint::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        assert_eq!(encode_checkpoint(ckpt.fingerprint, &ckpt.params), data);
    }
});
