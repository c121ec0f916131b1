#![no_main]

use edeblur_core::shutter::{decode_manifest, encode_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = decode_manifest(text) {
        assert_eq!(decode_manifest(&encode_manifest(&records)).expect("round trip"), records);
    }
});
