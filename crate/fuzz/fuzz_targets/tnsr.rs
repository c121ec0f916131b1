#![no_main]

use edeblur_core::formats::tnsr;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = tnsr::decode(data) {
        let again = tnsr::decode(&tnsr::encode(&t)).expect("re-encoded tensor decodes");
        assert_eq!(again.shape(), t.shape());
    }
});
