#![no_main]

use edeblur_core::formats::pnm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(image) = pnm::decode(data) {
        assert!(image.in_unit_range());
        // Output is always 8-bit, so a second encode must be stable.
        let bytes = pnm::encode(&image).expect("decoded image encodes");
        let again = pnm::decode(&bytes).expect("8-bit output decodes");
        assert_eq!(pnm::encode(&again).expect("re-encodes"), bytes);
    }
});
