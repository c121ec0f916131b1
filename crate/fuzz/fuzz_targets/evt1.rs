#![no_main]

use edeblur_core::formats::evt1;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = evt1::decode(data) {
        let again = evt1::decode(&evt1::encode(&stream)).expect("re-encoded stream decodes");
        assert_eq!(again.events(), stream.events());
    }
});
