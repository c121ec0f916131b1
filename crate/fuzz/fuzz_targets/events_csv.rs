#![no_main]

use edeblur_core::formats::events_csv;
use libfuzzer_sys::fuzz_target;

// The first two bytes pick the sensor size; the rest is the CSV text.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let (w, h) = (usize::from(data[0]) + 1, usize::from(data[1]) + 1);
    if let Ok(stream) = events_csv::decode(&data[2..], w, h, 0.2) {
        let again = events_csv::decode(&events_csv::encode(&stream), w, h, 0.2).expect("re-encoded CSV decodes");
        assert_eq!(again.events(), stream.events());
    }
});
