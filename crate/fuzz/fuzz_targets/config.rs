#![no_main]

use edeblur_cli::config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = config::parse(text) {
        for (k, _) in pairs {
            assert!(!k.is_empty() && !k.starts_with('-'));
        }
    }
});
