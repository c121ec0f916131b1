#![no_main]

use edeblur_core::formats::archive::TensorArchive;
use edeblur_model::Model;
use libfuzzer_sys::fuzz_target;

// Archive container first, then the checkpoint loader on whatever it holds.
fuzz_target!(|data: &[u8]| {
    if let Ok(archive) = TensorArchive::decode(data) {
        let again = TensorArchive::decode(&archive.encode()).expect("re-encoded archive decodes");
        assert_eq!(again.len(), archive.len());
        let _ = Model::from_archive(&archive);
    }
});
