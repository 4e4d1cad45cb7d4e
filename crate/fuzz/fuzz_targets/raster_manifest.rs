#![no_main]

use histroad::io::RasterManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = RasterManifest::from_json(text) {
        let again = RasterManifest::from_json(&m.to_json()).expect("serialized manifest parses");
        assert_eq!(m.sheets.len(), again.sheets.len());
    }
});
