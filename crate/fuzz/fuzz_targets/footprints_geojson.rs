#![no_main]

use histroad::io::parse_footprints_geojson;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = parse_footprints_geojson(text) {
        assert!(set.values().all(|ring| ring.len() >= 3));
    }
});
