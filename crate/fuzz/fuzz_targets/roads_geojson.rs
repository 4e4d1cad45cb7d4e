#![no_main]

use histroad::io::parse_roads_geojson;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = parse_roads_geojson(text) {
        for s in &net.segments {
            assert!(s.length_m().is_finite());
        }
    }
});
