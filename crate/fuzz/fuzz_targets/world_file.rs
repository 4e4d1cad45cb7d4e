#![no_main]

use histroad::raster::{format_world_file, parse_world_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_world_file(text) {
        let again = parse_world_file(&format_world_file(&t)).expect("formatted transform parses");
        assert_eq!(t, again);
    }
});
