#![no_main]

use histroad::raster::{parse_pnm, write_pnm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = parse_pnm(data) {
        let again = parse_pnm(&write_pnm(&img)).expect("written image parses");
        assert_eq!(img, again);
    }
});
