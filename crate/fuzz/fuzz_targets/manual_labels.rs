#![no_main]

use histroad::reference::parse_manual_labels;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_manual_labels(data);
});
