#![no_main]

use histroad::synth::ScenarioFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ScenarioFile::from_json(text) {
        // building only touches geometry; rendering could allocate huge canvases
        let _ = file.build();
    }
});
