#![no_main]

use bscnets::epidemic::parse_score_file;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = parse_score_file(text) {
        if let Some(max) = table.max_node() {
            let _ = table.score(max, 0);
        }
    }
});
