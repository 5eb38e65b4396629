#![no_main]

use bscnets::hodge::{matrix_from_text, matrix_to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(a) = matrix_from_text(text) {
        if a.iter().all(|v| v.is_finite()) {
            assert_eq!(matrix_from_text(&matrix_to_text(&a.view())).unwrap(), a);
        }
    }
});
