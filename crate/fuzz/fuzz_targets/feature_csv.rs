#![no_main]

use bscnets::graph::{features_to_csv, parse_features_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(x) = parse_features_csv(text) {
        assert!(x.iter().all(|v| v.is_finite()));
        if x.ncols() > 0 {
            assert_eq!(parse_features_csv(&features_to_csv(&x)).unwrap(), x);
        }
    }
});
