#![no_main]

use bscnets::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        cfg.validate().expect("parsed configs are valid");
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }
});
