#![no_main]

use bscnets::model::{read_checkpoint, write_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((config, params)) = read_checkpoint(data) {
        assert!(params.all_finite());
        let bytes = write_checkpoint(&config, &params);
        let (c, p) = read_checkpoint(&bytes).unwrap();
        assert_eq!(c, config);
        assert_eq!(p, params);
    }
});
