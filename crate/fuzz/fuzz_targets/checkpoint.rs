#![no_main]

use ddnet::model::decode_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        for e in &ckpt.entries {
            assert_eq!(e.values.len(), e.dims.len());
        }
    }
});
