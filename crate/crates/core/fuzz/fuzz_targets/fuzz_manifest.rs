#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = trl3d::synthdata::parse_manifest_bytes(data);
});
