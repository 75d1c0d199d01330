#![no_main]

use libfuzzer_sys::fuzz_target;

// The checkpoint container parser must reject arbitrary bytes without
// panicking or over-allocating.
fuzz_target!(|data: &[u8]| {
    let _ = trl3d::checkpoint::from_bytes(data);
});
