#![no_main]

use libfuzzer_sys::fuzz_target;
use swingup::checkpoint::Checkpoint;

// The decoder must reject arbitrary bytes without panicking, and anything
// it accepts must survive an encode/decode round trip unchanged.
fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let bytes = ck.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint must decode");
        assert_eq!(again, ck);
    }
});
