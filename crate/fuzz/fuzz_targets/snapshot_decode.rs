#![no_main]

use adaptms::model::{decode_snapshot, encode_snapshot};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(snapshot) = decode_snapshot(data) {
        let bytes = encode_snapshot(&snapshot);
        let again = decode_snapshot(&bytes).expect("encoded snapshot decodes");
        assert_eq!(encode_snapshot(&again), bytes);
    }
});
