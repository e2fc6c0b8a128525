#![no_main]

use adaptms::embed::{decode_cache, encode_cache};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = decode_cache(data) {
        let bytes = encode_cache(&table);
        let again = decode_cache(&bytes).expect("encoded cache decodes");
        assert_eq!(encode_cache(&again), bytes);
    }
});
