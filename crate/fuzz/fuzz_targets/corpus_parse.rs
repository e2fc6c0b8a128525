#![no_main]

use adaptms::data::{parse_corpus, write_corpus};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = parse_corpus(text) {
        // Anything accepted must survive a write/parse cycle unchanged.
        let written = write_corpus(&corpus);
        let again = parse_corpus(&written).expect("written corpus parses");
        assert_eq!(write_corpus(&again), written);
    }
});
