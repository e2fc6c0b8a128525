#![no_main]

use adaptms::calib::{parse_table, write_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((calib, fingerprint)) = parse_table(text) {
        let written = write_table(&calib, &fingerprint);
        assert_eq!(parse_table(&written).expect("written table parses"), (calib, fingerprint));
    }
});
