#![no_main]

use libfuzzer_sys::fuzz_target;
use qcl_forest::simgen::FlcId;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(id) = s.parse::<FlcId>() {
        assert_eq!(id.to_string().parse::<FlcId>().expect("display parses"), id);
    }
});
