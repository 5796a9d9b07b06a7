#![no_main]

use libfuzzer_sys::fuzz_target;
use qcl_forest::io::Schema;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(schema) = Schema::from_json(s) {
        let text = serde_json::to_string(&schema).expect("schema serializes");
        assert_eq!(Schema::from_json(&text).expect("own output parses"), schema);
    }
});
