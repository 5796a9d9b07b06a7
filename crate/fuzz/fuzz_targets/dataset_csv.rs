#![no_main]

use libfuzzer_sys::fuzz_target;
use qcl_forest::io::{parse_dataset_csv, write_dataset_csv, ResponseMode, Schema};

fuzz_target!(|data: &[u8]| {
    let Ok(d) = parse_dataset_csv(data, None, ResponseMode::Required) else { return };
    let mut buf = Vec::new();
    write_dataset_csv(&d, &mut buf).expect("writing to memory");
    let back = parse_dataset_csv(&buf[..], Some(&Schema::of(&d)), ResponseMode::Required).expect("own output parses");
    assert_eq!(back, d);
});
