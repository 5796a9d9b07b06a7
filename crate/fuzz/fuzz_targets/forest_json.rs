#![no_main]

use libfuzzer_sys::fuzz_target;
use qcl_forest::Forest;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(forest) = Forest::from_json(s) else { return };
    // A forest that validates must predict on its own training rows.
    let _ = forest.predict_cdf(&forest.training().row(0)).expect("validated forest predicts");
    let _ = forest.oob_cdfs();
});
