#![no_main]

use libfuzzer_sys::fuzz_target;
use qcl_forest::simgen::{generate_with, FlcConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(cfg) = serde_json::from_slice::<FlcConfig>(data) else { return };
    if cfg.validate().is_err() || cfg.n > 2000 {
        return;
    }
    let _ = cfg.exact_r2();
    if cfg.censoring.unwrap_or(0.0) == 0.0 {
        let _ = generate_with(&cfg, 1, 10);
    }
});
