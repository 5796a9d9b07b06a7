//! Simulation design fidelity: SNR targets, censoring calibration and
//! covariate marginals, checked from drawn data.

mod common;

use qcl_forest::simgen::{builtin_flc_table, flc, FlcId};

#[test]
fn monte_carlo_r2_within_tolerance_of_targets() {
    let (id, dev) = common::snr_worst_deviation(100_000);
    assert!(dev <= 0.05, "setting {id} deviates by {dev}");
}

#[test]
fn response_variance_decomposition_matches_targets() {
    for cfg in builtin_flc_table().into_iter().filter(|c| c.n == 300 && c.p == 4) {
        let r2 = common::empirical_r2(&cfg, 50_000, 5);
        assert!((r2 - cfg.snr.target_r2()).abs() <= 0.05, "{}: {r2}", cfg.id);
    }
}

#[test]
fn first_setting_has_tabulated_exact_r2() {
    let r2 = flc(FlcId::uncensored(1)).unwrap().exact_r2().unwrap();
    assert!((r2 - 0.7807).abs() < 5e-5, "{r2}");
}

#[test]
fn censoring_share_matches_target() {
    let (id, dev) = common::censoring_worst_deviation(100_000, 77);
    assert!(dev <= 0.01, "setting {id} deviates by {dev}");
}

#[test]
fn categorical_marginals_pass_chi_square() {
    let p = common::categorical_pvalues(100_000, 3);
    assert!(p.iter().all(|&v| v > 1e-3), "{p:?}");
}

#[test]
fn weighted_coverage_degenerates_to_direct_count_without_censoring() {
    let (n, worst) = common::ipcw_degeneracy(9).unwrap();
    assert_eq!(n, 20);
    assert_eq!(worst, 0.0);
}
