//! Regression tests against the published reference dataset. They run only
//! when the CSV is available (FD_SGPR_DATA or data/ga400.csv) and print a
//! `[SKIP]` line otherwise, so a desk checkout stays green.

use fdgp::calibrate::wls_fit;
use fdgp::dataset::{CsvColumns, DensitySpeedDataset};
use fdgp::models::lookup;

fn ga400() -> Option<DensitySpeedDataset> {
    let candidates = [
        std::env::var("FD_SGPR_DATA").ok(),
        Some("data/ga400.csv".to_string()),
        Some("../../data/ga400.csv".to_string()),
    ];
    for path in candidates.into_iter().flatten() {
        if std::path::Path::new(&path).exists() {
            return DensitySpeedDataset::load_csv(&path, &CsvColumns::default()).ok();
        }
    }
    None
}

#[test]
fn dataset_row_count() {
    let Some(data) = ga400() else {
        println!("[SKIP] ga400 row count: dataset not present");
        return;
    };
    assert_eq!(data.len(), 44_787);
}

#[test]
fn calibrated_parameters_match_reference() {
    let Some(data) = ga400() else {
        println!("[SKIP] ga400 calibration: dataset not present");
        return;
    };
    let weights = data.compute_weights(50).unwrap();
    // (model, reference parameters, relative tolerance); the looser rows
    // reflect reference values that sit far below the observed density
    // ceiling, where the objective is flat.
    let cases: [(&str, Vec<f64>, f64); 4] = [
        ("greenshields", vec![52.12, 76.68], 0.02),
        ("cheng", vec![68.70, 20.02, 2.21], 0.02),
        ("underwood", vec![80.51, 92.49], 0.02),
        ("greenberg", vec![22.06, 92.49], 0.02),
    ];
    for (name, reference, tol) in cases {
        let fit = wls_fit(lookup(name).unwrap(), &data, &weights, None, 0).unwrap();
        for (got, want) in fit.model.params().iter().zip(&reference) {
            let rel = ((got - want) / want).abs();
            assert!(rel <= tol, "{name}: {got} vs {want} (rel {rel:.3})");
        }
    }
}
