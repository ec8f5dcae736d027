//! Central finite-difference gradient oracle.
//!
//! Re-evaluates a loss at shifted parameter values; never touches the tape,
//! so it stays independent of the reverse-mode path it is used to check.

use crate::diffmath::mlp::MlpParams;

/// Central finite differences (loss(p+h) - loss(p-h)) / 2h for every
/// parameter coordinate, in flat order (weights then bias per layer).
pub fn finite_difference_grad(
    params: &MlpParams,
    h: f64,
    mut loss: impl FnMut(&MlpParams) -> f64,
) -> Vec<f64> {
    let flat = params.flat_values();
    let mut out = vec![0.0; flat.len()];
    let mut work = params.clone();
    let mut shifted = flat.clone();
    for i in 0..flat.len() {
        shifted[i] = flat[i] + h;
        work.set_from_flat(&shifted);
        let plus = loss(&work);
        shifted[i] = flat[i] - h;
        work.set_from_flat(&shifted);
        let minus = loss(&work);
        shifted[i] = flat[i];
        out[i] = (plus - minus) / (2.0 * h);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Max relative error |a-n| / max(|a|,|n|) over coordinates; coordinates
/// where both magnitudes fall below `floor` are skipped.
pub fn compare_grads(analytic: &[f64], numeric: &[f64], floor: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < floor {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max((a - n).abs() / scale);
    }
    report
}
