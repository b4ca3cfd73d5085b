//! Central-difference gradient oracle.
//!
//! Works on plain function evaluations only, so it stays independent of the
//! tape it is used to check.

use crate::scalar::Real;

/// Magnitudes below this are compared absolutely; relative error of two
/// numbers that are both round-off is meaningless.
pub const MAGNITUDE_FLOOR: f64 = 1e-7;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences<S: Real>(x: &[S], h: S, mut f: impl FnMut(&[S]) -> S) -> Vec<S> {
    let mut p = x.to_vec();
    let two_h = h + h;
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / two_h
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub rtol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Elementwise `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR) < rtol`.
pub fn compare<S: Real>(analytic: &[S], numeric: &[S], rtol: f64) -> GradCheckReport {
    compare_with_floor(analytic, numeric, rtol, MAGNITUDE_FLOOR)
}

/// [`compare`] with a caller-chosen magnitude floor, e.g. one scaled to the
/// finite-difference noise of a large objective.
pub fn compare_with_floor<S: Real>(analytic: &[S], numeric: &[S], rtol: f64, floor: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut report = GradCheckReport { checked: analytic.len(), failures: 0, max_rel_error: 0.0, worst_index: None, rtol };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let (a, n) = (a.to_f64_lossy(), n.to_f64_lossy());
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / denom;
        if !(rel < rtol) {
            report.failures += 1;
        }
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report
}
