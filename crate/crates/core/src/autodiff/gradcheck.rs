//! Central finite-difference gradient checking.

use ndarray::ArrayD;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Relative error with an absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` at the
/// flat indices `indices` of `x`.
pub fn check<F>(mut f: F, x: &ArrayD<f64>, analytic: &ArrayD<f64>, indices: &[usize], h: f64) -> GradCheck
where
    F: FnMut(&ArrayD<f64>) -> f64,
{
    assert_eq!(x.shape(), analytic.shape());
    let mut probe = x.as_standard_layout().into_owned();
    let flat_analytic: Vec<f64> = analytic.as_standard_layout().iter().copied().collect();
    let mut report = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &i in indices {
        let orig = probe.as_slice().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + h;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - h;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = rel_err(flat_analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.checked == 1 {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_index = i;
            report.worst_analytic = flat_analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}
