//! Central-finite-difference gradient oracle.
//!
//! The oracle evaluates the checked function twice per input element with the
//! autodiff machinery disabled, so it is independent of every backward rule
//! it verifies.

use crate::scalar::Scalar;
use crate::tape;
use crate::tensor::{no_grad, Tensor};

/// Worst element found by a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare analytic gradients of `f` (a scalar-valued function of the given
/// inputs) against central differences with step `h`.
///
/// Relative error per element is `|a - n| / max(1, |a|, |n|)`; the report
/// carries the maximum over all elements of all inputs.
pub fn check_gradients<S, F>(inputs: &[Tensor<S>], f: F, h: f64) -> GradCheckReport
where
    S: Scalar,
    F: Fn(&[Tensor<S>]) -> Tensor<S>,
{
    for t in inputs {
        assert!(t.requires_grad(), "gradcheck inputs must be parameters");
        t.zero_grad();
    }
    let loss = f(inputs);
    assert_eq!(loss.numel(), 1, "gradcheck target must be scalar");
    tape::backward(&loss).expect("backward failed during gradcheck");

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_element: 0,
        analytic: 0.0,
        numeric: 0.0,
    };

    for (ti, t) in inputs.iter().enumerate() {
        let analytic = t.grad().unwrap_or_else(|| vec![S::zero(); t.numel()]);
        for j in 0..t.numel() {
            let orig = t.data()[j];
            let hv = S::from_f64(h);

            t.data_mut()[j] = orig + hv;
            let plus = no_grad(|| f(inputs).item()).to_f64_lossy();
            t.data_mut()[j] = orig - hv;
            let minus = no_grad(|| f(inputs).item()).to_f64_lossy();
            t.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[j].to_f64_lossy();
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_input: ti,
                    worst_element: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    report
}
