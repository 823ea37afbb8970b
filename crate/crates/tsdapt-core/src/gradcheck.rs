//! Central finite-difference gradient checking (feature `gradcheck`).
//!
//! Used by the test suites to validate the reverse-mode engine against
//! an independent numerical oracle. The oracle only calls forward
//! evaluation: a checked function is rebuilt from scratch at every
//! perturbed point, so it cannot share state with the backward pass it
//! verifies.

use crate::tensor::Array;

/// Central finite differences of `f` with respect to every element of
/// `params`, step `h * max(1, |x|)` per coordinate.
///
/// `f` must rebuild its computation from the parameter values alone.
pub fn finite_difference<F>(f: F, params: &[Array], h: f64) -> Vec<Array>
where
    F: Fn(&[Array]) -> f64,
{
    let mut grads = Vec::with_capacity(params.len());
    let mut work: Vec<Array> = params.to_vec();
    for pi in 0..params.len() {
        let mut grad = Array::zeros(params[pi].shape());
        for i in 0..params[pi].len() {
            let x = params[pi].data()[i];
            let step = h * x.abs().max(1.0);
            work[pi].data_mut()[i] = x + step;
            let up = f(&work);
            work[pi].data_mut()[i] = x - step;
            let down = f(&work);
            work[pi].data_mut()[i] = x;
            grad.data_mut()[i] = (up - down) / (2.0 * step);
        }
        grads.push(grad);
    }
    grads
}

/// Largest relative discrepancy between analytic and numerical
/// gradients: `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_relative_error(analytic: &[Array], numeric: &[Array], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shapes must match");
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
