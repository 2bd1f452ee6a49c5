//! Central finite differences for checking analytic gradients.

/// Default perturbation for 64-bit checks.
pub const STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale, where the
/// difference quotient's rounding noise would otherwise dominate a relative error.
pub const GRAD_FLOOR: f64 = 1e-5;

/// `(f(x + h) - f(x - h)) / 2h` where `f` receives the perturbed coordinate value.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}
