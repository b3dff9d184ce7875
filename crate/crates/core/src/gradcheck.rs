//! Central finite-difference gradient checking.
//!
//! Kernels run in f32, so the harness scalarises outputs in f64, divides by
//! the perturbation that was actually representable, and reports a norm-wise
//! relative error `||a - n|| / max(||a||, ||n||)` that is not dominated by
//! near-zero components.

/// Default perturbation.
pub const FD_EPS: f32 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol
    }
}

/// `sum_i out[i] * weights[i]` in f64: a fixed random projection turns a
/// vector-valued kernel into a scalar objective.
pub fn projection(out: &[f32], weights: &[f32]) -> f64 {
    assert_eq!(out.len(), weights.len(), "projection length mismatch");
    out.iter().zip(weights).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f32], eps: f32, mut f: impl FnMut(&[f32]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        let hi = orig + eps;
        let lo = orig - eps;
        probe[i] = hi;
        let f_hi = f(&probe);
        probe[i] = lo;
        let f_lo = f(&probe);
        probe[i] = orig;
        grad.push((f_hi - f_lo) / (hi as f64 - lo as f64));
    }
    grad
}

pub fn compare(analytic: &[f32], numeric: &[f64]) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut diff2 = 0.0f64;
    let mut a2 = 0.0f64;
    let mut n2 = 0.0f64;
    let mut max_abs = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        let d = a - n;
        diff2 += d * d;
        a2 += a * a;
        n2 += n * n;
        max_abs = max_abs.max(d.abs());
    }
    let scale = a2.sqrt().max(n2.sqrt());
    let rel_err = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
    GradCheckReport { rel_err, max_abs_err: max_abs, checked: analytic.len() }
}

/// Finite-difference `f` at `x` and compare against `analytic`.
pub fn check(x: &[f32], analytic: &[f32], eps: f32, f: impl FnMut(&[f32]) -> f64) -> GradCheckReport {
    compare(analytic, &numeric_gradient(x, eps, f))
}
