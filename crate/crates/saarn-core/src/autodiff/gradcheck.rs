//! Central finite-difference verification of analytic gradients.
//!
//! The harness only evaluates forward passes supplied by the caller, so it
//! stays independent of the backward implementation it is used to check.

use ndarray::ArrayD;

/// Settings for a finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    /// Half-step for central differences.
    pub eps: f64,
    /// Floor applied to the relative-error denominator, guarding
    /// near-zero gradient entries against finite-difference noise.
    pub denom_floor: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            denom_floor: 1e-4,
        }
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Central-difference gradient of `f` with respect to input `which`.
pub fn numeric_grad<F>(f: &F, at: &[ArrayD<f64>], which: usize, eps: f64) -> ArrayD<f64>
where
    F: Fn(&[ArrayD<f64>]) -> f64,
{
    let mut inputs: Vec<ArrayD<f64>> = at.to_vec();
    let mut grad = ArrayD::<f64>::zeros(at[which].raw_dim());
    let n = at[which].len();
    for i in 0..n {
        let orig = inputs[which].as_slice().unwrap()[i];
        inputs[which].as_slice_mut().unwrap()[i] = orig + eps;
        let plus = f(&inputs);
        inputs[which].as_slice_mut().unwrap()[i] = orig - eps;
        let minus = f(&inputs);
        inputs[which].as_slice_mut().unwrap()[i] = orig;
        grad.as_slice_mut().unwrap()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Compares analytic gradients (one per input, `None` to skip an input)
/// against central differences of `f` evaluated at `at`.
pub fn compare<F>(
    f: &F,
    at: &[ArrayD<f64>],
    analytic: &[Option<&ArrayD<f64>>],
    settings: CheckSettings,
) -> CheckOutcome
where
    F: Fn(&[ArrayD<f64>]) -> f64,
{
    assert_eq!(at.len(), analytic.len());
    let mut outcome = CheckOutcome {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    for (which, ana) in analytic.iter().enumerate() {
        let Some(ana) = ana else { continue };
        assert_eq!(
            ana.shape(),
            at[which].shape(),
            "analytic gradient shape mismatch for input {which}"
        );
        let num = numeric_grad(f, at, which, settings.eps);
        for (i, (&a, &n)) in ana.iter().zip(num.iter()).enumerate() {
            let denom = a.abs().max(n.abs()).max(settings.denom_floor);
            let rel = (a - n).abs() / denom;
            if rel > outcome.max_rel_error {
                outcome.max_rel_error = rel;
                outcome.worst = Some((which, i));
                outcome.analytic_at_worst = a;
                outcome.numeric_at_worst = n;
            }
        }
    }
    outcome
}

/// Panics with context when the worst relative error exceeds `tol`.
pub fn assert_close<F>(
    f: &F,
    at: &[ArrayD<f64>],
    analytic: &[Option<&ArrayD<f64>>],
    tol: f64,
    label: &str,
) where
    F: Fn(&[ArrayD<f64>]) -> f64,
{
    let outcome = compare(f, at, analytic, CheckSettings::default());
    assert!(
        outcome.max_rel_error < tol,
        "{label}: max relative error {:.3e} >= {tol:.1e} at {:?} (analytic {:.6e}, numeric {:.6e})",
        outcome.max_rel_error,
        outcome.worst,
        outcome.analytic_at_worst,
        outcome.numeric_at_worst,
    );
}
