//! Central-difference gradient checking.

/// Compares `analytic_grad` against central differences of `loss` around
/// `params` and returns the worst elementwise relative error, with the
/// denominator floored at max(|a|, |b|, 1e-8).
///
/// `eps` must lie in [1e-7, 1e-3]; 64-bit central differences lose accuracy
/// outside that window.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], analytic_grad: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "finite_diff_check: eps {eps} outside [1e-7, 1e-3]"
    );
    assert_eq!(params.len(), analytic_grad.len());

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = loss(&work);
        work[i] = orig - eps;
        let down = loss(&work);
        work[i] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let analytic = analytic_grad[i];
        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
        let rel = (numeric - analytic).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
