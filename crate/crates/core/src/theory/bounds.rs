use crate::error::{Error, Result};

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::GammaOutOfRange(gamma))
    }
}

/// Asymptotic bias bound `2 ε R_max / (1 − γ)³` for an ε-sufficient mapping.
pub fn bias_bound(epsilon: f64, r_max: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(epsilon >= 0.0) || !(r_max >= 0.0) {
        return Err(Error::OutOfRange(format!("ε = {epsilon}, R_max = {r_max}")));
    }
    Ok(2.0 * epsilon * r_max / (1.0 - gamma).powi(3))
}

/// Overfitting bound
/// `(2 R_max / (1 − γ)²) √( ln(2 |Σ| |A|^{1+|Σ|} / δ) / (2n) )`.
pub fn overfitting_bound(
    n: usize,
    r_max: f64,
    gamma: f64,
    sigma_card: usize,
    n_actions: usize,
    delta: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if n == 0 || sigma_card == 0 || n_actions == 0 {
        return Err(Error::OutOfRange("n, |Σ| and |A| must be positive".into()));
    }
    let log_term = std::f64::consts::LN_2
        + (sigma_card as f64).ln()
        + (1.0 + sigma_card as f64) * (n_actions as f64).ln()
        - delta.ln();
    Ok(2.0 * r_max / (1.0 - gamma).powi(2) * (log_term / (2.0 * n as f64)).sqrt())
}

/// Deviation `t(δ) = range·√( ln(2 |Σ| |A|^{1+|Σ|} / δ) / (2n) )` that a
/// mean of `n` samples with the given range exceeds, simultaneously over
/// all `(σ, a)` and deterministic policies, with probability at most `δ`.
pub fn hoeffding_deviation(
    n: usize,
    range: f64,
    sigma_card: usize,
    n_actions: usize,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    if n == 0 || sigma_card == 0 || n_actions == 0 {
        return Err(Error::OutOfRange("n, |Σ| and |A| must be positive".into()));
    }
    let log_term = std::f64::consts::LN_2
        + (sigma_card as f64).ln()
        + (1.0 + sigma_card as f64) * (n_actions as f64).ln()
        - delta.ln();
    Ok(range * (log_term / (2.0 * n as f64)).sqrt())
}
