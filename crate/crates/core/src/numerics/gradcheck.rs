use super::Parameter;
use crate::error::{Error, Result};

/// Compares the gradients already stored in `params[..].grad` against central
/// differences of `loss`, one coordinate at a time.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`. Parameter values are restored
/// after each probe.
pub fn finite_diff_check<F>(params: &mut [Parameter], step: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[Parameter]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        if params[p].grad.shape() != params[p].value.shape() {
            params[p].zero_grad();
        }
        for c in 0..params[p].value.data().len() {
            let original = params[p].value.data()[c];
            params[p].value.data_mut()[c] = original + step;
            let plus = loss(params);
            params[p].value.data_mut()[c] = original - step;
            let minus = loss(params);
            params[p].value.data_mut()[c] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss probing {}[{c}]",
                    params[p].name
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = params[p].grad.data()[c];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
