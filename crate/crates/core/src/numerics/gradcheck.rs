use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient estimate of `f` at `x`.
pub fn finite_diff_gradient<T, F>(mut f: F, x: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    let mut probe = x.to_vec();
    let two = T::one() + T::one();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe)?;
        probe[i] = orig - eps;
        let minus = f(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (two * eps));
    }
    Ok(grad)
}

/// Relative error used by the gradient checks: `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error<T: Scalar>(analytic: T, numeric: T, floor: T) -> T {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
