use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, norm};
use crate::scalar::Scalar;

/// Floor applied to the target probability before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::Numerical("softmax input is not finite".into()));
    }
    let mut out: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// `-ln p[target]`, with `p[target]` floored at [`LOG_FLOOR`].
pub fn cross_entropy<T: Scalar>(p: &[T], target: usize) -> Result<T> {
    let pt = *p.get(target).ok_or(Error::Index {
        index: target,
        len: p.len(),
    })?;
    Ok(-(pt.max(T::of(LOG_FLOOR))).ln())
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::DegenerateInput("zero-norm vector in cosine similarity".into()));
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Cosine similarity and its gradient with respect to both arguments.
///
/// Returns `None` when either vector has zero norm.
pub fn cosine_with_grad<T: Scalar>(a: &[T], b: &[T]) -> Option<(T, Vec<T>, Vec<T>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return None;
    }
    let c = dot(a, b) / (na * nb);
    let inv = T::one() / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y * inv - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x * inv - c * y / (nb * nb))
        .collect();
    Some((c, ga, gb))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
