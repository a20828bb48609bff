use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub decay_rho: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay_rho: 0.9,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub const DEFAULT_CLIP_NORM: f64 = 5.0;

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_rho > 0.0 && self.decay_rho < 1.0) {
            return Err(Error::Config(format!(
                "decay rho must lie in (0, 1), got {}",
                self.decay_rho
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Running average of squared gradients, one accumulator per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState<T> {
    pub cache: Vec<Matrix<T>>,
    pub step_count: u64,
}

impl<T: Scalar> RmsPropState<T> {
    pub fn new<'a, I>(params: I) -> Self
    where
        I: IntoIterator<Item = &'a Matrix<T>>,
    {
        Self {
            cache: params.into_iter().map(Matrix::zeros_like).collect(),
            step_count: 0,
        }
    }
}

/// Applies one RMSProp update in place:
/// `cache ← ρ·cache + (1−ρ)·g²`, `param ← param − lr·g/(√cache + ε)`.
///
/// When `clip_norm` is set, gradients are rescaled so their global L2 norm does
/// not exceed it before the update.
pub fn rmsprop_step<T: Scalar>(
    params: &mut [&mut Matrix<T>],
    grads: &[&Matrix<T>],
    state: &mut RmsPropState<T>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.cache.len() {
        return Err(Error::dim(format!(
            "{} parameters, {} gradients, {} cache tensors",
            params.len(),
            grads.len(),
            state.cache.len()
        )));
    }
    for ((p, g), c) in params.iter().zip(grads).zip(&state.cache) {
        if !p.same_shape(g) || !p.same_shape(c) {
            return Err(Error::dim(format!(
                "parameter {:?}, gradient {:?}, cache {:?}",
                p.shape(),
                g.shape(),
                c.shape()
            )));
        }
    }

    let mut scale = T::one();
    if let Some(clip) = cfg.clip_norm {
        let total: T = grads.iter().map(|g| g.sum_squares()).sum();
        let norm = total.sqrt();
        let clip = T::of(clip);
        if norm > clip {
            scale = clip / norm;
        }
    }

    let rho = T::of(cfg.decay_rho);
    let one_minus_rho = T::one() - rho;
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    for ((p, g), c) in params.iter_mut().zip(grads).zip(state.cache.iter_mut()) {
        let pv = p.as_mut_slice();
        let cv = c.as_mut_slice();
        for ((w, &gi), ci) in pv.iter_mut().zip(g.as_slice()).zip(cv.iter_mut()) {
            let gi = gi * scale;
            *ci = rho * *ci + one_minus_rho * gi * gi;
            *w -= lr * gi / (ci.sqrt() + eps);
        }
    }
    state.step_count += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix<f64> {
        Matrix::column(vec![v])
    }

    #[test]
    fn single_step_matches_hand_computation() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let mut st = RmsPropState::new([&p]);
        let cfg = OptimizerConfig::default();
        rmsprop_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
        assert!((st.cache[0].get(0, 0) - 0.1).abs() < 1e-15);
        assert!((p.get(0, 0) + 3.16227e-3).abs() < 1e-8);
        assert_eq!(st.step_count, 1);

        let before = p.get(0, 0);
        rmsprop_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
        assert!((st.cache[0].get(0, 0) - 0.19).abs() < 1e-15);
        assert!((p.get(0, 0) - before + 2.29416e-3).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_only_decays_cache() {
        let mut p = Matrix::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let g = Matrix::zeros(1, 2);
        let mut st = RmsPropState::new([&p]);
        st.cache[0].fill(1.0);
        rmsprop_step(&mut [&mut p], &[&g], &mut st, &OptimizerConfig::default()).unwrap();
        assert_eq!(p.as_slice(), &[0.5, -0.5]);
        assert_eq!(st.cache[0].as_slice(), &[0.9, 0.9]);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut p = scalar(0.0);
        let g = scalar(100.0);
        let mut st = RmsPropState::new([&p]);
        let cfg = OptimizerConfig {
            clip_norm: Some(OptimizerConfig::DEFAULT_CLIP_NORM),
            ..Default::default()
        };
        rmsprop_step(&mut [&mut p], &[&g], &mut st, &cfg).unwrap();
        assert!((st.cache[0].get(0, 0) - 0.1 * 25.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut p = Matrix::from_vec(2, 2, vec![0.1, -0.2, 0.3, 0.7]).unwrap();
            let g = Matrix::from_vec(2, 2, vec![0.01, 0.5, -1.5, 2.0]).unwrap();
            let mut st = RmsPropState::new([&p]);
            for _ in 0..10 {
                rmsprop_step(&mut [&mut p], &[&g], &mut st, &OptimizerConfig::default()).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y): (&f64, &f64)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar(0.0);
        let g = Matrix::zeros(2, 1);
        let mut st = RmsPropState::new([&p]);
        let err = rmsprop_step(&mut [&mut p], &[&g], &mut st, &OptimizerConfig::default());
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
