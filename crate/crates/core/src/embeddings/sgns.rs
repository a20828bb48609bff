use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::table::{EmbeddingMatrix, EmbeddingMode};
use crate::embeddings::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};
use crate::scalar::Scalar;

/// Exponent applied to unigram counts for the negative-sampling distribution.
pub const NOISE_EXPONENT: f64 = 0.75;

/// Skip-gram with negative sampling hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards `1e-4 ×` its value.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

fn initial_tables<T: Scalar>(vocab_size: usize, dim: usize, seed: u64) -> (Matrix<T>, Matrix<T>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / dim as f64;
    (
        Matrix::uniform(vocab_size, dim, bound, &mut rng),
        Matrix::zeros(vocab_size, dim),
    )
}

/// The table `train_sgns` returns when no training happens.
pub fn sgns_initial<T: Scalar>(vocab_size: usize, dim: usize, seed: u64) -> EmbeddingMatrix<T> {
    EmbeddingMatrix::new(initial_tables(vocab_size, dim, seed).0, EmbeddingMode::Frozen)
}

struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Option<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(NOISE_EXPONENT);
                acc
            })
            .collect();
        (acc > 0.0).then_some(Self { cumulative })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Trains word vectors with skip-gram and negative sampling.
///
/// `sentences` are id sequences over a vocabulary of `vocab_size` tokens;
/// PAD/BOS/EOS are ignored. The returned table is the sum of the input and
/// output vectors of each word and is marked [`EmbeddingMode::Frozen`].
pub fn train_sgns<T: Scalar>(
    sentences: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SgnsConfig,
) -> Result<EmbeddingMatrix<T>> {
    if cfg.dim == 0 || cfg.window == 0 || cfg.negatives == 0 {
        return Err(Error::Config(
            "dimension, window and negatives must all be positive".into(),
        ));
    }
    if vocab_size < cfg.negatives + 1 {
        return Err(Error::Config(format!(
            "vocabulary of {vocab_size} tokens is too small for {} negatives",
            cfg.negatives
        )));
    }
    let streams: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .copied()
                .filter(|&id| !matches!(id, PAD | BOS | EOS))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    if streams.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts = vec![0u64; vocab_size];
    for &id in streams.iter().flatten() {
        *counts.get_mut(id).ok_or(Error::Index {
            index: id,
            len: vocab_size,
        })? += 1;
    }
    let noise = NoiseTable::new(&counts).ok_or(Error::EmptyCorpus)?;

    let (mut input, mut output) = initial_tables::<T>(vocab_size, cfg.dim, cfg.seed);
    // Separate stream so the init matches `sgns_initial` regardless of training length.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let total_tokens: u64 = streams.iter().map(|s| s.len() as u64).sum();
    let total_work = (total_tokens * cfg.epochs as u64).max(1) as f64;
    let mut processed = 0u64;
    let mut grad_center = vec![T::zero(); cfg.dim];

    for _ in 0..cfg.epochs {
        for stream in &streams {
            for (pos, &center) in stream.iter().enumerate() {
                let progress = processed as f64 / total_work;
                let lr = T::of(cfg.learning_rate * (1.0 - progress).max(1e-4));
                processed += 1;
                let lo = pos.saturating_sub(cfg.window);
                let hi = (pos + cfg.window + 1).min(stream.len());
                for (ctx_pos, &context) in stream.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad_center.iter_mut().for_each(|g| *g = T::zero());
                    let update = |target: usize, label: T, input: &Matrix<T>, output: &mut Matrix<T>, grad_center: &mut [T]| {
                        let v = input.row(center);
                        let u = output.row_mut(target);
                        let score = v.iter().zip(u.iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
                        let g = (label - sigmoid(score)) * lr;
                        for ((gc, uo), &vi) in grad_center.iter_mut().zip(u.iter_mut()).zip(v) {
                            *gc += g * *uo;
                            *uo += g * vi;
                        }
                    };
                    update(context, T::one(), &input, &mut output, &mut grad_center);
                    for _ in 0..cfg.negatives {
                        let neg = noise.sample(&mut rng);
                        if neg == context {
                            continue;
                        }
                        update(neg, T::zero(), &input, &mut output, &mut grad_center);
                    }
                    input.add_to_row(center, &grad_center);
                }
            }
        }
    }
    input.add_assign(&output)?;
    Ok(EmbeddingMatrix::new(input, EmbeddingMode::Frozen))
}
