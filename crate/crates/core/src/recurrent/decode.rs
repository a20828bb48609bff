use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{is_generation_excluded, nearest_word, similarities, EmbeddingMatrix, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix};
use crate::recurrent::lstm::LstmState;
use crate::recurrent::stack::{RnnStack, StackCache};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_LEN: usize = 30;
/// Temperatures below this are treated as greedy decoding.
pub const MIN_TEMPERATURE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Affine map to vocabulary logits followed by softmax.
    Softmax,
    /// Linear map into embedding space, decoded by cosine nearest neighbour.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample { temperature: f64 },
}

/// Output layer reading the decoder's top-layer `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead<T> {
    pub kind: HeadKind,
    pub w: Matrix<T>,
    pub b: Matrix<T>,
}

impl<T: Scalar> OutputHead<T> {
    /// `out_dim` is the vocabulary size for softmax and the embedding size for cosine.
    pub fn zeros(kind: HeadKind, out_dim: usize, hidden: usize) -> Self {
        Self {
            kind,
            w: Matrix::zeros(out_dim, hidden),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(kind: HeadKind, out_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            kind,
            w: Matrix::glorot(out_dim, hidden, rng),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.w.rows(), self.w.cols())
    }

    /// Raw affine output: logits or an embedding-space vector.
    pub fn project(&self, h: &[T]) -> Result<Vec<T>> {
        let mut out = self.b.as_slice().to_vec();
        self.w.matvec_acc(h, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutput<T> {
    /// Probability vector over the vocabulary.
    Distribution(Vec<T>),
    /// Point in embedding space.
    Vector(Vec<T>),
}

/// Feeds `prev_token` through the decoder stack and applies the output head.
pub fn decode_step<T: Scalar>(
    prev_token: usize,
    state: &[LstmState<T>],
    emb: &EmbeddingMatrix<T>,
    stack: &RnnStack<T>,
    head: &OutputHead<T>,
) -> Result<(DecodeOutput<T>, Vec<LstmState<T>>, StackCache<T>)> {
    if prev_token >= emb.vocab_size() {
        return Err(Error::Index {
            index: prev_token,
            len: emb.vocab_size(),
        });
    }
    let (next, cache) = stack.step(emb.row(prev_token), state)?;
    let top = &next.last().expect("validated depth").h;
    let raw = head.project(top)?;
    let out = match head.kind {
        HeadKind::Softmax => {
            if raw.len() != emb.vocab_size() {
                return Err(Error::Config(format!(
                    "softmax head emits {} logits for a vocabulary of {}",
                    raw.len(),
                    emb.vocab_size()
                )));
            }
            DecodeOutput::Distribution(softmax(&raw)?)
        }
        HeadKind::Cosine => {
            if raw.len() != emb.dim() {
                return Err(Error::Config(format!(
                    "cosine head emits {} values for embeddings of dimension {}",
                    raw.len(),
                    emb.dim()
                )));
            }
            DecodeOutput::Vector(raw)
        }
    };
    Ok((out, next, cache))
}

fn softmax_eligible(id: usize) -> bool {
    id != PAD && id != BOS
}

fn pick_token<T: Scalar, R: Rng>(
    out: &DecodeOutput<T>,
    emb: &EmbeddingMatrix<T>,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<usize> {
    let temperature = match mode {
        DecodeMode::Sample { temperature } if temperature >= MIN_TEMPERATURE => Some(temperature),
        _ => None,
    };
    match (out, temperature) {
        (DecodeOutput::Distribution(p), None) => {
            let mut best: Option<(usize, T)> = None;
            for (id, &v) in p.iter().enumerate().filter(|(id, _)| softmax_eligible(*id)) {
                match best {
                    Some((_, b)) if v <= b => {}
                    _ => best = Some((id, v)),
                }
            }
            Ok(best.map(|(id, _)| id).unwrap_or(EOS))
        }
        (DecodeOutput::Distribution(p), Some(t)) => {
            let logp: Vec<f64> = p.iter().map(|x| x.as_f64().ln()).collect();
            let max = logp
                .iter()
                .enumerate()
                .filter(|(id, _)| softmax_eligible(*id))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logp
                .iter()
                .enumerate()
                .map(|(id, &v)| {
                    if softmax_eligible(id) {
                        ((v - max) / t).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            sample_index(&weights, rng)
        }
        (DecodeOutput::Vector(v), None) => match nearest_word(v, emb, true) {
            Ok(id) => Ok(id),
            Err(Error::DegenerateInput(_)) => Ok(EOS),
            Err(e) => Err(e),
        },
        (DecodeOutput::Vector(v), Some(t)) => {
            if v.iter().all(|x| *x == T::zero()) {
                return Ok(EOS);
            }
            let sims = similarities(v, emb);
            let weights: Vec<f64> = sims
                .iter()
                .enumerate()
                .map(|(id, s)| {
                    if is_generation_excluded(id) {
                        0.0
                    } else {
                        ((s.as_f64() - 1.0) / t).exp()
                    }
                })
                .collect();
            sample_index(&weights, rng)
        }
    }
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(weights)
        .map_err(|e| Error::Numerical(format!("cannot sample next token: {e}")))?;
    Ok(dist.sample(rng))
}

/// Generates a sentence starting from BOS.
///
/// Stops at EOS or after `max_len` tokens; the result always ends with EOS and
/// does not include the leading BOS.
pub fn generate<T: Scalar>(
    initial: &[LstmState<T>],
    emb: &EmbeddingMatrix<T>,
    stack: &RnnStack<T>,
    head: &OutputHead<T>,
    max_len: usize,
    mode: DecodeMode,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut state = initial.to_vec();
    let mut prev = BOS;
    let mut out = Vec::with_capacity(max_len + 1);
    for _ in 0..max_len {
        let (dist, next, _) = decode_step(prev, &state, emb, stack, head)?;
        let tok = pick_token(&dist, emb, mode, &mut rng)?;
        out.push(tok);
        if tok == EOS {
            return Ok(out);
        }
        state = next;
        prev = tok;
    }
    out.push(EOS);
    Ok(out)
}
