use rand::Rng;

use crate::embeddings::{EmbeddingMatrix, EOS};
use crate::error::{Error, Result};
use crate::recurrent::lstm::{
    lstm_cell_backward, lstm_cell_forward, LstmParams, LstmState, StateGrad, StepCache,
};
use crate::scalar::Scalar;

/// Layered LSTM; layer 0 reads the input, each later layer reads the `h` of the one below.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnStack<T> {
    pub layers: Vec<LstmParams<T>>,
}

/// Per-layer caches of one time step, bottom layer first.
pub type StackCache<T> = Vec<StepCache<T>>;

impl<T: Scalar> RnnStack<T> {
    pub fn zeros(input_dim: usize, hidden: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| LstmParams::zeros(if l == 0 { input_dim } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|l| LstmParams::init(if l == 0 { input_dim } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn zero_state(&self) -> Vec<LstmState<T>> {
        self.layers
            .iter()
            .map(|l| LstmState::zeros(l.hidden_dim()))
            .collect()
    }

    pub fn zero_grads(&self) -> Vec<StateGrad<T>> {
        self.layers
            .iter()
            .map(|l| StateGrad::zeros(l.hidden_dim()))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LstmParams::zeros_like).collect(),
        }
    }

    /// Checks that each layer reads the hidden size of the one below.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("an RNN stack needs at least one layer".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[1].input_dim() != pair[0].hidden_dim() {
                return Err(Error::dim(format!(
                    "layer reads {} inputs but the layer below emits {}",
                    pair[1].input_dim(),
                    pair[0].hidden_dim()
                )));
            }
        }
        Ok(())
    }

    /// One time step through every layer.
    pub fn step(
        &self,
        x: &[T],
        state: &[LstmState<T>],
    ) -> Result<(Vec<LstmState<T>>, StackCache<T>)> {
        if state.len() != self.depth() {
            return Err(Error::dim(format!(
                "state has {} layers, stack has {}",
                state.len(),
                self.depth()
            )));
        }
        let mut next = Vec::with_capacity(self.depth());
        let mut caches = Vec::with_capacity(self.depth());
        let mut input = x.to_vec();
        for (layer, s) in self.layers.iter().zip(state) {
            let (ns, cache) = lstm_cell_forward(&input, s, layer)?;
            input.clone_from(&ns.h);
            next.push(ns);
            caches.push(cache);
        }
        Ok((next, caches))
    }

    /// Reverse of [`RnnStack::step`].
    ///
    /// `d_out[l]` is the gradient on layer `l`'s output state; the caller adds
    /// any loss gradient on the top `h` into it. Returns the gradient on the
    /// step input and on each layer's previous state.
    pub fn step_backward(
        &self,
        mut d_out: Vec<StateGrad<T>>,
        caches: &[StepCache<T>],
        grads: &mut RnnStack<T>,
    ) -> Result<(Vec<T>, Vec<StateGrad<T>>)> {
        if caches.len() != self.depth() || d_out.len() != self.depth() {
            return Err(Error::Consistency(format!(
                "{} caches and {} gradients for a depth-{} stack",
                caches.len(),
                d_out.len(),
                self.depth()
            )));
        }
        let mut d_prev = Vec::with_capacity(self.depth());
        let mut dx = Vec::new();
        for l in (0..self.depth()).rev() {
            if l + 1 < self.depth() {
                for (a, b) in d_out[l].dh.iter_mut().zip(&dx) {
                    *a += *b;
                }
            }
            let (dxl, dp) = lstm_cell_backward(&d_out[l], &caches[l], &self.layers[l], &mut grads.layers[l])?;
            dx = dxl;
            d_prev.push(dp);
        }
        d_prev.reverse();
        Ok((dx, d_prev))
    }
}

/// Runs a complete sentence through the stack.
///
/// The sentence must end with EOS; returns the per-layer states after the last
/// token together with one [`StackCache`] per time step.
pub fn encode_sequence<T: Scalar>(
    token_ids: &[usize],
    emb: &EmbeddingMatrix<T>,
    stack: &RnnStack<T>,
    initial: &[LstmState<T>],
) -> Result<(Vec<LstmState<T>>, Vec<StackCache<T>>)> {
    match token_ids.last() {
        None => return Err(Error::Protocol("cannot encode an empty sequence".into())),
        Some(&last) if last != EOS => {
            return Err(Error::Protocol("sequence does not end with EOS".into()))
        }
        _ => {}
    }
    let mut state = initial.to_vec();
    let mut caches = Vec::with_capacity(token_ids.len());
    for &id in token_ids {
        if id >= emb.vocab_size() {
            return Err(Error::Index {
                index: id,
                len: emb.vocab_size(),
            });
        }
        let (next, cache) = stack.step(emb.row(id), &state)?;
        state = next;
        caches.push(cache);
    }
    Ok((state, caches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingMode, BOS};
    use crate::numerics::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn emb(v: usize, d: usize, seed: u64) -> EmbeddingMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingMatrix::new(Matrix::glorot(v, d, &mut rng), EmbeddingMode::Trainable)
    }

    #[test]
    fn zero_stack_encodes_to_zero() {
        let stack = RnnStack::<f64>::zeros(4, 3, 2);
        let e = emb(8, 4, 0);
        let (state, caches) = encode_sequence(&[BOS, EOS], &e, &stack, &stack.zero_state()).unwrap();
        assert_eq!(caches.len(), 2);
        assert!(state.iter().all(|s| s.h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn encoding_equals_manual_cell_unrolling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = RnnStack::<f64>::init(4, 3, 2, &mut rng);
        let e = emb(8, 4, 1);
        let seq = [6, 7, EOS];
        let (state, _) = encode_sequence(&seq, &e, &stack, &stack.zero_state()).unwrap();

        let mut manual = stack.zero_state();
        for &id in &seq {
            let (s0, _) = lstm_cell_forward(e.row(id), &manual[0], &stack.layers[0]).unwrap();
            let (s1, _) = lstm_cell_forward(&s0.h, &manual[1], &stack.layers[1]).unwrap();
            manual = vec![s0, s1];
        }
        assert_eq!(state, manual);
    }

    #[test]
    fn different_sentences_encode_differently() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = RnnStack::<f64>::init(4, 5, 2, &mut rng);
        let e = emb(10, 4, 3);
        let (a, _) = encode_sequence(&[5, 6, EOS], &e, &stack, &stack.zero_state()).unwrap();
        let (b, _) = encode_sequence(&[6, 5, EOS], &e, &stack, &stack.zero_state()).unwrap();
        assert_ne!(a[1].h, b[1].h);
    }

    #[test]
    fn protocol_errors() {
        let stack = RnnStack::<f64>::zeros(4, 3, 1);
        let e = emb(8, 4, 0);
        assert!(matches!(
            encode_sequence(&[5, 6], &e, &stack, &stack.zero_state()),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            encode_sequence(&[], &e, &stack, &stack.zero_state()),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            encode_sequence(&[99, EOS], &e, &stack, &stack.zero_state()),
            Err(Error::Index { .. })
        ));
    }
}
