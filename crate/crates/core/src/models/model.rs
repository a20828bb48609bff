use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{EmbeddingMatrix, EmbeddingMode, Vocabulary};
use crate::error::{Error, Result};
use crate::models::config::{Architecture, ModelConfig};
use crate::numerics::Matrix;
use crate::recurrent::{
    encode_sequence, generate, DecodeMode, LstmState, OutputHead, RnnStack, DEFAULT_MAX_LEN,
};
use crate::scalar::Scalar;

/// Affine map from the context's top-layer `h` to one decoder layer's initial `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bridge<T> {
    pub w: Matrix<T>,
    pub b: Matrix<T>,
}

impl<T: Scalar> Bridge<T> {
    pub fn identity(hidden: usize) -> Self {
        Self {
            w: Matrix::identity(hidden),
            b: Matrix::zeros(hidden, 1),
        }
    }

    pub fn zeros(out: usize, input: usize) -> Self {
        Self {
            w: Matrix::zeros(out, input),
            b: Matrix::zeros(out, 1),
        }
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = self.b.as_slice().to_vec();
        self.w.matvec_acc(x, &mut out)?;
        Ok(out)
    }
}

/// Every trainable tensor of a dialogue model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: EmbeddingMatrix<T>,
    pub encoder: RnnStack<T>,
    pub decoder: RnnStack<T>,
    /// Sentence-level context network (HRED only).
    pub context: Option<RnnStack<T>>,
    /// One bridge per decoder layer (HRED only).
    pub bridge: Vec<Bridge<T>>,
    pub head: OutputHead<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden_dim;
        let hred = cfg.arch == Architecture::Hred;
        Self {
            embedding: EmbeddingMatrix::new(
                Matrix::zeros(cfg.vocab_size, cfg.embed_dim),
                cfg.embedding_mode,
            ),
            encoder: RnnStack::zeros(cfg.embed_dim, h, cfg.depth),
            decoder: RnnStack::zeros(cfg.embed_dim, h, cfg.depth),
            context: hred.then(|| RnnStack::zeros(h, h, cfg.depth)),
            bridge: if hred {
                (0..cfg.depth).map(|_| Bridge::zeros(h, h)).collect()
            } else {
                Vec::new()
            },
            head: OutputHead::zeros(cfg.head, cfg.head_dim(), h),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: EmbeddingMatrix::new(self.embedding.vectors.zeros_like(), self.embedding.mode),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            context: self.context.as_ref().map(RnnStack::zeros_like),
            bridge: self
                .bridge
                .iter()
                .map(|b| Bridge::zeros(b.w.rows(), b.w.cols()))
                .collect(),
            head: self.head.zeros_like(),
        }
    }

    /// All tensors with stable names, in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("embedding".to_string(), &self.embedding.vectors)];
        let stacks = [
            ("encoder", Some(&self.encoder)),
            ("decoder", Some(&self.decoder)),
            ("context", self.context.as_ref()),
        ];
        for (name, stack) in stacks {
            if let Some(stack) = stack {
                for (l, layer) in stack.layers.iter().enumerate() {
                    for (part, t) in ["w_x", "w_h", "b"].iter().zip(layer.tensors()) {
                        out.push((format!("{name}.{l}.{part}"), t));
                    }
                }
            }
        }
        for (l, b) in self.bridge.iter().enumerate() {
            out.push((format!("bridge.{l}.w"), &b.w));
            out.push((format!("bridge.{l}.b"), &b.b));
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.embedding.vectors];
        for stack in [Some(&mut self.encoder), Some(&mut self.decoder), self.context.as_mut()]
            .into_iter()
            .flatten()
        {
            for layer in &mut stack.layers {
                out.extend(layer.tensors_mut());
            }
        }
        for b in &mut self.bridge {
            out.push(&mut b.w);
            out.push(&mut b.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    /// Tensors the optimizer updates: everything, minus a frozen embedding.
    pub fn trainable(&self) -> Vec<&Matrix<T>> {
        let skip = usize::from(!self.embedding.is_trainable());
        self.named_tensors().into_iter().skip(skip).map(|(_, t)| t).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let skip = usize::from(!self.embedding.is_trainable());
        self.tensors_mut().into_iter().skip(skip).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

/// Per-layer context-network state of a conversation in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState<T> {
    pub layers: Vec<LstmState<T>>,
    /// Sentences observed so far.
    pub observed: usize,
}

impl<T: Scalar> ContextState<T> {
    /// Top-layer hidden state: the conversation's context vector.
    pub fn vector(&self) -> &[T] {
        &self.layers.last().expect("context has at least one layer").h
    }
}

/// Encoder-Decoder or HRED dialogue model with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams<T>,
}

impl<T: Scalar> DialogueModel<T> {
    /// Every weight and bias zero, including the embedding table.
    pub fn zeros(config: ModelConfig, vocab: Vocabulary) -> Result<Self> {
        Self::check_config(&config, &vocab)?;
        Ok(Self {
            params: ModelParams::zeros(&config),
            config,
            vocab,
        })
    }

    /// Randomly initialized model.
    ///
    /// Weights are Glorot-uniform, the forget-gate bias is 1, bridges start at
    /// the identity. `embedding` replaces the random table when given; its mode
    /// is forced to the configured one.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embedding: Option<EmbeddingMatrix<T>>,
        seed: u64,
    ) -> Result<Self> {
        Self::check_config(&config, &vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let random_table = Matrix::uniform(config.vocab_size, config.embed_dim, 0.1, &mut rng);
        let vectors = match embedding {
            Some(e) => {
                if e.vectors.shape() != (config.vocab_size, config.embed_dim) {
                    return Err(Error::dim(format!(
                        "embedding table {:?} does not match vocabulary {} x dimension {}",
                        e.vectors.shape(),
                        config.vocab_size,
                        config.embed_dim
                    )));
                }
                e.vectors
            }
            None => random_table,
        };
        let encoder = RnnStack::init(config.embed_dim, h, config.depth, &mut rng);
        let decoder = RnnStack::init(config.embed_dim, h, config.depth, &mut rng);
        let (context, bridge) = match config.arch {
            Architecture::Hred => (
                Some(RnnStack::init(h, h, config.depth, &mut rng)),
                (0..config.depth).map(|_| Bridge::identity(h)).collect(),
            ),
            Architecture::EncDec => (None, Vec::new()),
        };
        let head = OutputHead::init(config.head, config.head_dim(), h, &mut rng);
        Ok(Self {
            params: ModelParams {
                embedding: EmbeddingMatrix::new(vectors, config.embedding_mode),
                encoder,
                decoder,
                context,
                bridge,
                head,
            },
            config,
            vocab,
        })
    }

    fn check_config(config: &ModelConfig, vocab: &Vocabulary) -> Result<()> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "config declares {} tokens but the vocabulary has {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        Ok(())
    }

    /// Checks that every tensor agrees with the config.
    pub fn validate(&self) -> Result<()> {
        Self::check_config(&self.config, &self.vocab)?;
        let expected = ModelParams::<T>::zeros(&self.config);
        let want = expected.named_tensors();
        let have = self.params.named_tensors();
        if want.len() != have.len() {
            return Err(Error::Consistency(format!(
                "expected {} tensors, found {}",
                want.len(),
                have.len()
            )));
        }
        for ((wn, wt), (hn, ht)) in want.iter().zip(&have) {
            if wn != hn || wt.shape() != ht.shape() {
                return Err(Error::Consistency(format!(
                    "tensor {hn} {:?} where {wn} {:?} was expected",
                    ht.shape(),
                    wt.shape()
                )));
            }
        }
        if self.params.head.kind != self.config.head || self.params.embedding.mode != self.config.embedding_mode {
            return Err(Error::Consistency("head or embedding mode disagrees with config".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Architecture {
        self.config.arch
    }

    pub fn embedding_mode(&self) -> EmbeddingMode {
        self.config.embedding_mode
    }

    fn require(&self, arch: Architecture) -> Result<()> {
        if self.config.arch != arch {
            return Err(Error::Architecture(format!(
                "operation needs a {arch} model, this one is {}",
                self.config.arch
            )));
        }
        Ok(())
    }

    fn decoder_max_len(max_len: Option<usize>) -> usize {
        max_len.unwrap_or(DEFAULT_MAX_LEN)
    }

    /// Encodes `input` from a zero state and decodes a reply from the
    /// encoder's final per-layer states.
    pub fn encdec_forward(
        &self,
        input: &[usize],
        mode: DecodeMode,
        max_len: Option<usize>,
        seed: u64,
    ) -> Result<Vec<usize>> {
        self.require(Architecture::EncDec)?;
        let p = &self.params;
        let (state, _) = encode_sequence(input, &p.embedding, &p.encoder, &p.encoder.zero_state())?;
        generate(
            &state,
            &p.embedding,
            &p.decoder,
            &p.head,
            Self::decoder_max_len(max_len),
            mode,
            seed,
        )
    }

    /// Fresh per-layer context state for a new conversation.
    pub fn new_context(&self) -> Result<ContextState<T>> {
        self.require(Architecture::Hred)?;
        let ctx = self.params.context.as_ref().expect("HRED has a context stack");
        Ok(ContextState {
            layers: ctx.zero_state(),
            observed: 0,
        })
    }

    /// Encodes one sentence and advances the context network by one step.
    pub fn hred_observe(&self, sentence: &[usize], context: &ContextState<T>) -> Result<ContextState<T>> {
        self.require(Architecture::Hred)?;
        let p = &self.params;
        let ctx = p.context.as_ref().expect("HRED has a context stack");
        let (enc, _) = encode_sequence(sentence, &p.embedding, &p.encoder, &p.encoder.zero_state())?;
        let sentence_vec = &enc.last().expect("non-empty stack").h;
        let (layers, _) = ctx.step(sentence_vec, &context.layers)?;
        Ok(ContextState {
            layers,
            observed: context.observed + 1,
        })
    }

    /// Decoder initial state derived from a context vector through the bridges.
    pub fn decoder_init(&self, context_vector: &[T]) -> Result<Vec<LstmState<T>>> {
        self.params
            .bridge
            .iter()
            .map(|b| {
                let h = b.apply(context_vector)?;
                let c = vec![T::zero(); h.len()];
                Ok(LstmState { h, c })
            })
            .collect()
    }

    /// Generates a reply conditioned on the whole conversation so far.
    pub fn hred_respond(
        &self,
        context: &ContextState<T>,
        mode: DecodeMode,
        max_len: Option<usize>,
        seed: u64,
    ) -> Result<Vec<usize>> {
        self.require(Architecture::Hred)?;
        if context.observed == 0 {
            return Err(Error::Protocol(
                "the context has not observed any sentence yet".into(),
            ));
        }
        let init = self.decoder_init(context.vector())?;
        let p = &self.params;
        generate(
            &init,
            &p.embedding,
            &p.decoder,
            &p.head,
            Self::decoder_max_len(max_len),
            mode,
            seed,
        )
    }

    /// Context state after observing every sentence of `turns` in order.
    pub fn observe_all(&self, turns: &[Vec<usize>]) -> Result<ContextState<T>> {
        let mut ctx = self.new_context()?;
        for t in turns {
            ctx = self.hred_observe(t, &ctx)?;
        }
        Ok(ctx)
    }

    /// Greedy reply to the last sentence of `history` (ENCDEC) or to the whole
    /// history (HRED).
    pub fn respond_to_history(&self, history: &[Vec<usize>], mode: DecodeMode, seed: u64) -> Result<Vec<usize>> {
        match self.config.arch {
            Architecture::EncDec => {
                let last = history
                    .last()
                    .ok_or_else(|| Error::Protocol("empty history".into()))?;
                self.encdec_forward(last, mode, None, seed)
            }
            Architecture::Hred => {
                let ctx = self.observe_all(history)?;
                self.hred_respond(&ctx, mode, None, seed)
            }
        }
    }
}
