//! Teacher-forced loss and exact backpropagation through time for both
//! architectures.

use crate::embeddings::{nearest_word, EOS};
use crate::error::{Error, Result};
use crate::models::batch::Batch;
use crate::models::config::Architecture;
use crate::models::model::{DialogueModel, ModelParams};
use crate::numerics::{cosine_with_grad, cross_entropy, softmax};
use crate::recurrent::{encode_sequence, HeadKind, LstmState, StackCache, StateGrad};
use crate::scalar::Scalar;

/// Which masked targets contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScope {
    All,
    /// Targets of sentence `s` only.
    Sentence(usize),
    /// A single target position.
    Token { sentence: usize, position: usize },
}

impl LossScope {
    fn admits(&self, s: usize, l: usize) -> bool {
        match *self {
            LossScope::All => true,
            LossScope::Sentence(x) => s == x,
            LossScope::Token { sentence, position } => s == sentence && l == position,
        }
    }
}

/// Loss statistics of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport<T> {
    /// `total / targets`, or 0 when there are no targets.
    pub loss: T,
    /// Unnormalized sum of per-target losses.
    pub total: T,
    pub targets: usize,
    /// Targets the model's greedy choice predicts correctly.
    pub correct: usize,
}

impl<T: Scalar> LossReport<T> {
    fn empty() -> Self {
        Self {
            loss: T::zero(),
            total: T::zero(),
            targets: 0,
            correct: 0,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.targets == 0 {
            0.0
        } else {
            self.correct as f64 / self.targets as f64
        }
    }
}

/// Mean masked loss of `batch` and its gradient with respect to every parameter.
///
/// The gradient of a frozen embedding is left at zero.
pub fn compute_loss<T: Scalar>(
    batch: &Batch,
    model: &DialogueModel<T>,
    scope: LossScope,
) -> Result<(LossReport<T>, ModelParams<T>)> {
    let mut grads = model.params.zeros_like();
    let report = run(batch, model, scope, Some(&mut grads))?;
    Ok((report, grads))
}

/// Forward-only version of [`compute_loss`].
pub fn evaluate<T: Scalar>(batch: &Batch, model: &DialogueModel<T>) -> Result<LossReport<T>> {
    run(batch, model, LossScope::All, None)
}

struct DecodeTrace<T> {
    inputs: Vec<usize>,
    caches: Vec<StackCache<T>>,
    /// Loss gradient on the decoder's top-layer `h`, per step.
    d_top: Vec<Vec<T>>,
}

fn run<T: Scalar>(
    batch: &Batch,
    model: &DialogueModel<T>,
    scope: LossScope,
    mut grads: Option<&mut ModelParams<T>>,
) -> Result<LossReport<T>> {
    batch.validate()?;
    let active = |b: usize, s: usize, l: usize| batch.mask[b][s][l] == 1 && scope.admits(s, l);
    let mut count = 0usize;
    for b in 0..batch.size() {
        for s in 0..batch.sentences() {
            count += (0..batch.ids[b][s].len()).filter(|&l| active(b, s, l)).count();
        }
    }
    let mut report = LossReport::empty();
    if count == 0 {
        return Ok(report);
    }
    let scale = T::one() / T::of(count as f64);
    for b in 0..batch.size() {
        let targets: Vec<bool> = (0..batch.sentences())
            .map(|s| (0..batch.ids[b][s].len()).any(|l| active(b, s, l)))
            .collect();
        let Some(last) = targets.iter().rposition(|&t| t) else {
            continue;
        };
        let grads = grads.as_deref_mut();
        match model.config.arch {
            Architecture::EncDec => {
                encdec_conversation(batch, b, last, &targets, &active, model, scale, grads, &mut report)?
            }
            Architecture::Hred => {
                hred_conversation(batch, b, last, &targets, &active, model, scale, grads, &mut report)?
            }
        }
    }
    report.targets = count;
    report.loss = report.total * scale;
    if !report.total.is_finite() {
        return Err(Error::Numerical("loss is not finite".into()));
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn encdec_conversation<T: Scalar>(
    batch: &Batch,
    b: usize,
    last: usize,
    targets: &[bool],
    active: &dyn Fn(usize, usize, usize) -> bool,
    model: &DialogueModel<T>,
    scale: T,
    mut grads: Option<&mut ModelParams<T>>,
    report: &mut LossReport<T>,
) -> Result<()> {
    let p = &model.params;
    for s in 1..=last {
        if !targets[s] {
            continue;
        }
        let source = batch.sentence(b, s - 1);
        let (state, enc_caches) = encode_sequence(source, &p.embedding, &p.encoder, &p.encoder.zero_state())?;
        let trace = decode_forward(
            model,
            &state,
            batch.sentence(b, s),
            &|l| active(b, s, l),
            scale,
            grads.as_deref_mut(),
            report,
        )?;
        if let Some(g) = grads.as_deref_mut() {
            let d_init = decode_backward(model, &trace, g)?;
            encode_backward(model, source, &enc_caches, d_init, g)?;
        }
    }
    Ok(())
}

struct TurnTrace<T> {
    enc_caches: Vec<StackCache<T>>,
    ctx_caches: StackCache<T>,
    ctx_top: Vec<T>,
    decode: Option<DecodeTrace<T>>,
}

#[allow(clippy::too_many_arguments)]
fn hred_conversation<T: Scalar>(
    batch: &Batch,
    b: usize,
    last: usize,
    targets: &[bool],
    active: &dyn Fn(usize, usize, usize) -> bool,
    model: &DialogueModel<T>,
    scale: T,
    mut grads: Option<&mut ModelParams<T>>,
    report: &mut LossReport<T>,
) -> Result<()> {
    let p = &model.params;
    let ctx = p.context.as_ref().expect("HRED has a context stack");
    let mut ctx_state: Vec<LstmState<T>> = ctx.zero_state();
    let mut turns = Vec::with_capacity(last);
    for i in 0..last {
        let sent = batch.sentence(b, i);
        let (enc_state, enc_caches) = encode_sequence(sent, &p.embedding, &p.encoder, &p.encoder.zero_state())?;
        let (next, ctx_caches) = ctx.step(&enc_state.last().expect("depth ≥ 1").h, &ctx_state)?;
        ctx_state = next;
        let ctx_top = ctx_state.last().expect("depth ≥ 1").h.clone();
        let decode = if targets[i + 1] {
            let init = model.decoder_init(&ctx_top)?;
            Some(decode_forward(
                model,
                &init,
                batch.sentence(b, i + 1),
                &|l| active(b, i + 1, l),
                scale,
                grads.as_deref_mut(),
                report,
            )?)
        } else {
            None
        };
        turns.push(TurnTrace {
            enc_caches,
            ctx_caches,
            ctx_top,
            decode,
        });
    }

    let Some(g) = grads else {
        return Ok(());
    };
    let top = ctx.depth() - 1;
    let mut d_ctx = ctx.zero_grads();
    for (i, turn) in turns.iter().enumerate().rev() {
        if let Some(trace) = &turn.decode {
            let d_init = decode_backward(model, trace, g)?;
            for (l, (bridge, d)) in p.bridge.iter().zip(&d_init).enumerate() {
                g.bridge[l].w.add_outer(&d.dh, &turn.ctx_top)?;
                for (gb, &dv) in g.bridge[l].b.as_mut_slice().iter_mut().zip(&d.dh) {
                    *gb += dv;
                }
                bridge.w.matvec_t_acc(&d.dh, &mut d_ctx[top].dh)?;
            }
        }
        let ctx_grads = g.context.as_mut().expect("HRED has context gradients");
        let (dx, d_prev) = ctx.step_backward(d_ctx, &turn.ctx_caches, ctx_grads)?;
        d_ctx = d_prev;
        let mut d_enc = p.encoder.zero_grads();
        d_enc[p.encoder.depth() - 1].dh = dx;
        encode_backward(model, batch.sentence(b, i), &turn.enc_caches, d_enc, g)?;
    }
    Ok(())
}

/// Teacher-forced decoding of `sentence` from `init`, scoring active positions.
///
/// Head and target-embedding gradients are accumulated immediately; the
/// returned trace carries what the recurrent backward pass needs.
fn decode_forward<T: Scalar>(
    model: &DialogueModel<T>,
    init: &[LstmState<T>],
    sentence: &[usize],
    active: &dyn Fn(usize) -> bool,
    scale: T,
    mut grads: Option<&mut ModelParams<T>>,
    report: &mut LossReport<T>,
) -> Result<DecodeTrace<T>> {
    let p = &model.params;
    let last = (1..sentence.len()).rev().find(|&l| active(l)).unwrap_or(0);
    let mut trace = DecodeTrace {
        inputs: Vec::with_capacity(last),
        caches: Vec::with_capacity(last),
        d_top: Vec::with_capacity(last),
    };
    let mut state = init.to_vec();
    for t in 0..last {
        let input = sentence[t];
        let (next, caches) = p.decoder.step(p.embedding.row(input), &state)?;
        let h_top = &next.last().expect("depth ≥ 1").h;
        let mut d_top = vec![T::zero(); h_top.len()];
        if active(t + 1) {
            let target = sentence[t + 1];
            let raw = p.head.project(h_top)?;
            let (loss, d_raw, d_target, correct) = score(model, &raw, target, scale)?;
            report.total += loss;
            report.correct += usize::from(correct);
            if let Some(g) = grads.as_deref_mut() {
                g.head.w.add_outer(&d_raw, h_top)?;
                for (gb, &dv) in g.head.b.as_mut_slice().iter_mut().zip(&d_raw) {
                    *gb += dv;
                }
                p.head.w.matvec_t_acc(&d_raw, &mut d_top)?;
                if let Some(de) = d_target {
                    if g.embedding.is_trainable() {
                        g.embedding.vectors.add_to_row(target, &de);
                    }
                }
            }
        }
        trace.inputs.push(input);
        trace.caches.push(caches);
        trace.d_top.push(d_top);
        state = next;
    }
    Ok(trace)
}

/// Loss of one target, the scaled gradient on the head output, the scaled
/// gradient on the target embedding (cosine head), and whether the greedy
/// choice is correct.
#[allow(clippy::type_complexity)]
fn score<T: Scalar>(
    model: &DialogueModel<T>,
    raw: &[T],
    target: usize,
    scale: T,
) -> Result<(T, Vec<T>, Option<Vec<T>>, bool)> {
    match model.config.head {
        HeadKind::Softmax => {
            let probs = softmax(raw)?;
            let loss = cross_entropy(&probs, target)?;
            let predicted = probs
                .iter()
                .enumerate()
                .skip(crate::embeddings::BOS + 1)
                .fold((EOS, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            let mut d = probs;
            d[target] -= T::one();
            d.iter_mut().for_each(|x| *x *= scale);
            Ok((loss, d, None, predicted == target))
        }
        HeadKind::Cosine => {
            let emb = &model.params.embedding;
            let predicted = match nearest_word(raw, emb, true) {
                Ok(id) => id,
                Err(Error::DegenerateInput(_)) => EOS,
                Err(e) => return Err(e),
            };
            match cosine_with_grad(raw, emb.row(target)) {
                Some((c, ga, gb)) => {
                    let d_raw = ga.into_iter().map(|x| -x * scale).collect();
                    let d_emb = gb.into_iter().map(|x| -x * scale).collect();
                    Ok((T::one() - c, d_raw, Some(d_emb), predicted == target))
                }
                None => Ok((T::one(), vec![T::zero(); raw.len()], None, predicted == target)),
            }
        }
    }
}

fn decode_backward<T: Scalar>(
    model: &DialogueModel<T>,
    trace: &DecodeTrace<T>,
    g: &mut ModelParams<T>,
) -> Result<Vec<StateGrad<T>>> {
    let dec = &model.params.decoder;
    let top = dec.depth() - 1;
    let mut d_state = dec.zero_grads();
    for t in (0..trace.caches.len()).rev() {
        for (a, &b) in d_state[top].dh.iter_mut().zip(&trace.d_top[t]) {
            *a += b;
        }
        let (dx, d_prev) = dec.step_backward(d_state, &trace.caches[t], &mut g.decoder)?;
        if g.embedding.is_trainable() {
            g.embedding.vectors.add_to_row(trace.inputs[t], &dx);
        }
        d_state = d_prev;
    }
    Ok(d_state)
}

fn encode_backward<T: Scalar>(
    model: &DialogueModel<T>,
    ids: &[usize],
    caches: &[StackCache<T>],
    d_final: Vec<StateGrad<T>>,
    g: &mut ModelParams<T>,
) -> Result<()> {
    let enc = &model.params.encoder;
    let mut d_state = d_final;
    for t in (0..caches.len()).rev() {
        let (dx, d_prev) = enc.step_backward(d_state, &caches[t], &mut g.encoder)?;
        if g.embedding.is_trainable() {
            g.embedding.vectors.add_to_row(ids[t], &dx);
        }
        d_state = d_prev;
    }
    Ok(())
}
