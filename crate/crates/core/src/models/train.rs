use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::batch::Batch;
use crate::models::loss::{compute_loss, evaluate, LossReport, LossScope};
use crate::models::model::DialogueModel;
use crate::numerics::{rmsprop_step, OptimizerConfig, RmsPropState};
use crate::scalar::Scalar;

/// When the optimizer steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateGranularity {
    /// One step per target token, with the gradient of that token's loss.
    PerToken,
    /// One step per sentence index of a batch.
    #[default]
    PerSentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub granularity: UpdateGranularity,
    /// Seeds the per-epoch batch order.
    pub seed: u64,
    /// Stop once the token accuracy measured after an epoch reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            epochs: 10,
            batch_size: Self::DEFAULT_BATCH_SIZE,
            granularity: UpdateGranularity::default(),
            seed: 0,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub const DEFAULT_BATCH_SIZE: usize = 80;

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Masked mean loss over the epoch's targets, each scored just before the
    /// update that uses it.
    pub loss: f64,
    pub token_accuracy: f64,
    pub steps: u64,
    /// Accuracy of the parameters at the end of the epoch; only measured when
    /// early stopping is enabled.
    pub final_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Fresh optimizer accumulators for the model's trainable tensors.
pub fn optimizer_state<T: Scalar>(model: &DialogueModel<T>) -> RmsPropState<T> {
    RmsPropState::new(model.params.trainable())
}

/// Trains `model` in place with teacher forcing and RMSProp.
///
/// On a non-finite loss or parameter the model and optimizer are restored to
/// their state at the start of the failing epoch and a divergence error is
/// returned.
pub fn train<T: Scalar>(
    model: &mut DialogueModel<T>,
    batches: &[Batch],
    cfg: &TrainConfig,
    state: &mut RmsPropState<T>,
) -> Result<TrainLog> {
    cfg.validate()?;
    for b in batches {
        b.validate()?;
        if let Some(&bad) = b.ids.iter().flatten().flatten().find(|&&t| t >= model.config.vocab_size) {
            return Err(Error::Index {
                index: bad,
                len: model.config.vocab_size,
            });
        }
    }
    if state.cache.len() != model.params.trainable().len() {
        return Err(Error::Config("optimizer state does not match the model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        let good_params = model.params.clone();
        let good_state = state.clone();
        order.shuffle(&mut rng);
        let outcome = run_epoch(model, batches, &order, cfg, state).and_then(|(report, steps)| {
            let final_accuracy = match cfg.target_accuracy {
                Some(_) => Some(evaluate_batches(model, batches)?.accuracy()),
                None => None,
            };
            Ok((report, steps, final_accuracy))
        });
        match outcome {
            Ok((report, steps, final_accuracy)) => {
                let m = EpochMetrics {
                    epoch,
                    loss: report.loss.as_f64(),
                    token_accuracy: report.accuracy(),
                    steps,
                    final_accuracy,
                };
                log::debug!("epoch {epoch}: loss {:.6} accuracy {:.4}", m.loss, m.token_accuracy);
                log.epochs.push(m);
                if let (Some(t), Some(a)) = (cfg.target_accuracy, final_accuracy) {
                    if a >= t {
                        break;
                    }
                }
            }
            Err(e) => {
                model.params = good_params;
                *state = good_state;
                let reason = match e {
                    Error::Numerical(msg) => msg,
                    other => return Err(other),
                };
                return Err(Error::Divergence { epoch, reason });
            }
        }
    }
    Ok(log)
}

fn run_epoch<T: Scalar>(
    model: &mut DialogueModel<T>,
    batches: &[Batch],
    order: &[usize],
    cfg: &TrainConfig,
    state: &mut RmsPropState<T>,
) -> Result<(LossReport<T>, u64)> {
    let mut total = T::zero();
    let mut targets = 0;
    let mut correct = 0;
    let mut steps = 0;
    for &bi in order {
        let batch = &batches[bi];
        for scope in scopes(batch, cfg.granularity) {
            let (report, grads) = compute_loss(batch, model, scope)?;
            if report.targets == 0 {
                continue;
            }
            total += report.total;
            targets += report.targets;
            correct += report.correct;
            let g = grads.trainable();
            let mut p = model.params.trainable_mut();
            rmsprop_step(&mut p, &g, state, &cfg.optimizer)?;
            steps += 1;
            if !model.params.is_finite() {
                return Err(Error::Numerical("parameters became non-finite".into()));
            }
        }
    }
    let loss = if targets == 0 {
        T::zero()
    } else {
        total / T::of(targets as f64)
    };
    Ok((
        LossReport {
            loss,
            total,
            targets,
            correct,
        },
        steps,
    ))
}

fn scopes(batch: &Batch, granularity: UpdateGranularity) -> Vec<LossScope> {
    let mut out = Vec::new();
    for s in 1..batch.sentences() {
        let active = |l: usize| batch.mask.iter().any(|conv| conv[s][l] == 1);
        match granularity {
            UpdateGranularity::PerSentence => {
                if (0..batch.sentence_len(s)).any(active) {
                    out.push(LossScope::Sentence(s));
                }
            }
            UpdateGranularity::PerToken => out.extend(
                (1..batch.sentence_len(s))
                    .filter(|&l| active(l))
                    .map(|position| LossScope::Token { sentence: s, position }),
            ),
        }
    }
    out
}

/// Masked mean loss and teacher-forced token accuracy over several batches.
pub fn evaluate_batches<T: Scalar>(model: &DialogueModel<T>, batches: &[Batch]) -> Result<LossReport<T>> {
    let mut total = T::zero();
    let mut targets = 0;
    let mut correct = 0;
    for b in batches {
        let r = evaluate(b, model)?;
        total += r.total;
        targets += r.targets;
        correct += r.correct;
    }
    Ok(LossReport {
        loss: if targets == 0 { T::zero() } else { total / T::of(targets as f64) },
        total,
        targets,
        correct,
    })
}
