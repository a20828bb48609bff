use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::context::{ContextMap, DistanceSpace};
use crate::analysis::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::corpus::TokenizedConversation;
use crate::error::{Error, Result};
use crate::models::DialogueModel;
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLE: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sample: usize,
    pub seed: u64,
    pub space: DistanceSpace,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sample: DEFAULT_SAMPLE,
            seed: 0,
            space: DistanceSpace::Map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReductionReport {
    pub probe: Vec<usize>,
    pub config: ExperimentConfig,
    /// Sampled conversations, in sampling order.
    pub conversation_ids: Vec<String>,
    pub topics: Vec<String>,
    /// `reductions[t][c]`: distance to topic `t`'s centroid before the probe
    /// minus the distance after it, for sampled conversation `c`.
    pub reductions: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Symmetric matrix of two-sided paired Wilcoxon p-values between topics'
    /// reductions; 1 on the diagonal, `None` where every difference is zero.
    pub p_values: Vec<Vec<Option<f64>>>,
}

impl DistanceReductionReport {
    /// Topic with the largest mean reduction.
    pub fn closest_topic(&self) -> Option<&str> {
        self.means
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.topics[i].as_str())
    }

    pub fn topic_index(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t == topic)
    }
}

/// Per-topic reductions for one conversation.
pub fn conversation_reductions<T: Scalar>(
    model: &DialogueModel<T>,
    map: &ContextMap,
    turns: &[Vec<usize>],
    probe: &[usize],
    space: DistanceSpace,
) -> Result<Vec<f64>> {
    let before = model.observe_all(turns)?;
    let after = model.hred_observe(probe, &before)?;
    let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let d0 = map.distances(&to_f64(before.vector()), space)?;
    let d1 = map.distances(&to_f64(after.vector()), space)?;
    Ok(d0.iter().zip(&d1).map(|(a, b)| a - b).collect())
}

/// Appends `probe` to a seeded random sample of conversations and measures
/// how far each topic centroid comes closer.
pub fn distance_reduction_experiment<T: Scalar>(
    model: &DialogueModel<T>,
    map: &ContextMap,
    convs: &[TokenizedConversation],
    probe: &[usize],
    cfg: &ExperimentConfig,
) -> Result<DistanceReductionReport> {
    if convs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let k = if cfg.sample > convs.len() {
        log::warn!("only {} conversations available, fewer than the {} requested", convs.len(), cfg.sample);
        convs.len()
    } else {
        cfg.sample
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picked = rand::seq::index::sample(&mut rng, convs.len(), k).into_vec();
    log::info!("experiment sample (seed {}): {:?}", cfg.seed, picked);

    let topics = map.topics();
    let mut reductions = vec![Vec::with_capacity(k); topics.len()];
    for &i in &picked {
        let r = conversation_reductions(model, map, &convs[i].turns, probe, cfg.space)?;
        for (t, v) in r.into_iter().enumerate() {
            reductions[t].push(v);
        }
    }
    let means = reductions
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .collect();
    let p_values = pairwise_p_values(&reductions)?;
    Ok(DistanceReductionReport {
        probe: probe.to_vec(),
        config: ExperimentConfig { sample: k, ..*cfg },
        conversation_ids: picked.iter().map(|&i| convs[i].id.clone()).collect(),
        topics,
        reductions,
        means,
        p_values,
    })
}

pub fn pairwise_p_values(samples: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    let n = samples.len();
    let mut out = vec![vec![None; n]; n];
    for a in 0..n {
        out[a][a] = Some(1.0);
        for b in a + 1..n {
            let p = match wilcoxon_signed_rank(&samples[a], &samples[b]) {
                Ok(WilcoxonResult { p_value, .. }) => Some(p_value),
                Err(Error::UndefinedTest(_)) => None,
                Err(e) => return Err(e),
            };
            out[a][b] = p;
            out[b][a] = p;
        }
    }
    Ok(out)
}
