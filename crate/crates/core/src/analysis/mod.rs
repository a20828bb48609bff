//! Context-space analysis of HRED models: context vectors, t-SNE maps, topic
//! centroids, trajectories, the probe-sentence distance-reduction experiment
//! and the Wilcoxon signed-rank test.

pub mod context;
pub mod experiment;
pub mod io;
pub mod tsne;
pub mod wilcoxon;

pub use context::{
    euclidean, extract_context_vectors, project_context, topic_centroids, trajectory, Centroid, ContextMap,
    ContextVectorSet, DistanceSpace, DEFAULT_NEIGHBOURS,
};
pub use experiment::{
    conversation_reductions, distance_reduction_experiment, pairwise_p_values, DistanceReductionReport,
    ExperimentConfig, DEFAULT_SAMPLE,
};
pub use tsne::{joint_probabilities, silhouette_score, tsne, TsneConfig, TsneResult};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult};

use crate::corpus::TokenizedConversation;
use crate::error::Result;
use crate::models::DialogueModel;
use crate::scalar::Scalar;

/// Extracts context vectors for `convs`, embeds them with t-SNE and builds the map.
pub fn build_context_map<T: Scalar>(
    model: &DialogueModel<T>,
    convs: &[TokenizedConversation],
    cfg: &TsneConfig,
) -> Result<(ContextMap, TsneResult)> {
    let set = extract_context_vectors(model, convs)?;
    let result = tsne(&set.vectors, cfg)?;
    let map = ContextMap::new(set, result.y.clone())?;
    Ok((map, result))
}
