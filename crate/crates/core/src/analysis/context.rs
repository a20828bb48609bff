use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedConversation;
use crate::error::{Error, Result};
use crate::models::DialogueModel;
use crate::numerics::{cosine_similarity, Matrix};
use crate::scalar::Scalar;

/// Number of reference neighbours used by [`project_context`].
pub const DEFAULT_NEIGHBOURS: usize = 5;
const WEIGHT_FLOOR: f64 = 1e-6;

/// Final context vectors of a set of conversations.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectorSet {
    /// `N × hidden` rows.
    pub vectors: Matrix<f64>,
    pub topics: Vec<String>,
    pub ids: Vec<String>,
}

impl ContextVectorSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Context top-layer `h` after each conversation's last turn.
pub fn extract_context_vectors<T: Scalar>(
    model: &DialogueModel<T>,
    convs: &[TokenizedConversation],
) -> Result<ContextVectorSet> {
    let hidden = model.config.hidden_dim;
    let mut data = Vec::with_capacity(convs.len() * hidden);
    for c in convs {
        let ctx = model.observe_all(&c.turns)?;
        data.extend(ctx.vector().iter().map(|v| v.as_f64()));
    }
    if convs.is_empty() {
        model.new_context()?;
    }
    Ok(ContextVectorSet {
        vectors: Matrix::from_vec(convs.len(), hidden, data)?,
        topics: convs.iter().map(|c| c.topic.clone()).collect(),
        ids: convs.iter().map(|c| c.id.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub topic: String,
    pub point: Vec<f64>,
    pub count: usize,
}

/// Per-topic mean rows of `points`, in label order.
pub fn topic_centroids(points: &Matrix<f64>, labels: &[String]) -> Result<Vec<Centroid>> {
    if labels.len() != points.rows() {
        return Err(Error::dim(format!("{} points, {} labels", points.rows(), labels.len())));
    }
    let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        let e = acc.entry(label).or_insert_with(|| (vec![0.0; points.cols()], 0));
        e.0.iter_mut().zip(points.row(i)).for_each(|(a, &b)| *a += b);
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(topic, (sum, count))| Centroid {
            topic: topic.to_string(),
            point: sum.into_iter().map(|v| v / count as f64).collect(),
            count,
        })
        .collect())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Places `v` in the 2D map as the similarity-weighted mean of the 2D points
/// of its `k` most cosine-similar reference vectors.
///
/// Weights are `max(similarity, 0) + 1e-6`, normalized; similarity ties are
/// broken by reference order. Zero reference rows count as similarity 0.
pub fn project_context(v: &[f64], reference: &Matrix<f64>, points: &Matrix<f64>, k: usize) -> Result<[f64; 2]> {
    let n = reference.rows();
    if n == 0 || k == 0 || k > n {
        return Err(Error::Config(format!("cannot use {k} neighbours of {n} reference points")));
    }
    if points.shape() != (n, 2) {
        return Err(Error::dim(format!("{n} reference vectors but {:?} map points", points.shape())));
    }
    if v.len() != reference.cols() {
        return Err(Error::dim(format!(
            "vector of length {} against references of length {}",
            v.len(),
            reference.cols()
        )));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput("cannot project a zero context vector".into()));
    }
    let mut sims: Vec<(usize, f64)> = (0..n)
        .map(|i| match cosine_similarity(v, reference.row(i)) {
            Ok(s) => Ok((i, s)),
            Err(Error::DegenerateInput(_)) => Ok((i, 0.0)),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = [0.0; 2];
    let mut total = 0.0;
    for &(i, s) in &sims[..k] {
        let w = s.max(0.0) + WEIGHT_FLOOR;
        out[0] += w * points.get(i, 0);
        out[1] += w * points.get(i, 1);
        total += w;
    }
    Ok([out[0] / total, out[1] / total])
}

/// Where distances to topic centroids are measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    /// The t-SNE map, with out-of-sample points placed by [`project_context`].
    #[default]
    Map,
    /// The original context-vector space.
    Original,
}

/// A prepared 2D context map: reference vectors, their map coordinates and the
/// topic centroids in both spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMap {
    pub reference: ContextVectorSet,
    /// `N × 2`.
    pub points: Matrix<f64>,
    pub centroids: Vec<Centroid>,
    pub original_centroids: Vec<Centroid>,
    pub neighbours: usize,
}

impl ContextMap {
    pub fn new(reference: ContextVectorSet, points: Matrix<f64>) -> Result<Self> {
        if points.shape() != (reference.len(), 2) {
            return Err(Error::dim(format!(
                "{} reference vectors but {:?} map points",
                reference.len(),
                points.shape()
            )));
        }
        let centroids = topic_centroids(&points, &reference.topics)?;
        let original_centroids = topic_centroids(&reference.vectors, &reference.topics)?;
        Ok(Self {
            neighbours: DEFAULT_NEIGHBOURS.min(reference.len()),
            reference,
            points,
            centroids,
            original_centroids,
        })
    }

    pub fn topics(&self) -> Vec<String> {
        self.centroids.iter().map(|c| c.topic.clone()).collect()
    }

    pub fn project(&self, v: &[f64]) -> Result<[f64; 2]> {
        project_context(v, &self.reference.vectors, &self.points, self.neighbours)
    }

    /// Distance from a context vector to every topic centroid, in centroid order.
    pub fn distances(&self, v: &[f64], space: DistanceSpace) -> Result<Vec<f64>> {
        match space {
            DistanceSpace::Map => {
                let p = self.project(v)?;
                Ok(self.centroids.iter().map(|c| euclidean(&p, &c.point)).collect())
            }
            DistanceSpace::Original => Ok(self.original_centroids.iter().map(|c| euclidean(v, &c.point)).collect()),
        }
    }

    /// 2D distance from a map point to every centroid.
    pub fn point_distances(&self, p: [f64; 2]) -> Vec<f64> {
        self.centroids.iter().map(|c| euclidean(&p, &c.point)).collect()
    }
}

/// Map position of the context after each turn.
pub fn trajectory<T: Scalar>(model: &DialogueModel<T>, map: &ContextMap, turns: &[Vec<usize>]) -> Result<Vec<[f64; 2]>> {
    let mut ctx = model.new_context()?;
    let mut out = Vec::with_capacity(turns.len());
    for t in turns {
        ctx = model.hred_observe(t, &ctx)?;
        let v: Vec<f64> = ctx.vector().iter().map(|x| x.as_f64()).collect();
        out.push(map.project(&v)?);
    }
    Ok(out)
}
