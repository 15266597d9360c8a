//! Query routing: pick the sub-dataset cluster for a feature vector, then
//! evaluate only that cluster's head on the same vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::ClassifierHead;
use crate::similarity::{cosine_similarity, norm, CentroidSet};

/// How per-class similarities are combined into one score per cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Mean over the cluster's class centroids.
    #[default]
    Mean,
    /// Plain sum; favors clusters with many classes.
    Sum,
}

impl std::str::FromStr for AggregateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(Error::validation(format!(
                "unknown aggregate mode {other:?} (expected mean or sum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub chosen_cluster: usize,
    /// Aggregated cosine similarity, indexed by cluster id.
    pub scores: Vec<f64>,
    pub aggregate_mode: AggregateMode,
}

/// Scores every cluster by aggregated cosine similarity between the query and
/// the cluster's class centroids, and picks the highest (lowest id on ties).
pub fn select_cluster(
    query: &[f64],
    cluster_centroids: &[CentroidSet],
    mode: AggregateMode,
) -> Result<RoutingDecision> {
    if cluster_centroids.is_empty() {
        return Err(Error::domain("no clusters to route to"));
    }
    if norm(query) == 0.0 {
        return Err(Error::domain("cannot route a zero-norm query"));
    }
    let mut scores = Vec::with_capacity(cluster_centroids.len());
    for (id, set) in cluster_centroids.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::domain(format!("cluster {id} has no centroids")));
        }
        if set.dim() != query.len() {
            return Err(Error::domain(format!(
                "query has dimension {}, cluster {id} uses {}",
                query.len(),
                set.dim()
            )));
        }
        let mut total = 0.0;
        for (_, c) in set.iter() {
            total += cosine_similarity(query, c)?;
        }
        scores.push(match mode {
            AggregateMode::Mean => total / set.len() as f64,
            AggregateMode::Sum => total,
        });
    }
    let mut chosen = 0;
    for (id, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[chosen] {
            chosen = id;
        }
    }
    Ok(RoutingDecision {
        chosen_cluster: chosen,
        scores,
        aggregate_mode: mode,
    })
}

/// Routes the query and returns the chosen head's class. Exactly one head is
/// evaluated, on the query vector as given.
pub fn predict_class<H: ClassifierHead>(
    query: &[f64],
    cluster_centroids: &[CentroidSet],
    heads: &[H],
    mode: AggregateMode,
) -> Result<(String, RoutingDecision)> {
    let decision = select_cluster(query, cluster_centroids, mode)?;
    let head = heads.get(decision.chosen_cluster).ok_or_else(|| {
        Error::validation(format!("no head for cluster {}", decision.chosen_cluster))
    })?;
    let class = head.predict(query)?;
    Ok((class, decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::NearestCentroidHead;

    fn set(entries: &[(&str, &[f64])]) -> CentroidSet {
        let mut s = CentroidSet::new(entries[0].1.len());
        for (n, c) in entries {
            s.insert(*n, c.to_vec()).unwrap();
        }
        s
    }

    fn orthogonal_supers() -> Vec<CentroidSet> {
        vec![
            set(&[("a", &[1.0, 0.1, 0.0, 0.0]), ("b", &[1.0, 0.0, 0.1, 0.0])]),
            set(&[("c", &[0.0, 0.0, 0.1, 1.0]), ("d", &[0.0, 0.1, 0.0, 1.0])]),
        ]
    }

    #[test]
    fn query_at_centroid_goes_home() {
        let sets = orthogonal_supers();
        let d = select_cluster(&[1.0, 0.1, 0.0, 0.0], &sets, AggregateMode::Mean).unwrap();
        assert_eq!(d.chosen_cluster, 0);
        assert!(d.scores[0] > d.scores[1]);
        let d = select_cluster(&[0.0, 0.1, 0.0, 1.0], &sets, AggregateMode::Sum).unwrap();
        assert_eq!(d.chosen_cluster, 1);
    }

    #[test]
    fn mirror_tie_goes_to_cluster_zero() {
        let sets = vec![set(&[("a", &[1.0, 0.0])]), set(&[("b", &[0.0, 1.0])])];
        let d = select_cluster(&[1.0, 1.0], &sets, AggregateMode::Mean).unwrap();
        assert_eq!(d.scores[0], d.scores[1]);
        assert_eq!(d.chosen_cluster, 0);
    }

    #[test]
    fn scaling_by_seven_changes_nothing() {
        let sets = orthogonal_supers();
        let q = [3.0, 1.0, 2.0, 1.0];
        let q7: Vec<f64> = q.iter().map(|v| v * 7.0).collect();
        let a = select_cluster(&q, &sets, AggregateMode::Mean).unwrap();
        let b = select_cluster(&q7, &sets, AggregateMode::Mean).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sum_mode_favors_large_clusters() {
        let sets = vec![
            set(&[("a", &[1.0, 0.0])]),
            set(&[("b", &[0.6, 1.0]), ("c", &[0.5, 1.0]), ("d", &[0.4, 1.0])]),
        ];
        let q = [1.0, 0.3];
        assert_eq!(
            select_cluster(&q, &sets, AggregateMode::Mean)
                .unwrap()
                .chosen_cluster,
            0
        );
        assert_eq!(
            select_cluster(&q, &sets, AggregateMode::Sum)
                .unwrap()
                .chosen_cluster,
            1
        );
    }

    #[test]
    fn errors() {
        let sets = orthogonal_supers();
        assert!(select_cluster(&[0.0; 4], &sets, AggregateMode::Mean).is_err());
        assert!(select_cluster(&[1.0; 3], &sets, AggregateMode::Mean).is_err());
        assert!(select_cluster(&[1.0; 4], &[], AggregateMode::Mean).is_err());
        assert!(select_cluster(&[1.0; 4], &[CentroidSet::new(4)], AggregateMode::Mean).is_err());
        let heads = vec![NearestCentroidHead::new(sets[0].clone()).unwrap()];
        assert!(predict_class(&[0.0, 0.0, 0.0, 1.0], &sets, &heads, AggregateMode::Mean).is_err());
        assert!(predict_class(&[0.0; 4], &sets, &heads, AggregateMode::Mean).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!(
            "mean".parse::<AggregateMode>().unwrap(),
            AggregateMode::Mean
        );
        assert_eq!("sum".parse::<AggregateMode>().unwrap(), AggregateMode::Sum);
        assert!("max".parse::<AggregateMode>().is_err());
    }
}
