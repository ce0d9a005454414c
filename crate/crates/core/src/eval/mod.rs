//! Frozen-embedding evaluation: retrieval, clustering and hierarchy
//! consistency of distances.

mod clustering;
mod retrieval;
mod violation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use clustering::{
    clustering_report, kmeans, nmi, ClusteringReport, KMeansResult, KMEANS_MAX_ITERS,
    KMEANS_TOLERANCE,
};
pub use retrieval::{map_at_r, rank_gallery, retrieval_report, topk_retrieval, RetrievalReport};
pub use violation::{distance_violation_rate, pair_counts_by_lca, ViolationReport};

/// Report emitted by the command line tools. Only the computed metrics are
/// serialized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_at_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_queries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmi_per_level: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparisons: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_baseline: Option<f64>,
}

impl From<RetrievalReport> for EvalReport {
    fn from(r: RetrievalReport) -> Self {
        Self {
            topk: Some(r.topk),
            map_at_r: r.map_at_r,
            excluded_queries: Some(r.excluded_queries),
            ..Self::default()
        }
    }
}

impl From<ClusteringReport> for EvalReport {
    fn from(r: ClusteringReport) -> Self {
        Self {
            nmi_per_level: Some(r.nmi_per_level),
            ..Self::default()
        }
    }
}

impl From<ViolationReport> for EvalReport {
    fn from(r: ViolationReport) -> Self {
        Self {
            violation_rate: Some(r.violation_rate),
            comparisons: Some(r.comparisons),
            ..Self::default()
        }
    }
}
