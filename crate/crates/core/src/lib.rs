//! Similarity-based clustered training over feature embeddings.
//!
//! A labeled dataset is summarized by one feature centroid per class. The
//! pairwise cosine distances between those centroids form a similarity
//! matrix, which Ward-linkage agglomerative clustering cuts into `k`
//! sub-dataset clusters of mutually similar classes. Each cluster gets its
//! own classifier head; at inference a query vector is routed to the cluster
//! whose class centroids it resembles most and only that head is evaluated.
//!
//! Modules follow the pipeline order: [`store`] → [`similarity`] →
//! [`clustering`] → [`heads`] / [`routing`] → [`eval`], with [`synth`]
//! generating stores of known structure for testing.

pub mod clustering;
pub mod error;
pub mod eval;
pub mod heads;
pub mod routing;
pub mod similarity;
pub mod store;
pub mod synth;

pub use clustering::{assign_new_class, cluster_centroid_sets, ward_cluster, Dendrogram, Merge};
pub use error::{Error, FvecError, Result};
pub use eval::{
    evaluate, extend_and_retrain, run_experiment, split_train_test, ClusteredPipeline, EvalReport,
    ExperimentConfig, LabeledVector,
};
pub use heads::{
    linear_predict, nc_predict, train_linear_head, ClassifierHead, Head, HeadKind, LinearHead,
    NearestCentroidHead, TrainConfig,
};
pub use routing::{predict_class, select_cluster, AggregateMode, RoutingDecision};
pub use similarity::{
    build_similarity_matrix, compute_centroid, compute_inertia, cosine_distance, cosine_similarity,
    CentroidSet, SimilarityMatrix,
};
pub use store::{
    load_fvec, load_split, load_store, save_fvec, save_split, save_store, ClassEmbeddings,
    ClusterSplit, DatasetStore,
};
pub use synth::{generate, measure_separation, SynthSpec};
