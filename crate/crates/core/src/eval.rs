//! End-to-end measurement of the clustered pipeline against a monolithic
//! head, plus the add-one-class extension workflow.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign_new_class, cluster_centroid_sets, ward_cluster};
use crate::error::{Error, Result};
use crate::heads::{ClassifierHead, Head, HeadKind, TrainConfig};
use crate::routing::{predict_class, select_cluster, AggregateMode, RoutingDecision};
use crate::similarity::{build_similarity_matrix, compute_centroid, CentroidSet};
use crate::store::{ClassEmbeddings, ClusterSplit, DatasetStore};
use crate::synth::{separation_of_centroids, Separation};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub class: String,
    pub vector: Vec<f64>,
}

/// Stratified per-class split. `round(n · test_fraction)` vectors of every
/// class go to the test set; each class must keep at least one vector on
/// both sides.
pub fn split_train_test(
    store: &DatasetStore,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetStore, Vec<LabeledVector>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(store.num_classes());
    let mut test = Vec::new();
    for class in store.classes() {
        let n = class.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        if n_test == 0 || n_test >= n {
            return Err(Error::validation(format!(
                "class {} with {n} vectors is too small to split at fraction {test_fraction}",
                class.name()
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let (test_idx, train_idx) = idx.split_at_mut(n_test);
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        train.push(class.select(train_idx)?);
        test.extend(test_idx.iter().map(|&i| LabeledVector {
            class: class.name().to_string(),
            vector: class.row_f64(i),
        }));
    }
    Ok((
        DatasetStore::new(store.dim(), train, store.source_tag())?,
        test,
    ))
}

/// Everything needed to classify a query with clustered heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredPipeline {
    pub split: ClusterSplit,
    pub centroids: CentroidSet,
    pub cluster_centroids: Vec<CentroidSet>,
    pub heads: Vec<Head>,
    pub mode: AggregateMode,
    /// Training vectors seen by each cluster head.
    pub cluster_train_vectors: Vec<usize>,
}

fn cluster_classes(
    store: &DatasetStore,
    split: &ClusterSplit,
    cluster: usize,
) -> Vec<ClassEmbeddings> {
    split
        .members(cluster)
        .into_iter()
        .filter_map(|n| store.class(n).cloned())
        .collect()
}

/// Trains one head per cluster; clusters are independent and train in
/// parallel.
pub fn train_cluster_heads(
    store: &DatasetStore,
    split: &ClusterSplit,
    kind: HeadKind,
    cfg: &TrainConfig,
) -> Result<Vec<Head>> {
    split.validate()?;
    split.validate_covers(&store.class_names())?;
    (0..split.k)
        .into_par_iter()
        .map(|c| Head::train(kind, &cluster_classes(store, split, c), cfg))
        .collect()
}

/// Single head over every class in store order.
pub fn train_monolithic(store: &DatasetStore, kind: HeadKind, cfg: &TrainConfig) -> Result<Head> {
    Head::train(kind, store.classes(), cfg)
}

impl ClusteredPipeline {
    /// Similarity matrix, Ward split into `k` clusters and per-cluster heads.
    pub fn fit(
        store: &DatasetStore,
        k: usize,
        kind: HeadKind,
        cfg: &TrainConfig,
        mode: AggregateMode,
    ) -> Result<Self> {
        let (centroids, matrix) = build_similarity_matrix(store)?;
        let (split, _) = ward_cluster(&matrix, k)?;
        Self::assemble(store, split, centroids, kind, cfg, mode)
    }

    /// Pipeline for a split that was computed elsewhere.
    pub fn from_split(
        store: &DatasetStore,
        split: ClusterSplit,
        kind: HeadKind,
        cfg: &TrainConfig,
        mode: AggregateMode,
    ) -> Result<Self> {
        let centroids = CentroidSet::from_store(store);
        Self::assemble(store, split, centroids, kind, cfg, mode)
    }

    fn assemble(
        store: &DatasetStore,
        split: ClusterSplit,
        centroids: CentroidSet,
        kind: HeadKind,
        cfg: &TrainConfig,
        mode: AggregateMode,
    ) -> Result<Self> {
        let cluster_centroids = cluster_centroid_sets(&split, &centroids)?;
        let heads = train_cluster_heads(store, &split, kind, cfg)?;
        let cluster_train_vectors = (0..split.k)
            .map(|c| {
                cluster_classes(store, &split, c)
                    .iter()
                    .map(ClassEmbeddings::len)
                    .sum()
            })
            .collect();
        Ok(Self {
            split,
            centroids,
            cluster_centroids,
            heads,
            mode,
            cluster_train_vectors,
        })
    }

    /// Checks that there is one head per cluster covering exactly that
    /// cluster's classes.
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.heads.len() != self.split.k || self.cluster_centroids.len() != self.split.k {
            return Err(Error::validation(format!(
                "pipeline has {} heads and {} centroid sets for {} clusters",
                self.heads.len(),
                self.cluster_centroids.len(),
                self.split.k
            )));
        }
        for (c, head) in self.heads.iter().enumerate() {
            let mut expected = self.split.members(c);
            let mut got = head.classes();
            expected.sort_unstable();
            got.sort_unstable();
            if expected != got {
                return Err(Error::validation(format!(
                    "head for cluster {c} does not cover that cluster's classes"
                )));
            }
            if head.dim() != self.centroids.dim() {
                return Err(Error::validation(format!(
                    "head for cluster {c} has dimension {}, expected {}",
                    head.dim(),
                    self.centroids.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn route(&self, query: &[f64]) -> Result<RoutingDecision> {
        select_cluster(query, &self.cluster_centroids, self.mode)
    }

    pub fn predict(&self, query: &[f64]) -> Result<(String, RoutingDecision)> {
        predict_class(query, &self.cluster_centroids, &self.heads, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub routing_accuracy: f64,
    pub end_to_end_top1: f64,
    pub monolithic_top1: f64,
    /// Accuracy of each cluster head on its own classes' test vectors, i.e.
    /// with perfect routing.
    pub per_cluster_top1: BTreeMap<usize, f64>,
    pub n_eval: usize,
    pub separation: Separation,
    pub notes: Vec<String>,
}

struct Outcome {
    home: usize,
    routed: usize,
    end_to_end: bool,
    oracle_routed: bool,
    monolithic: bool,
}

pub fn evaluate(
    pipeline: &ClusteredPipeline,
    monolithic: &Head,
    test_set: &[LabeledVector],
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::validation("empty test set"));
    }
    pipeline.validate()?;
    if monolithic.dim() != pipeline.centroids.dim() {
        return Err(Error::domain(
            "monolithic head dimension does not match pipeline",
        ));
    }
    let outcomes: Vec<Outcome> = test_set
        .par_iter()
        .map(|t| {
            let home = pipeline.split.cluster_of(&t.class).ok_or_else(|| {
                Error::validation(format!("test class {} is not in the split", t.class))
            })?;
            let (pred, decision) = pipeline.predict(&t.vector)?;
            let oracle = pipeline.heads[home].predict(&t.vector)?;
            let mono = monolithic.predict(&t.vector)?;
            Ok(Outcome {
                home,
                routed: decision.chosen_cluster,
                end_to_end: pred == t.class,
                oracle_routed: oracle == t.class,
                monolithic: mono == t.class,
            })
        })
        .collect::<Result<_>>()?;

    let n = outcomes.len() as f64;
    let frac = |f: &dyn Fn(&Outcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    let mut per_cluster = BTreeMap::new();
    for c in 0..pipeline.split.k {
        let mine: Vec<&Outcome> = outcomes.iter().filter(|o| o.home == c).collect();
        if !mine.is_empty() {
            let hits = mine.iter().filter(|o| o.oracle_routed).count();
            per_cluster.insert(c, hits as f64 / mine.len() as f64);
        }
    }

    let total: usize = pipeline.cluster_train_vectors.iter().sum();
    let largest = pipeline
        .cluster_train_vectors
        .iter()
        .copied()
        .max()
        .unwrap_or(0);
    let mut notes = vec![format!(
        "largest cluster head trained on {largest} of {total} vectors ({:.1}% of the monolithic training set)",
        if total > 0 { 100.0 * largest as f64 / total as f64 } else { 0.0 }
    )];
    notes.push(format!(
        "cluster sizes (classes): {:?}; aggregate mode {:?}",
        pipeline.split.sizes(),
        pipeline.mode
    ));

    Ok(EvalReport {
        routing_accuracy: frac(&|o| o.routed == o.home),
        end_to_end_top1: frac(&|o| o.end_to_end),
        monolithic_top1: frac(&|o| o.monolithic),
        per_cluster_top1: per_cluster,
        n_eval: outcomes.len(),
        separation: separation_of_centroids(&pipeline.centroids, &pipeline.split.assignments)?,
        notes,
    })
}

/// Parameters of a full train/evaluate run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub head_kind: HeadKind,
    pub mode: AggregateMode,
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub train_store: DatasetStore,
    pub test_set: Vec<LabeledVector>,
    pub pipeline: ClusteredPipeline,
    pub monolithic: Head,
    pub report: EvalReport,
}

/// Split, cluster the training classes, train clustered and monolithic heads,
/// and evaluate both on the held-out vectors.
pub fn run_experiment(store: &DatasetStore, cfg: &ExperimentConfig) -> Result<Experiment> {
    let (train_store, test_set) = split_train_test(store, cfg.test_fraction, cfg.seed)?;
    let pipeline =
        ClusteredPipeline::fit(&train_store, cfg.k, cfg.head_kind, &cfg.train, cfg.mode)?;
    let monolithic = train_monolithic(&train_store, cfg.head_kind, &cfg.train)?;
    let report = evaluate(&pipeline, &monolithic, &test_set)?;
    Ok(Experiment {
        train_store,
        test_set,
        pipeline,
        monolithic,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub new_class: String,
    pub target_cluster: usize,
    /// Classes the retrained head covers.
    pub retrained_classes: usize,
    pub total_classes: usize,
    pub retrained_vectors: usize,
    pub total_vectors: usize,
}

#[derive(Debug, Clone)]
pub struct Extension {
    pub store: DatasetStore,
    pub pipeline: ClusteredPipeline,
    pub report: ExtensionReport,
}

/// Adds one class: it joins the cluster with the nearest mean centroid
/// distance and only that cluster's head is retrained. The retrained head
/// keeps its kind; a linear head reuses its recorded training config, falling
/// back to `cfg`.
pub fn extend_and_retrain(
    new_class: &ClassEmbeddings,
    store: &DatasetStore,
    pipeline: &ClusteredPipeline,
    cfg: &TrainConfig,
) -> Result<Extension> {
    if store.class(new_class.name()).is_some()
        || pipeline.split.assignments.contains_key(new_class.name())
    {
        return Err(Error::validation(format!(
            "class {} already exists",
            new_class.name()
        )));
    }
    pipeline.validate()?;
    let target = assign_new_class(new_class, &pipeline.split, &pipeline.centroids)?;
    let new_store = store.with_class(new_class.clone())?;

    let mut split = pipeline.split.clone();
    split
        .assignments
        .insert(new_class.name().to_string(), target);
    split.merge_heights = None;

    let mut centroids = pipeline.centroids.clone();
    let new_centroid = compute_centroid(new_class);
    centroids.insert(new_class.name(), new_centroid.clone())?;
    let mut cluster_centroids = pipeline.cluster_centroids.clone();
    cluster_centroids[target].insert(new_class.name(), new_centroid)?;

    let old_head = &pipeline.heads[target];
    let head_cfg = old_head.train_config().unwrap_or(*cfg);
    let data = cluster_classes(&new_store, &split, target);
    let retrained = Head::train(old_head.kind(), &data, &head_cfg)?;
    let retrained_vectors: usize = data.iter().map(ClassEmbeddings::len).sum();

    let mut heads = pipeline.heads.clone();
    heads[target] = retrained;
    let mut cluster_train_vectors = pipeline.cluster_train_vectors.clone();
    cluster_train_vectors[target] = retrained_vectors;

    let report = ExtensionReport {
        new_class: new_class.name().to_string(),
        target_cluster: target,
        retrained_classes: data.len(),
        total_classes: new_store.num_classes(),
        retrained_vectors,
        total_vectors: new_store.classes().iter().map(ClassEmbeddings::len).sum(),
    };
    let pipeline = ClusteredPipeline {
        split,
        centroids,
        cluster_centroids,
        heads,
        mode: pipeline.mode,
        cluster_train_vectors,
    };
    pipeline.validate()?;
    Ok(Extension {
        store: new_store,
        pipeline,
        report,
    })
}
