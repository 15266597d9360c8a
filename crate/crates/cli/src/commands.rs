use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use simclust_core::eval::train_monolithic;
use simclust_core::similarity::similarity_matrix;
use simclust_core::store::ClusterSplit;
use simclust_core::synth::save_ground_truth;
use simclust_core::*;

use crate::config::Settings;
use crate::Command;

/// Pipeline stage that produces an artifact.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Synth,
    Simmat,
    Split,
    Train,
    User,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Synth => "`simclust synth` (or an embedding exporter)",
            Stage::Simmat => "`simclust simmat`",
            Stage::Split => "`simclust split`",
            Stage::Train => "`simclust train --all`",
            Stage::User => "the caller",
        })
    }
}

#[derive(Debug)]
pub struct MissingArtifact {
    what: String,
    path: PathBuf,
    stage: Stage,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing {} {}: it is produced by {}",
            self.what,
            self.path.display(),
            self.stage
        )
    }
}

impl std::error::Error for MissingArtifact {}

pub fn require(path: &Path, what: &str, stage: Stage) -> anyhow::Result<()> {
    if path.exists() {
        return Ok(());
    }
    Err(MissingArtifact {
        what: what.to_string(),
        path: path.to_path_buf(),
        stage,
    }
    .into())
}

/// 3 for filesystem failures and missing artifacts, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<MissingArtifact>() || cause.is::<std::io::Error>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_io() { 3 } else { 2 };
        }
    }
    2
}

fn head_file(dir: &Path, cluster: usize) -> PathBuf {
    dir.join(format!("cluster_{cluster}.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    create_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

fn read_store(path: &Path) -> anyhow::Result<DatasetStore> {
    require(path, "store manifest", Stage::Synth)?;
    Ok(load_store(path)?)
}

fn read_split(path: &Path) -> anyhow::Result<ClusterSplit> {
    require(path, "cluster split", Stage::Split)?;
    Ok(load_split(path)?)
}

fn read_vectors(path: &Path, what: &str, stage: Stage) -> anyhow::Result<Vec<Vec<f64>>> {
    require(path, what, stage)?;
    let (_, rows) = load_fvec(path)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect())
}

/// Centroid FVEC rows labeled in split order, grouped by cluster.
fn read_cluster_centroids(
    centroids: &Path,
    split: &ClusterSplit,
) -> anyhow::Result<Vec<CentroidSet>> {
    let rows = read_vectors(centroids, "centroid file", Stage::Simmat)?;
    if rows.len() != split.assignments.len() {
        bail!(Error::Validation(format!(
            "{} holds {} centroids but the split names {} classes",
            centroids.display(),
            rows.len(),
            split.assignments.len()
        )));
    }
    let mut set = CentroidSet::new(rows.first().map_or(0, Vec::len));
    for (name, row) in split.assignments.keys().zip(rows) {
        set.insert(name.clone(), row)?;
    }
    Ok(cluster_centroid_sets(split, &set)?)
}

fn read_heads(dir: &Path, k: usize) -> anyhow::Result<Vec<Head>> {
    (0..k)
        .map(|c| {
            let path = head_file(dir, c);
            require(&path, &format!("head of cluster {c}"), Stage::Train)?;
            Ok(Head::load(&path)?)
        })
        .collect()
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

pub fn run(command: Command, settings: &Settings) -> anyhow::Result<()> {
    match command {
        Command::Simmat {
            store,
            out,
            centroids,
        } => simmat(&store, &out, &centroids),
        Command::Split { simmat, k, out } => split(&simmat, k as usize, &out),
        Command::Train {
            store,
            split,
            out_dir,
            target,
        } => {
            let store = read_store(&store)?;
            let split = read_split(&split)?;
            split.validate_covers(&store.class_names())?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            if target.monolithic {
                let head = train_monolithic(&store, settings.head_kind, &settings.train)?;
                head.save(out_dir.join("monolithic.json"))?;
                log::info!(
                    "trained monolithic {:?} head over {} classes",
                    settings.head_kind,
                    store.num_classes()
                );
                return Ok(());
            }
            let clusters: Vec<usize> = match target.cluster {
                Some(c) if c >= split.k => bail!(Error::Validation(format!(
                    "cluster {c} does not exist; the split has {} clusters",
                    split.k
                ))),
                Some(c) => vec![c],
                None => (0..split.k).collect(),
            };
            for c in clusters {
                let classes: Vec<ClassEmbeddings> = split
                    .members(c)
                    .into_iter()
                    .filter_map(|n| store.class(n).cloned())
                    .collect();
                Head::train(settings.head_kind, &classes, &settings.train)?
                    .save(head_file(&out_dir, c))?;
                log::info!("trained head of cluster {c} over {} classes", classes.len());
            }
            Ok(())
        }
        Command::Route {
            query,
            centroids,
            split,
            out,
        } => {
            let split = read_split(&split)?;
            let sets = read_cluster_centroids(&centroids, &split)?;
            let decisions = read_vectors(&query, "query file", Stage::User)?
                .iter()
                .map(|q| select_cluster(q, &sets, settings.mode))
                .collect::<Result<Vec<_>>>()?;
            write_json(&out, &decisions)
        }
        Command::Predict {
            query,
            centroids,
            split,
            heads,
            out,
        } => {
            let split = read_split(&split)?;
            let sets = read_cluster_centroids(&centroids, &split)?;
            let heads = read_heads(&heads, split.k)?;
            #[derive(Serialize)]
            struct Prediction {
                class: String,
                cluster: usize,
            }
            let mut predictions = Vec::new();
            for q in read_vectors(&query, "query file", Stage::User)? {
                let (class, d) = predict_class(&q, &sets, &heads, settings.mode)?;
                println!("{class}");
                predictions.push(Prediction {
                    class,
                    cluster: d.chosen_cluster,
                });
            }
            match out {
                Some(path) => write_json(&path, &predictions),
                None => Ok(()),
            }
        }
        Command::Eval {
            store,
            split,
            k,
            test_fraction,
            seed,
            out,
        } => {
            let store = read_store(&store)?;
            let report = match split {
                Some(path) => {
                    let split = read_split(&path)?;
                    if let Some(k) = k.filter(|&k| k as usize != split.k) {
                        bail!(Error::Validation(format!(
                            "-k {k} disagrees with split k={}",
                            split.k
                        )));
                    }
                    split.validate_covers(&store.class_names())?;
                    let (train, test) = split_train_test(&store, test_fraction, seed)?;
                    let pipeline = ClusteredPipeline::from_split(
                        &train,
                        split,
                        settings.head_kind,
                        &settings.train,
                        settings.mode,
                    )?;
                    let mono = train_monolithic(&train, settings.head_kind, &settings.train)?;
                    evaluate(&pipeline, &mono, &test)?
                }
                None => {
                    let Some(k) = k else {
                        bail!(Error::Validation("eval needs either --split or -k".into()));
                    };
                    let cfg = ExperimentConfig {
                        k: k as usize,
                        test_fraction,
                        seed,
                        head_kind: settings.head_kind,
                        mode: settings.mode,
                        train: settings.train,
                    };
                    run_experiment(&store, &cfg)?.report
                }
            };
            log::info!(
                "routing {:.4}, clustered {:.4}, monolithic {:.4} on {} queries",
                report.routing_accuracy,
                report.end_to_end_top1,
                report.monolithic_top1,
                report.n_eval
            );
            write_json(&out, &report)
        }
        Command::Synth { spec, out } => {
            require(&spec, "synth spec", Stage::User)?;
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("synth spec {}: {e}", spec.display())))?;
            let (store, truth) = generate(&spec)?;
            let manifest = save_store(&store, &out)?;
            save_ground_truth(&truth, out.join("ground_truth.json"))?;
            log::info!(
                "wrote {} classes to {}",
                store.num_classes(),
                manifest.display()
            );
            Ok(())
        }
        Command::Extend {
            store,
            split,
            heads,
            new_class,
            name,
            out,
        } => extend(&store, &split, &heads, &new_class, name, &out, settings),
    }
}

fn simmat(store: &Path, out: &Path, centroids_out: &Path) -> anyhow::Result<()> {
    let store = read_store(store)?;
    let (centroids, matrix) = build_similarity_matrix(&store)?;
    create_parent(out)?;
    matrix.save_csv(out)?;
    write_centroids(&centroids, centroids_out)?;
    log::info!("similarity matrix over {} classes", matrix.len());
    Ok(())
}

fn write_centroids(centroids: &CentroidSet, path: &Path) -> anyhow::Result<()> {
    let rows: Vec<Vec<f32>> = centroids
        .iter()
        .map(|(_, c)| c.iter().map(|&v| v as f32).collect())
        .collect();
    create_parent(path)?;
    Ok(save_fvec(&rows, path)?)
}

fn split(simmat: &Path, k: usize, out: &Path) -> anyhow::Result<()> {
    require(simmat, "similarity matrix", Stage::Simmat)?;
    let matrix = SimilarityMatrix::load_csv(simmat)?;
    let (split, _) = ward_cluster(&matrix, k)?;
    log::info!("cluster sizes {:?}", split.sizes());
    create_parent(out)?;
    Ok(save_split(&split, out)?)
}

fn extend(
    store_path: &Path,
    split_path: &Path,
    heads_dir: &Path,
    new_class: &Path,
    name: Option<String>,
    out: &Path,
    settings: &Settings,
) -> anyhow::Result<()> {
    let store = read_store(store_path)?;
    let split = read_split(split_path)?;
    split.validate_covers(&store.class_names())?;
    let heads = read_heads(heads_dir, split.k)?;
    require(new_class, "new class vectors", Stage::User)?;
    let name = match name {
        Some(n) => n,
        None => new_class
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .context("cannot derive a class name from the file name; pass --name")?,
    };
    let (_, rows) = load_fvec(new_class)?;
    let class = ClassEmbeddings::from_rows(name, &rows)?;

    let store_dir = store_path.parent().unwrap_or(Path::new("."));
    if same_dir(out, heads_dir) || same_dir(out, store_dir) {
        bail!(Error::Validation(format!(
            "output directory {} would overwrite the inputs",
            out.display()
        )));
    }

    let centroids = CentroidSet::from_store(&store);
    let cluster_centroids = cluster_centroid_sets(&split, &centroids)?;
    let cluster_train_vectors = (0..split.k)
        .map(|c| {
            split
                .members(c)
                .iter()
                .filter_map(|n| store.class(n))
                .map(ClassEmbeddings::len)
                .sum()
        })
        .collect();
    let pipeline = ClusteredPipeline {
        split,
        centroids,
        cluster_centroids,
        heads,
        mode: settings.mode,
        cluster_train_vectors,
    };
    pipeline.validate()?;
    let ext = extend_and_retrain(&class, &store, &pipeline, &settings.train)?;
    let target = ext.report.target_cluster;

    let new_heads = out.join("heads");
    std::fs::create_dir_all(&new_heads)
        .with_context(|| format!("creating {}", new_heads.display()))?;
    for c in 0..ext.pipeline.split.k {
        let dest = head_file(&new_heads, c);
        if c == target {
            ext.pipeline.heads[c].save(&dest)?;
        } else {
            std::fs::copy(head_file(heads_dir, c), &dest)
                .with_context(|| format!("copying head of cluster {c}"))?;
        }
    }
    save_store(&ext.store, out.join("store"))?;
    save_split(&ext.pipeline.split, out.join("split.json"))?;
    let matrix = similarity_matrix(&ext.pipeline.centroids)?;
    matrix.save_csv(out.join("simmat.csv"))?;
    write_centroids(&ext.pipeline.centroids, &out.join("centroids.fvec"))?;
    write_json(&out.join("extension_report.json"), &ext.report)?;
    log::info!(
        "class {} joined cluster {target}; retrained {} of {} classes",
        ext.report.new_class,
        ext.report.retrained_classes,
        ext.report.total_classes
    );
    Ok(())
}
