//! Seeded synthetic embedding stores with a known super-cluster structure.
//!
//! Super-cluster means sit at `super_separation / √2 · e_s`, so every pair is
//! exactly `super_separation` apart. Class means are drawn around their
//! super mean with standard deviation `class_spread`, and vectors around their
//! class mean with `intra_sigma`. Finally a single constant is added to every
//! component so all values are strictly positive, like post-ReLU features.
//! The generator is ChaCha8 seeded from `seed`.

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{cosine_distance, CentroidSet};
use crate::store::{read_json, write_json, ClassEmbeddings, DatasetStore};

/// Class name → group id.
pub type GroundTruth = IndexMap<String, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k_super: usize,
    pub classes_per_super: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub intra_sigma: f64,
    pub class_spread: f64,
    pub super_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_super < 1 || self.classes_per_super < 1 || self.n_per_class < 1 {
            return Err(Error::validation("synth counts must all be at least 1"));
        }
        if self.dim < 2 {
            return Err(Error::validation("synth dim must be at least 2"));
        }
        if self.dim < self.k_super {
            return Err(Error::validation(format!(
                "dim {} cannot hold {} equidistant super-cluster means",
                self.dim, self.k_super
            )));
        }
        for (name, v) in [
            ("intra_sigma", self.intra_sigma),
            ("class_spread", self.class_spread),
            ("super_separation", self.super_separation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn class_name(super_id: usize, class: usize) -> String {
        format!("s{super_id}_c{class}")
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(DatasetStore, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let axis = spec.super_separation / std::f64::consts::SQRT_2;
    let d = spec.dim;

    let mut raw: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for s in 0..spec.k_super {
        for c in 0..spec.classes_per_super {
            let mean: Vec<f64> = (0..d)
                .map(|j| {
                    let base = if j == s { axis } else { 0.0 };
                    base + spec.class_spread * normal()
                })
                .collect();
            let mut data = Vec::with_capacity(spec.n_per_class * d);
            for _ in 0..spec.n_per_class {
                for m in &mean {
                    data.push(m + spec.intra_sigma * normal());
                }
            }
            raw.push((SynthSpec::class_name(s, c), s, data));
        }
    }

    let min = raw
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let shift = if min > 0.0 {
        0.0
    } else {
        spec.intra_sigma - min
    };

    let mut classes = Vec::with_capacity(raw.len());
    let mut truth = GroundTruth::new();
    for (name, s, data) in raw {
        let values: Vec<f32> = data.iter().map(|v| (v + shift) as f32).collect();
        classes.push(ClassEmbeddings::new(name.clone(), d, values)?);
        truth.insert(name, s);
    }
    let tag = format!("synth:seed={}", spec.seed);
    Ok((DatasetStore::new(d, classes, tag)?, truth))
}

/// Largest centroid cosine distance within a group and smallest across
/// groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub intra_max: f64,
    /// Zero when there is only one group.
    pub inter_min: f64,
}

pub fn measure_separation(store: &DatasetStore, ground_truth: &GroundTruth) -> Result<Separation> {
    separation_of_centroids(&CentroidSet::from_store(store), ground_truth)
}

pub fn separation_of_centroids(
    centroids: &CentroidSet,
    ground_truth: &GroundTruth,
) -> Result<Separation> {
    if ground_truth.len() != centroids.len() {
        return Err(Error::validation(format!(
            "ground truth covers {} classes, store has {}",
            ground_truth.len(),
            centroids.len()
        )));
    }
    let entries: Vec<(usize, &[f64])> = centroids
        .iter()
        .map(|(name, c)| {
            ground_truth
                .get(name)
                .map(|&g| (g, c))
                .ok_or_else(|| Error::validation(format!("class {name} missing from ground truth")))
        })
        .collect::<Result<_>>()?;

    let mut intra_max = 0.0f64;
    let mut inter_min: Option<f64> = None;
    for i in 0..entries.len() {
        for j in (i + 1)..entries.len() {
            let dist = cosine_distance(entries[i].1, entries[j].1)?;
            if entries[i].0 == entries[j].0 {
                intra_max = intra_max.max(dist);
            } else {
                inter_min = Some(inter_min.map_or(dist, |m| m.min(dist)));
            }
        }
    }
    Ok(Separation {
        intra_max,
        inter_min: inter_min.unwrap_or(0.0),
    })
}

pub fn save_ground_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    write_json(path, truth)
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    read_json(path)
}
