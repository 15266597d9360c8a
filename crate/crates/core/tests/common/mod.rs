//! Reference implementations used only by tests. None of these call into the
//! code paths they check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simclust_core::{ClassEmbeddings, DatasetStore};

/// Mean via Neumaier-compensated summation, with an independent loop order.
pub fn compensated_mean(class: &ClassEmbeddings) -> Vec<f64> {
    (0..class.dim())
        .map(|j| {
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for i in 0..class.len() {
                let v = f64::from(class.row(i)[j]);
                let t = sum + v;
                if sum.abs() >= v.abs() {
                    comp += (sum - t) + v;
                } else {
                    comp += (v - t) + sum;
                }
                sum = t;
            }
            (sum + comp) / class.len() as f64
        })
        .collect()
}

/// Inertia through the pairwise identity Σ‖x−μ‖² = (1/2n) Σᵢ Σⱼ ‖xᵢ−xⱼ‖².
pub fn pairwise_inertia(class: &ClassEmbeddings) -> f64 {
    let n = class.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += class
                .row(i)
                .iter()
                .zip(class.row(j))
                .map(|(&a, &b)| {
                    let d = f64::from(a) - f64::from(b);
                    d * d
                })
                .sum::<f64>();
        }
    }
    total / (2.0 * n as f64)
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    1.0 - dot / (nu * nv)
}

fn ess(points: &[&[f64]], members: &[usize]) -> f64 {
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for &m in members {
        for (acc, v) in mean.iter_mut().zip(points[m]) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= members.len() as f64);
    members
        .iter()
        .map(|&m| {
            points[m]
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Ward clustering from scratch: at every step recompute the error sum of
/// squares of every candidate union and merge the pair with the smallest
/// increase. Ties within 1e-9 relative go to the smallest (min leaf, min
/// leaf) pair. Returns one label per point, numbered by first appearance.
pub fn naive_ward_labels(points: &[&[f64]], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        clusters.sort_by_key(|c| *c.iter().min().unwrap());
        let mut costs = Vec::new();
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut union = clusters[a].clone();
                union.extend(&clusters[b]);
                let delta =
                    ess(points, &union) - ess(points, &clusters[a]) - ess(points, &clusters[b]);
                costs.push((a, b, delta));
            }
        }
        let min = costs.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        let &(a, b, _) = costs
            .iter()
            .find(|c| c.2 <= min + 1e-9 * min.abs())
            .unwrap();
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for leaf in 0..n {
        if labels[leaf] == usize::MAX {
            let c = clusters.iter().find(|c| c.contains(&leaf)).unwrap();
            for &m in c {
                labels[m] = next;
            }
            next += 1;
        }
    }
    labels
}

/// Same partition regardless of label names.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn log_sum_exp_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Random store of Gaussian vectors, `n_c` classes of 1..=`max_n` rows.
pub fn random_store(rng: &mut ChaCha8Rng, n_c: usize, dim: usize, max_n: usize) -> DatasetStore {
    let classes = (0..n_c)
        .map(|c| {
            let n = rng.random_range(1..=max_n);
            let offset: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let data: Vec<f32> = (0..n * dim)
                .map(|i| offset[i % dim] + rng.random_range(-1.0f32..1.0))
                .collect();
            ClassEmbeddings::new(format!("class{c}"), dim, data).unwrap()
        })
        .collect();
    DatasetStore::new(dim, classes, "random").unwrap()
}

/// Random store whose values are multiples of 1/64 in [-8, 8], so scaling by
/// small integers times powers of two is exact in `f32`.
pub fn quantized_store(rng: &mut ChaCha8Rng, n_c: usize, dim: usize, max_n: usize) -> DatasetStore {
    let classes = (0..n_c)
        .map(|c| {
            let n = rng.random_range(1..=max_n);
            let data: Vec<f32> = (0..n * dim)
                .map(|_| rng.random_range(-512i32..=512) as f32 / 64.0)
                .collect();
            ClassEmbeddings::new(format!("q{c}"), dim, data).unwrap()
        })
        .collect();
    DatasetStore::new(dim, classes, "quantized").unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
