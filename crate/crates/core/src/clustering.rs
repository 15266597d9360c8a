//! Ward-linkage agglomerative clustering of classes over the similarity
//! matrix, and placement of new classes into an existing split.
//!
//! Each class is represented by its row of the similarity matrix, treated as
//! a point in `R^n` under the Euclidean metric. Merges follow the
//! Lance–Williams recurrence for Ward linkage on squared distances:
//!
//! ```text
//! d²(A∪B, C) = ((|A|+|C|)·d²(A,C) + (|B|+|C|)·d²(B,C) − |C|·d²(A,B)) / (|A|+|B|+|C|)
//! ```
//!
//! and the reported merge height is `sqrt(d²)`. When several pairs share the
//! minimal cost, the pair with the lexicographically smallest
//! `(min_leaf, max_leaf)` wins, where a cluster's leaf index is the smallest
//! class index it contains.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::similarity::{compute_centroid, cosine_distance, norm, CentroidSet, SimilarityMatrix};
use crate::store::{ClassEmbeddings, ClusterSplit};

/// Costs within this relative distance of the minimum count as tied.
pub const TIE_RELATIVE_TOLERANCE: f64 = 1e-12;

/// One agglomeration step. Leaves are numbered `0..n` in label order; the
/// node created by merge `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Flat cluster label per leaf after applying the first `n − k` merges.
    /// Labels are numbered by first appearance in leaf order.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        let n = self.n_leaves;
        if k == 0 || k > n {
            return Err(Error::validation(format!(
                "cannot cut {n} leaves into {k} clusters"
            )));
        }
        let mut owner: Vec<usize> = (0..2 * n - 1).collect();
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            owner[m.left] = n + s;
            owner[m.right] = n + s;
        }
        let root = |mut node: usize| {
            while owner[node] != node {
                node = owner[node];
            }
            node
        };
        let mut ids: IndexMap<usize, usize> = IndexMap::new();
        let labels = (0..n)
            .map(|leaf| {
                let r = root(leaf);
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect();
        Ok(labels)
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Ward agglomeration of arbitrary points. Returns the full dendrogram
/// (`n − 1` merges).
pub fn ward_linkage<P: AsRef<[f64]>>(points: &[P]) -> Dendrogram {
    let n = points.len();
    // slot i always holds the cluster whose smallest leaf is i
    let mut d2 = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_euclidean(points[i].as_ref(), points[j].as_ref());
            d2[i * n + j] = d;
            d2[j * n + i] = d;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for step in 0..n.saturating_sub(1) {
        let live: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        let mut min_cost = f64::INFINITY;
        for (x, &a) in live.iter().enumerate() {
            for &b in &live[x + 1..] {
                min_cost = min_cost.min(d2[a * n + b]);
            }
        }
        let limit = min_cost + TIE_RELATIVE_TOLERANCE * min_cost.abs();
        let (a, b) = live
            .iter()
            .enumerate()
            .flat_map(|(x, &a)| live[x + 1..].iter().map(move |&b| (a, b)))
            .find(|&(a, b)| d2[a * n + b] <= limit)
            .expect("at least two live clusters");

        let (sa, sb) = (size[a] as f64, size[b] as f64);
        let dab = d2[a * n + b];
        for &c in &live {
            if c == a || c == b {
                continue;
            }
            let sc = size[c] as f64;
            let updated =
                ((sa + sc) * d2[a * n + c] + (sb + sc) * d2[b * n + c] - sc * dab) / (sa + sb + sc);
            let updated = updated.max(0.0);
            d2[a * n + c] = updated;
            d2[c * n + a] = updated;
        }
        merges.push(Merge {
            left: node[a],
            right: node[b],
            height: dab.max(0.0).sqrt(),
            size: size[a] + size[b],
        });
        size[a] += size[b];
        node[a] = n + step;
        active[b] = false;
    }
    Dendrogram {
        n_leaves: n,
        merges,
    }
}

/// Partitions the classes of `simmat` into `k` clusters by Ward linkage over
/// the matrix rows.
pub fn ward_cluster(simmat: &SimilarityMatrix, k: usize) -> Result<(ClusterSplit, Dendrogram)> {
    let n = simmat.len();
    if k < 1 || k > n {
        return Err(Error::validation(format!("k must be in [1, {n}], got {k}")));
    }
    simmat.check_symmetric(crate::similarity::SYMMETRY_TOLERANCE)?;
    let rows: Vec<&[f64]> = (0..n).map(|i| simmat.row(i)).collect();
    let dendrogram = ward_linkage(&rows);
    let labels = dendrogram.cut(k)?;
    let split = ClusterSplit {
        k,
        linkage: "ward".to_string(),
        assignments: simmat.labels().iter().cloned().zip(labels).collect(),
        merge_heights: Some(dendrogram.heights()),
    };
    Ok((split, dendrogram))
}

/// Splits a centroid set into one set per cluster, indexed by cluster id.
pub fn cluster_centroid_sets(
    split: &ClusterSplit,
    centroids: &CentroidSet,
) -> Result<Vec<CentroidSet>> {
    split.validate()?;
    let names: Vec<&str> = centroids.labels().collect();
    split.validate_covers(&names)?;
    (0..split.k)
        .map(|c| centroids.subset(&split.members(c)))
        .collect()
}

/// Cluster whose class centroids are closest to the new class on average
/// (mean cosine distance); ties go to the lowest id.
pub fn assign_new_class(
    new_class: &ClassEmbeddings,
    split: &ClusterSplit,
    centroids: &CentroidSet,
) -> Result<usize> {
    if new_class.dim() != centroids.dim() {
        return Err(Error::domain(format!(
            "new class {} has dimension {}, clusters use {}",
            new_class.name(),
            new_class.dim(),
            centroids.dim()
        )));
    }
    let centroid = compute_centroid(new_class);
    if norm(&centroid) == 0.0 {
        return Err(Error::domain(format!(
            "new class {} has a zero-norm centroid",
            new_class.name()
        )));
    }
    let sets = cluster_centroid_sets(split, centroids)?;
    let mut best = (0, f64::INFINITY);
    for (id, set) in sets.iter().enumerate() {
        let mut total = 0.0;
        for (_, c) in set.iter() {
            total += cosine_distance(&centroid, c)?;
        }
        let mean = total / set.len() as f64;
        if mean < best.1 {
            best = (id, mean);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(labels: &[&str], values: Vec<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(labels.iter().map(|s| s.to_string()).collect(), values).unwrap()
    }

    fn two_pairs() -> SimilarityMatrix {
        // a,b tight; c,d tight; cross distance 1
        #[rustfmt::skip]
        let v = vec![
            0.0,  0.01, 1.0,  1.0,
            0.01, 0.0,  1.0,  1.0,
            1.0,  1.0,  0.0,  0.01,
            1.0,  1.0,  0.01, 0.0,
        ];
        matrix(&["a", "b", "c", "d"], v)
    }

    #[test]
    fn k_one_and_k_n() {
        let m = two_pairs();
        let (s1, d) = ward_cluster(&m, 1).unwrap();
        assert!(s1.assignments.values().all(|&c| c == 0));
        assert_eq!(d.merges().len(), 3);
        let (s4, _) = ward_cluster(&m, 4).unwrap();
        assert_eq!(
            s4.assignments.values().copied().collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn two_tight_pairs() {
        let (s, d) = ward_cluster(&two_pairs(), 2).unwrap();
        assert_eq!(
            s.assignments.values().copied().collect::<Vec<_>>(),
            vec![0, 0, 1, 1]
        );
        assert_eq!(s.linkage, "ward");
        assert_eq!(s.merge_heights.as_ref().unwrap().len(), 3);
        // both tight pairs tie exactly; the (0,1) pair goes first
        assert_eq!((d.merges()[0].left, d.merges()[0].right), (0, 1));
        assert_eq!((d.merges()[1].left, d.merges()[1].right), (2, 3));
        assert_eq!(d.merges()[2].size, 4);
    }

    #[test]
    fn rejects_bad_k_and_asymmetry() {
        let m = two_pairs();
        assert!(ward_cluster(&m, 0).is_err());
        assert!(ward_cluster(&m, 5).is_err());
        assert!(
            SimilarityMatrix::new(vec!["a".into(), "b".into()], vec![0.0, 0.3, 0.2, 0.0]).is_err()
        );
    }

    #[test]
    fn ward_heights_on_line() {
        // points 0, 1, 10 on a line: first merge {0,1} at d=1,
        // then d²({0,1},{10}) = (2·100 + 2·81 − 1·1)/3 = 361/3
        let d = ward_linkage(&[vec![0.0], vec![1.0], vec![10.0]]);
        assert_eq!(d.merges()[0].height, 1.0);
        assert!((d.merges()[1].height - (361.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(d.merges()[1].left, 3);
        assert_eq!(d.merges()[1].right, 2);
    }

    fn centroid_set(entries: &[(&str, &[f64])]) -> CentroidSet {
        let mut set = CentroidSet::new(entries[0].1.len());
        for (n, c) in entries {
            set.insert(*n, c.to_vec()).unwrap();
        }
        set
    }

    fn split(pairs: &[(&str, usize)], k: usize) -> ClusterSplit {
        ClusterSplit {
            k,
            linkage: "ward".into(),
            assignments: pairs.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
            merge_heights: None,
        }
    }

    #[test]
    fn centroid_sets_partition() {
        let set = centroid_set(&[
            ("a", &[1.0, 0.0]),
            ("b", &[0.0, 1.0]),
            ("c", &[1.0, 1.0]),
            ("d", &[2.0, 1.0]),
        ]);
        let one = cluster_centroid_sets(&split(&[("a", 0), ("b", 0), ("c", 0), ("d", 0)], 1), &set)
            .unwrap();
        assert_eq!(one, vec![set.clone()]);
        let two = cluster_centroid_sets(&split(&[("a", 0), ("b", 1), ("c", 1), ("d", 0)], 2), &set)
            .unwrap();
        assert_eq!(two[0].labels().collect::<Vec<_>>(), vec!["a", "d"]);
        assert_eq!(two[1].labels().collect::<Vec<_>>(), vec!["b", "c"]);
        assert!(cluster_centroid_sets(&split(&[("a", 0), ("x", 0)], 1), &set).is_err());
    }

    #[test]
    fn new_class_goes_to_matching_cluster() {
        let set = centroid_set(&[
            ("a", &[1.0, 0.0, 0.0]),
            ("b", &[0.9, 0.1, 0.0]),
            ("c", &[0.0, 0.0, 1.0]),
            ("d", &[0.0, 0.1, 0.9]),
        ]);
        let s = split(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)], 2);
        let new = ClassEmbeddings::from_rows("n", &[[0.0f32, 0.0, 1.0]]).unwrap();
        assert_eq!(assign_new_class(&new, &s, &set).unwrap(), 1);
    }

    #[test]
    fn new_class_tie_goes_to_lowest_id() {
        let set = centroid_set(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let s = split(&[("a", 0), ("b", 1)], 2);
        let new = ClassEmbeddings::from_rows("n", &[[1.0f32, 1.0]]).unwrap();
        assert_eq!(assign_new_class(&new, &s, &set).unwrap(), 0);
    }

    #[test]
    fn new_class_errors() {
        let set = centroid_set(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let s = split(&[("a", 0), ("b", 1)], 2);
        let zero = ClassEmbeddings::from_rows("z", &[[1.0f32, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(assign_new_class(&zero, &s, &set).is_err());
        let wide = ClassEmbeddings::from_rows("w", &[[1.0f32, 0.0, 0.0]]).unwrap();
        assert!(assign_new_class(&wide, &s, &set).is_err());
    }
}
