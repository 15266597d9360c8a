//! Class centroids, spread and the pairwise cosine-distance matrix between
//! classes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{ClassEmbeddings, DatasetStore};

/// Tolerance used when checking a loaded matrix for symmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

/// Dot product accumulated in index order.
#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b)
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine of a zero-norm vector is undefined"));
    }
    if !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::domain("non-finite vector norm"));
    }
    Ok((nu, nv))
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `1 - cos(u, v)`, in `[0, 2]`. Zero-norm inputs are a domain error.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

/// Arithmetic mean of the class's rows. This is the fixed point of one-cluster
/// k-means, so no iteration is needed.
pub fn compute_centroid(class: &ClassEmbeddings) -> Vec<f64> {
    let mut sum = vec![0.0f64; class.dim()];
    for row in class.rows() {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += f64::from(v);
        }
    }
    let n = class.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

/// Sum of squared Euclidean distances from each row to the class centroid.
pub fn compute_inertia(class: &ClassEmbeddings) -> f64 {
    let centroid = compute_centroid(class);
    class
        .rows()
        .map(|row| {
            row.iter()
                .zip(&centroid)
                .map(|(&v, c)| {
                    let d = f64::from(v) - c;
                    d * d
                })
                .sum::<f64>()
        })
        .sum()
}

/// Ordered map from class name to feature centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    dim: usize,
    centroids: IndexMap<String, Vec<f64>>,
}

impl CentroidSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            centroids: IndexMap::new(),
        }
    }

    pub fn from_store(store: &DatasetStore) -> Self {
        let centroids: Vec<Vec<f64>> = store.classes().par_iter().map(compute_centroid).collect();
        let mut set = Self::new(store.dim());
        for (class, c) in store.classes().iter().zip(centroids) {
            set.centroids.insert(class.name().to_string(), c);
        }
        set
    }

    pub fn insert(&mut self, name: impl Into<String>, centroid: Vec<f64>) -> Result<()> {
        let name = name.into();
        if centroid.len() != self.dim {
            return Err(Error::validation(format!(
                "centroid for {name} has length {}, expected {}",
                centroid.len(),
                self.dim
            )));
        }
        if self.centroids.contains_key(&name) {
            return Err(Error::validation(format!("duplicate centroid for {name}")));
        }
        self.centroids.insert(name, centroid);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.centroids.get(name).map(Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> + '_ {
        self.centroids.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.centroids
            .iter()
            .map(|(n, c)| (n.as_str(), c.as_slice()))
    }

    /// Centroids of the named classes, in the order given.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let mut out = Self::new(self.dim);
        for n in names {
            let c = self.get(n.as_ref()).ok_or_else(|| {
                Error::validation(format!("no centroid for class {}", n.as_ref()))
            })?;
            out.insert(n.as_ref(), c.to_vec())?;
        }
        Ok(out)
    }
}

/// Labeled `n × n` matrix of cosine distances between class centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Wraps a row-major buffer, checking shape and symmetry.
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::validation("similarity matrix has no labels"));
        }
        if values.len() != n * n {
            return Err(Error::validation(format!(
                "{} values cannot fill a {n}×{n} matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite matrix entry {v}")));
        }
        let m = Self { labels, values };
        m.check_symmetric(SYMMETRY_TOLERANCE)?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return Err(Error::validation(format!(
                        "matrix not symmetric at ({}, {}): {} vs {}",
                        self.labels[i],
                        self.labels[j],
                        self.get(i, j),
                        self.get(j, i)
                    )));
                }
            }
        }
        Ok(())
    }

    /// CSV rendering: a header of an empty cell plus labels, then one row per
    /// label. Values use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_field(l));
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&csv_field(l));
            for v in self.row(i) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("empty similarity CSV"))?;
        let header = split_csv_line(header)?;
        if header.first().map(String::as_str) != Some("") {
            return Err(Error::validation(
                "similarity CSV header must start with an empty cell",
            ));
        }
        let labels: Vec<String> = header[1..].to_vec();
        let n = labels.len();
        let mut values = Vec::with_capacity(n * n);
        let mut rows = 0;
        for (r, line) in lines.enumerate() {
            let cells = split_csv_line(line)?;
            if cells.len() != n + 1 {
                return Err(Error::validation(format!(
                    "similarity CSV row {} has {} cells, expected {}",
                    r + 1,
                    cells.len(),
                    n + 1
                )));
            }
            if r >= n || cells[0] != labels[r] {
                return Err(Error::validation(format!(
                    "similarity CSV row {} label {:?} does not match header",
                    r + 1,
                    cells[0]
                )));
            }
            for c in &cells[1..] {
                let v: f64 = c.trim().parse().map_err(|_| {
                    Error::validation(format!("bad number {c:?} in similarity CSV row {}", r + 1))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::validation(format!(
                "similarity CSV has {rows} rows for {n} labels"
            )));
        }
        Self::new(labels, values)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Result<Vec<String>> {
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.is_empty() => quoted = true,
            (',', false) => cells.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    if quoted {
        return Err(Error::validation("unterminated quote in similarity CSV"));
    }
    cells.push(cur);
    Ok(cells)
}

/// Pairwise cosine distances between the given centroids, in set order.
pub fn similarity_matrix(centroids: &CentroidSet) -> Result<SimilarityMatrix> {
    for (name, c) in centroids.iter() {
        if norm(c) == 0.0 {
            return Err(Error::domain(format!(
                "class {name} has a zero-norm centroid"
            )));
        }
    }
    let rows: Vec<&[f64]> = centroids.iter().map(|(_, c)| c).collect();
    let n = rows.len();
    // Upper triangle per row; each entry has a fixed accumulation order so the
    // parallel result is bit-identical to a serial one.
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| cosine_distance(rows[i], rows[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &d) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    SimilarityMatrix::new(centroids.labels().map(str::to_string).collect(), values)
}

/// Feature centroids of every class and the matrix of their pairwise cosine
/// distances, both in store order.
pub fn build_similarity_matrix(store: &DatasetStore) -> Result<(CentroidSet, SimilarityMatrix)> {
    let centroids = CentroidSet::from_store(store);
    let matrix = similarity_matrix(&centroids)?;
    Ok((centroids, matrix))
}
