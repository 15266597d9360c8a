//! Embedding storage: the FVEC1 binary vector format, dataset manifests and
//! cluster split files.
//!
//! Embeddings are held as 32-bit floats exactly as they appear on disk; every
//! computation downstream widens them to `f64`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FvecError, Result};

/// Magic bytes opening every FVEC1 file.
pub const FVEC_MAGIC: &[u8; 5] = b"FVEC1";
const HEADER_LEN: usize = 5 + 4 + 4;

/// Encodes vectors as FVEC1: magic, u32 LE dim, u32 LE count, then
/// `count * dim` little-endian `f32` values, row-major.
pub fn encode_fvec<R: AsRef<[f32]>>(rows: &[R]) -> Result<Vec<u8>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::validation("cannot encode an empty vector list"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::validation("cannot encode zero-length vectors"));
    }
    if let Some((i, r)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.as_ref().len() != dim)
    {
        return Err(Error::validation(format!(
            "ragged rows: row {i} has length {}, expected {dim}",
            r.as_ref().len()
        )));
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::validation("dimension exceeds u32"))?;
    let count32 =
        u32::try_from(rows.len()).map_err(|_| Error::validation("vector count exceeds u32"))?;

    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * dim * 4);
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&count32.to_le_bytes());
    for row in rows {
        for v in row.as_ref() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes an FVEC1 byte stream into `(dim, rows)`.
pub fn decode_fvec(bytes: &[u8]) -> std::result::Result<(usize, Vec<Vec<f32>>), FvecError> {
    if bytes.len() < FVEC_MAGIC.len() || &bytes[..5] != FVEC_MAGIC {
        return Err(FvecError::BadMagic { offset: 0 });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FvecError::Truncated {
            offset: bytes.len(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(FvecError::ZeroDim { offset: 5 });
    }
    if count == 0 {
        return Err(FvecError::ZeroCount { offset: 9 });
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = dim
        .checked_mul(count)
        .and_then(|n| n.checked_mul(4))
        .unwrap_or(usize::MAX);
    if payload.len() < expected {
        return Err(FvecError::Truncated {
            offset: bytes.len(),
            expected: HEADER_LEN.saturating_add(expected),
            found: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(FvecError::TrailingBytes {
            offset: HEADER_LEN + expected,
            extra: payload.len() - expected,
        });
    }

    let mut rows = Vec::with_capacity(count);
    for (r, chunk) in payload.chunks_exact(dim * 4).enumerate() {
        let mut row = Vec::with_capacity(dim);
        for (c, b) in chunk.chunks_exact(4).enumerate() {
            let value = f32::from_le_bytes(b.try_into().unwrap());
            if !value.is_finite() {
                return Err(FvecError::NonFinite {
                    offset: HEADER_LEN + (r * dim + c) * 4,
                    value,
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    Ok((dim, rows))
}

pub fn load_fvec(path: impl AsRef<Path>) -> Result<(usize, Vec<Vec<f32>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fvec(&bytes).map_err(|source| Error::Fvec {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_fvec<R: AsRef<[f32]>>(rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fvec(rows)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// All embedding vectors of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings {
    name: String,
    dim: usize,
    data: Vec<f32>,
}

impl ClassEmbeddings {
    /// Builds a class from a flat row-major buffer.
    pub fn new(name: impl Into<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::validation("class name must be nonempty"));
        }
        if dim == 0 {
            return Err(Error::validation(format!(
                "class {name}: dimension is zero"
            )));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::validation(format!(
                "class {name}: {} values do not form a nonempty set of {dim}-dim rows",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "class {name}: non-finite value in row {}",
                i / dim
            )));
        }
        Ok(Self { name, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(name: impl Into<String>, rows: &[R]) -> Result<Self> {
        let name = name.into();
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::validation(format!("class {name} has no vectors")))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != dim {
                return Err(Error::validation(format!(
                    "class {name}: row {i} has length {}, expected {dim}",
                    r.as_ref().len()
                )));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(name, dim, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vectors in the class.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.name.clone(), self.dim, data)
    }
}

/// A validated collection of classes sharing one embedding dimension. Class
/// order is canonical: it fixes similarity-matrix row order everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStore {
    dim: usize,
    classes: Vec<ClassEmbeddings>,
    source_tag: String,
}

impl DatasetStore {
    pub fn new(
        dim: usize,
        classes: Vec<ClassEmbeddings>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::validation("a store needs at least one class"));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.dim() != dim {
                return Err(Error::validation(format!(
                    "class {}: dimension {} does not match store dimension {dim}",
                    c.name(),
                    c.dim()
                )));
            }
            if !seen.insert(c.name()) {
                return Err(Error::validation(format!(
                    "duplicate class name {}",
                    c.name()
                )));
            }
        }
        Ok(Self {
            dim,
            classes,
            source_tag: source_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[ClassEmbeddings] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name()).collect()
    }

    pub fn class(&self, name: &str) -> Option<&ClassEmbeddings> {
        self.classes.iter().find(|c| c.name() == name)
    }

    /// Returns a new store with `class` appended.
    pub fn with_class(&self, class: ClassEmbeddings) -> Result<Self> {
        let mut classes = self.classes.clone();
        classes.push(class);
        Self::new(self.dim, classes, self.source_tag.clone())
    }

    pub fn into_classes(self) -> Vec<ClassEmbeddings> {
        self.classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub count: usize,
}

/// On-disk manifest describing a store: one FVEC1 file per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub classes: Vec<ManifestEntry>,
    pub source_tag: String,
}

pub fn load_store(manifest_path: impl AsRef<Path>) -> Result<DatasetStore> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new(""));

    let mut classes = Vec::with_capacity(manifest.classes.len());
    for entry in &manifest.classes {
        let (dim, rows) = load_fvec(base.join(&entry.file))?;
        if dim != manifest.dim {
            return Err(Error::validation(format!(
                "class {}: file dimension {dim} does not match manifest dimension {}",
                entry.name, manifest.dim
            )));
        }
        if rows.len() != entry.count {
            return Err(Error::validation(format!(
                "class {}: manifest declares {} vectors but {} holds {}",
                entry.name,
                entry.count,
                entry.file,
                rows.len()
            )));
        }
        classes.push(ClassEmbeddings::from_rows(entry.name.clone(), &rows)?);
    }
    DatasetStore::new(manifest.dim, classes, manifest.source_tag)
}

/// File name used for class `index` when a store is written out.
pub fn class_file_name(index: usize, name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:04}_{slug}.fvec")
}

/// Writes `manifest.json` plus one FVEC1 file per class into `dir`, returning
/// the manifest path.
pub fn save_store(store: &DatasetStore, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(store.num_classes());
    for (i, class) in store.classes().iter().enumerate() {
        let file = class_file_name(i, class.name());
        let rows: Vec<&[f32]> = class.rows().collect();
        save_fvec(&rows, dir.join(&file))?;
        entries.push(ManifestEntry {
            name: class.name().to_string(),
            file,
            count: class.len(),
        });
    }
    let manifest = Manifest {
        dim: store.dim(),
        classes: entries,
        source_tag: store.source_tag().to_string(),
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Partition of class names into `k` sub-dataset clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSplit {
    pub k: usize,
    pub linkage: String,
    pub assignments: IndexMap<String, usize>,
    pub merge_heights: Option<Vec<f64>>,
}

impl ClusterSplit {
    /// Checks internal consistency: `k ≥ 1`, every id in range and every
    /// cluster populated.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("split has k = 0"));
        }
        let mut sizes = vec![0usize; self.k];
        for (name, &id) in &self.assignments {
            if id >= self.k {
                return Err(Error::validation(format!(
                    "class {name} assigned to cluster {id}, but k = {}",
                    self.k
                )));
            }
            sizes[id] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::validation(format!("cluster {empty} has no classes")));
        }
        Ok(())
    }

    /// Checks that the split covers exactly the given class names.
    pub fn validate_covers<S: AsRef<str>>(&self, names: &[S]) -> Result<()> {
        for n in names {
            if !self.assignments.contains_key(n.as_ref()) {
                return Err(Error::validation(format!(
                    "class {} missing from split",
                    n.as_ref()
                )));
            }
        }
        if self.assignments.len() != names.len() {
            let known: HashSet<&str> = names.iter().map(|n| n.as_ref()).collect();
            let extra = self
                .assignments
                .keys()
                .find(|k| !known.contains(k.as_str()))
                .map(String::as_str)
                .unwrap_or("?");
            return Err(Error::validation(format!(
                "split names class {extra} which is not in the store"
            )));
        }
        Ok(())
    }

    pub fn cluster_of(&self, class: &str) -> Option<usize> {
        self.assignments.get(class).copied()
    }

    /// Class names of one cluster, in split order.
    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &id)| id == cluster)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &id in self.assignments.values() {
            if id < self.k {
                sizes[id] += 1;
            }
        }
        sizes
    }

    /// Cluster sizes sorted ascending, for comparisons up to relabeling.
    pub fn size_multiset(&self) -> Vec<usize> {
        let mut s = self.sizes();
        s.sort_unstable();
        s
    }

    /// Same partition of class names, ignoring cluster ids.
    pub fn same_partition(&self, other: &ClusterSplit) -> bool {
        if self.k != other.k || self.assignments.len() != other.assignments.len() {
            return false;
        }
        let mut forward = vec![None; self.k];
        let mut backward = vec![None; other.k];
        for (name, &a) in &self.assignments {
            let Some(&b) = other.assignments.get(name) else {
                return false;
            };
            if a >= self.k || b >= other.k {
                return false;
            }
            match (forward[a], backward[b]) {
                (None, None) => {
                    forward[a] = Some(b);
                    backward[b] = Some(a);
                }
                (Some(fb), Some(ba)) if fb == b && ba == a => {}
                _ => return false,
            }
        }
        true
    }
}

pub fn save_split(split: &ClusterSplit, path: impl AsRef<Path>) -> Result<()> {
    split.validate()?;
    write_json(path, split)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<ClusterSplit> {
    let split: ClusterSplit = read_json(path)?;
    split.validate()?;
    Ok(split)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty-printed JSON with a trailing newline; identical values give
/// identical bytes.
pub(crate) fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
