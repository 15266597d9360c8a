//! Classifier heads evaluated on precomputed feature vectors.
//!
//! Two kinds are provided: a nearest-centroid head (no training, exact
//! oracles) and a linear softmax head trained by full-batch gradient descent
//! on multinomial cross-entropy with a step learning-rate schedule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{compute_centroid, cosine_distance, norm, CentroidSet};
use crate::store::{read_json, write_json, ClassEmbeddings};

/// Anything that maps a feature vector to a class name.
pub trait ClassifierHead {
    fn classes(&self) -> Vec<&str>;
    fn dim(&self) -> usize;
    fn predict(&self, query: &[f64]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroidHead {
    centroids: CentroidSet,
}

impl NearestCentroidHead {
    pub fn new(centroids: CentroidSet) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::validation(
                "nearest-centroid head needs at least one class",
            ));
        }
        if let Some((name, _)) = centroids.iter().find(|(_, c)| norm(c) == 0.0) {
            return Err(Error::validation(format!(
                "class {name} has a zero-norm centroid"
            )));
        }
        Ok(Self { centroids })
    }

    pub fn fit(data: &[ClassEmbeddings]) -> Result<Self> {
        let dim = data
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| Error::validation("no classes to fit"))?;
        let mut set = CentroidSet::new(dim);
        for c in data {
            set.insert(c.name(), compute_centroid(c))?;
        }
        Self::new(set)
    }

    pub fn centroids(&self) -> &CentroidSet {
        &self.centroids
    }
}

/// Class whose centroid has the smallest cosine distance to `query`; ties go
/// to the earlier class.
pub fn nc_predict(head: &NearestCentroidHead, query: &[f64]) -> Result<String> {
    let mut best: Option<(&str, f64)> = None;
    for (name, c) in head.centroids.iter() {
        let d = cosine_distance(query, c)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((name, d));
        }
    }
    Ok(best.expect("head is nonempty").0.to_string())
}

impl ClassifierHead for NearestCentroidHead {
    fn classes(&self) -> Vec<&str> {
        self.centroids.labels().collect()
    }

    fn dim(&self) -> usize {
        self.centroids.dim()
    }

    fn predict(&self, query: &[f64]) -> Result<String> {
        nc_predict(self, query)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr0: 0.1,
            step_size: 30,
            gamma: 0.1,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.step_size < 1 {
            return Err(Error::validation("step_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::validation(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::validation(format!(
                "l2 must be nonnegative, got {}",
                self.l2
            )));
        }
        Ok(())
    }

    /// Step schedule: `lr0 · gamma^(floor(epoch / step_size))`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.step_size) as i32;
        self.lr0 * self.gamma.powi(steps)
    }
}

/// Multinomial logistic regression over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub classes: Vec<String>,
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
    pub trained_epochs: usize,
    pub config: Option<TrainConfig>,
}

/// Feature rows with class indices, as consumed by training.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
}

impl TrainingBatch {
    pub fn from_classes(data: &[ClassEmbeddings]) -> Result<Self> {
        let dim = data
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| Error::validation("no classes in training data"))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut classes = Vec::with_capacity(data.len());
        for (y, c) in data.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::validation(format!(
                    "class {} has dimension {}, expected {dim}",
                    c.name(),
                    c.dim()
                )));
            }
            if c.is_empty() {
                return Err(Error::validation(format!("class {} is empty", c.name())));
            }
            classes.push(c.name().to_string());
            for i in 0..c.len() {
                features.push(c.row_f64(i));
                labels.push(y);
            }
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Loss value and its gradient with respect to `W` and `b`.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

impl LinearHead {
    pub fn zeros(classes: Vec<String>, dim: usize) -> Self {
        let c = classes.len();
        Self {
            classes,
            weights: vec![vec![0.0; dim]; c],
            bias: vec![0.0; c],
            trained_epochs: 0,
            config: None,
        }
    }

    /// Untrained head for a cluster holding a single class; always predicts it.
    pub fn single_class(class: impl Into<String>, dim: usize) -> Self {
        Self::zeros(vec![class.into()], dim)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c == 0 {
            return Err(Error::validation("linear head has no classes"));
        }
        if self.weights.len() != c || self.bias.len() != c {
            return Err(Error::validation(format!(
                "linear head shape mismatch: {c} classes, {} weight rows, {} biases",
                self.weights.len(),
                self.bias.len()
            )));
        }
        let d = self.weights[0].len();
        if d == 0 || self.weights.iter().any(|r| r.len() != d) {
            return Err(Error::validation(
                "linear head weight rows are ragged or empty",
            ));
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::validation("linear head has non-finite parameters"));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!(
                "query has dimension {}, head expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| crate::similarity::dot(w, x) + b)
            .collect())
    }

    /// Mean cross-entropy over the batch plus `l2/2 · ‖W‖²`, and its gradient.
    pub fn loss_and_gradient(&self, batch: &TrainingBatch, l2: f64) -> Result<Gradient> {
        let c = self.classes.len();
        let d = self.dim();
        let n = batch.features.len();
        if n == 0 {
            return Err(Error::validation("empty training batch"));
        }
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        for (x, &y) in batch.features.iter().zip(&batch.labels) {
            let z = self.logits(x)?;
            let lse = log_sum_exp(&z);
            loss += lse - z[y];
            for k in 0..c {
                let p = (z[k] - lse).exp();
                let r = p - if k == y { 1.0 } else { 0.0 };
                gb[k] += r;
                for (g, xi) in gw[k].iter_mut().zip(x) {
                    *g += r * xi;
                }
            }
        }
        let inv = 1.0 / n as f64;
        loss *= inv;
        gb.iter_mut().for_each(|g| *g *= inv);
        let mut reg = 0.0;
        for (grow, wrow) in gw.iter_mut().zip(&self.weights) {
            for (g, w) in grow.iter_mut().zip(wrow) {
                *g = *g * inv + l2 * w;
                reg += w * w;
            }
        }
        loss += 0.5 * l2 * reg;
        Ok(Gradient {
            loss,
            weights: gw,
            bias: gb,
        })
    }

    pub fn loss(&self, batch: &TrainingBatch, l2: f64) -> Result<f64> {
        Ok(self.loss_and_gradient(batch, l2)?.loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

impl ClassifierHead for LinearHead {
    fn classes(&self) -> Vec<&str> {
        self.classes.iter().map(String::as_str).collect()
    }

    fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn predict(&self, query: &[f64]) -> Result<String> {
        Ok(linear_predict(self, query)?.0)
    }
}

/// `softmax(W·q + b)` and the argmax class (first on ties).
pub fn linear_predict(head: &LinearHead, query: &[f64]) -> Result<(String, Vec<f64>)> {
    let probs = softmax(&head.logits(query)?);
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((head.classes[best].clone(), probs))
}

/// Trains a linear head from zero initialization. Returns the head and the
/// loss history: entry 0 is the initial loss, entry `e + 1` the loss after
/// epoch `e`.
pub fn train_linear_head_with_history(
    data: &[ClassEmbeddings],
    cfg: &TrainConfig,
) -> Result<(LinearHead, Vec<f64>)> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::validation(format!(
            "linear head training needs at least 2 classes, got {}",
            data.len()
        )));
    }
    let batch = TrainingBatch::from_classes(data)?;
    let mut head = LinearHead::zeros(batch.classes.clone(), batch.dim());
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..cfg.epochs {
        let g = head.loss_and_gradient(&batch, cfg.l2)?;
        if !g.loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at epoch {epoch} (lr {})",
                cfg.lr_at(epoch)
            )));
        }
        history.push(g.loss);
        let lr = cfg.lr_at(epoch);
        for (wrow, grow) in head.weights.iter_mut().zip(&g.weights) {
            for (w, gv) in wrow.iter_mut().zip(grow) {
                *w -= lr * gv;
            }
        }
        for (b, gv) in head.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gv;
        }
        if head
            .weights
            .iter()
            .flatten()
            .chain(&head.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Training(format!(
                "non-finite parameters after epoch {epoch} (lr {lr})"
            )));
        }
    }
    let final_loss = head.loss(&batch, cfg.l2)?;
    if !final_loss.is_finite() {
        return Err(Error::Training("non-finite final loss".into()));
    }
    history.push(final_loss);
    if final_loss > history[0] {
        return Err(Error::Training(format!(
            "final loss {final_loss} exceeds initial loss {}; lower lr0",
            history[0]
        )));
    }
    head.trained_epochs = cfg.epochs;
    head.config = Some(*cfg);
    Ok((head, history))
}

pub fn train_linear_head(data: &[ClassEmbeddings], cfg: &TrainConfig) -> Result<LinearHead> {
    Ok(train_linear_head_with_history(data, cfg)?.0)
}

/// A trained head of either kind, as stored in a head file.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    NearestCentroid(NearestCentroidHead),
    Linear(LinearHead),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    NearestCentroid,
    Linear,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest_centroid" | "nearest-centroid" => Ok(Self::NearestCentroid),
            "linear" => Ok(Self::Linear),
            other => Err(Error::validation(format!(
                "unknown head kind {other:?} (expected nearest_centroid or linear)"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NearestCentroidFile {
    classes: Vec<String>,
    centroids: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum HeadFile {
    Linear(LinearHead),
    NearestCentroid(NearestCentroidFile),
}

impl Head {
    /// Trains a head of the requested kind on the given classes. A linear
    /// head over a single class degenerates to a constant predictor.
    pub fn train(kind: HeadKind, data: &[ClassEmbeddings], cfg: &TrainConfig) -> Result<Self> {
        match kind {
            HeadKind::NearestCentroid => Ok(Head::NearestCentroid(NearestCentroidHead::fit(data)?)),
            HeadKind::Linear if data.len() == 1 => Ok(Head::Linear(LinearHead::single_class(
                data[0].name(),
                data[0].dim(),
            ))),
            HeadKind::Linear => Ok(Head::Linear(train_linear_head(data, cfg)?)),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::NearestCentroid(_) => HeadKind::NearestCentroid,
            Head::Linear(_) => HeadKind::Linear,
        }
    }

    /// Training configuration recorded in a linear head, if any.
    pub fn train_config(&self) -> Option<TrainConfig> {
        match self {
            Head::Linear(h) => h.config,
            Head::NearestCentroid(_) => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            Head::Linear(h) => HeadFile::Linear(h.clone()),
            Head::NearestCentroid(h) => HeadFile::NearestCentroid(NearestCentroidFile {
                classes: h.centroids.labels().map(str::to_string).collect(),
                centroids: h.centroids.iter().map(|(_, c)| c.to_vec()).collect(),
            }),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::validation(format!("cannot serialize head: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: HeadFile = read_json(path)?;
        match file {
            HeadFile::Linear(h) => {
                h.validate()?;
                Ok(Head::Linear(h))
            }
            HeadFile::NearestCentroid(f) => {
                if f.classes.len() != f.centroids.len() {
                    return Err(Error::validation("head file class/centroid count mismatch"));
                }
                let dim = f.centroids.first().map_or(0, Vec::len);
                let mut set = CentroidSet::new(dim);
                for (n, c) in f.classes.into_iter().zip(f.centroids) {
                    set.insert(n, c)?;
                }
                Ok(Head::NearestCentroid(NearestCentroidHead::new(set)?))
            }
        }
    }
}

impl ClassifierHead for Head {
    fn classes(&self) -> Vec<&str> {
        match self {
            Head::NearestCentroid(h) => h.classes(),
            Head::Linear(h) => ClassifierHead::classes(h),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Head::NearestCentroid(h) => h.dim(),
            Head::Linear(h) => ClassifierHead::dim(h),
        }
    }

    fn predict(&self, query: &[f64]) -> Result<String> {
        match self {
            Head::NearestCentroid(h) => h.predict(query),
            Head::Linear(h) => h.predict(query),
        }
    }
}
