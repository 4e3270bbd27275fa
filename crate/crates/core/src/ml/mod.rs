//! Classifiers over the five-feature vectors: CART decision tree, random
//! forest, multiclass gradient boosting and k-nearest neighbours, plus
//! stratified k-fold grid search and a checksummed model container.

mod search;
mod tree;

pub use search::{default_grid, grid_search_cv, stratified_folds, CvRow, HyperGrid, SearchResult};
pub use tree::{gini, gini_gain, ClassCounts, Node, Tree};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureVector, SignalClass};
use tree::{grow_tree, Classes, GrowParams, Presorted, Values};

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["cn0", "dcn0", "prdc", "elev", "ddres"];

const MODEL_MAGIC: &[u8; 4] = b"MPLM";
pub const MODEL_FORMAT_VERSION: u8 = 1;
/// Floor on class priors so an absent class gets a finite initial score.
const MIN_PRIOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("empty node")]
    EmptyNode,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("{rows} rows cannot fill {folds} folds")]
    TooFewSamples { rows: usize, folds: usize },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
}

/// Labeled rows in feature order `FEATURE_NAMES`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    rows: Vec<FeatureVector>,
}

impl Dataset {
    /// Every row must be labeled and carry finite features.
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self, MlError> {
        for (i, r) in rows.iter().enumerate() {
            if r.label.is_none() {
                return Err(MlError::InvalidRow { row: i, reason: "unlabeled".into() });
            }
            if !r.features().iter().all(|v| v.is_finite()) {
                return Err(MlError::InvalidRow { row: i, reason: "non-finite feature".into() });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<FeatureVector> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label(&self, i: usize) -> SignalClass {
        self.rows[i].label.expect("dataset rows are labeled")
    }

    pub fn labels(&self) -> Vec<SignalClass> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    pub fn matrix(&self) -> Vec<[f64; NUM_FEATURES]> {
        self.rows.iter().map(FeatureVector::features).collect()
    }

    pub fn class_counts(&self) -> [usize; SignalClass::COUNT] {
        let mut c = [0; SignalClass::COUNT];
        for i in 0..self.len() {
            c[self.label(i).index()] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gbdt,
    RandomForest,
    DecisionTree,
    Knn,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Gbdt, Family::RandomForest, Family::DecisionTree, Family::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gbdt => "gbdt",
            Family::RandomForest => "random_forest",
            Family::DecisionTree => "decision_tree",
            Family::Knn => "knn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = MlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gbdt" => Ok(Family::Gbdt),
            "random_forest" | "forest" | "rf" => Ok(Family::RandomForest),
            "decision_tree" | "tree" | "cart" | "dt" => Ok(Family::DecisionTree),
            "knn" => Ok(Family::Knn),
            other => Err(MlError::InvalidParams(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Params {
    DecisionTree {
        max_depth: usize,
        min_samples_leaf: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: usize,
        min_samples_leaf: usize,
    },
    Gbdt {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
    },
    Knn {
        k: usize,
    },
}

impl Params {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::DecisionTree => Params::DecisionTree { max_depth: 8, min_samples_leaf: 1 },
            Family::RandomForest => Params::RandomForest { n_trees: 100, max_depth: 12, min_samples_leaf: 1 },
            Family::Gbdt => Params::Gbdt { n_rounds: 100, learning_rate: 0.1, max_depth: 3 },
            Family::Knn => Params::Knn { k: 5 },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Params::DecisionTree { .. } => Family::DecisionTree,
            Params::RandomForest { .. } => Family::RandomForest,
            Params::Gbdt { .. } => Family::Gbdt,
            Params::Knn { .. } => Family::Knn,
        }
    }

    pub fn names(family: Family) -> &'static [&'static str] {
        match family {
            Family::DecisionTree => &["max_depth", "min_samples_leaf"],
            Family::RandomForest => &["n_trees", "max_depth", "min_samples_leaf"],
            Family::Gbdt => &["n_rounds", "learning_rate", "max_depth"],
            Family::Knn => &["k"],
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let pairs: Vec<(&str, f64)> = match *self {
            Params::DecisionTree { max_depth, min_samples_leaf } => {
                vec![("max_depth", max_depth as f64), ("min_samples_leaf", min_samples_leaf as f64)]
            }
            Params::RandomForest { n_trees, max_depth, min_samples_leaf } => vec![
                ("n_trees", n_trees as f64),
                ("max_depth", max_depth as f64),
                ("min_samples_leaf", min_samples_leaf as f64),
            ],
            Params::Gbdt { n_rounds, learning_rate, max_depth } => vec![
                ("n_rounds", n_rounds as f64),
                ("learning_rate", learning_rate),
                ("max_depth", max_depth as f64),
            ],
            Params::Knn { k } => vec![("k", k as f64)],
        };
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Family defaults overridden by the named values.
    pub fn from_map(family: Family, values: &BTreeMap<String, f64>) -> Result<Self, MlError> {
        let names = Self::names(family);
        if let Some(unknown) = values.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(MlError::InvalidParams(format!("`{unknown}` is not a {family} parameter")));
        }
        let mut merged = Self::default_for(family).to_map();
        merged.extend(values.iter().map(|(k, v)| (k.clone(), *v)));
        let int = |name: &str| -> Result<usize, MlError> {
            let v = merged[name];
            if v.fract() != 0.0 || !(0.0..=1e9).contains(&v) {
                return Err(MlError::InvalidParams(format!("{name} = {v} is not a non-negative integer")));
            }
            Ok(v as usize)
        };
        Ok(match family {
            Family::DecisionTree => Params::DecisionTree {
                max_depth: int("max_depth")?,
                min_samples_leaf: int("min_samples_leaf")?,
            },
            Family::RandomForest => Params::RandomForest {
                n_trees: int("n_trees")?,
                max_depth: int("max_depth")?,
                min_samples_leaf: int("min_samples_leaf")?,
            },
            Family::Gbdt => Params::Gbdt {
                n_rounds: int("n_rounds")?,
                learning_rate: merged["learning_rate"],
                max_depth: int("max_depth")?,
            },
            Family::Knn => Params::Knn { k: int("k")? },
        })
    }

    /// Checks that do not depend on the training set size.
    pub fn validate_ranges(&self) -> Result<(), MlError> {
        let bad = |m: String| Err(MlError::InvalidParams(m));
        match *self {
            Params::DecisionTree { max_depth, min_samples_leaf }
            | Params::RandomForest { max_depth, min_samples_leaf, .. } => {
                if max_depth == 0 {
                    return bad("max_depth must be >= 1".into());
                }
                if min_samples_leaf == 0 {
                    return bad("min_samples_leaf must be >= 1".into());
                }
                if let Params::RandomForest { n_trees: 0, .. } = self {
                    return bad("n_trees must be >= 1".into());
                }
            }
            Params::Gbdt { learning_rate, max_depth, .. } => {
                if !(learning_rate.is_finite() && learning_rate > 0.0) {
                    return bad(format!("learning_rate = {learning_rate} must be > 0"));
                }
                if max_depth == 0 {
                    return bad("max_depth must be >= 1".into());
                }
            }
            Params::Knn { k } => {
                if k == 0 {
                    return bad("k must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, rows: usize) -> Result<(), MlError> {
        self.validate_ranges()?;
        match *self {
            Params::Knn { k } if k > rows => Err(MlError::InvalidParams(format!("k = {k} must be in 1..={rows}"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_map().iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{} {}", self.family(), parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelBody {
    DecisionTree(Tree<ClassCounts>),
    RandomForest(Vec<Tree<ClassCounts>>),
    Gbdt {
        /// Per-class log prior.
        initial: [f64; SignalClass::COUNT],
        learning_rate: f64,
        /// One regression tree per class per round.
        rounds: Vec<[Tree<f64>; SignalClass::COUNT]>,
    },
    Knn {
        k: usize,
        mean: [f64; NUM_FEATURES],
        std: [f64; NUM_FEATURES],
        /// Standardized training points.
        points: Vec<[f64; NUM_FEATURES]>,
        labels: Vec<SignalClass>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: Params,
    pub body: ModelBody,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: SignalClass,
    /// Family-specific per-class scores: leaf class fractions (tree), vote
    /// fractions (forest, KNN) or additive margins (GBDT).
    pub scores: [f64; SignalClass::COUNT],
}

/// Index of the maximum; the first one wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Independent RNG stream for training unit `unit` under `seed`.
pub fn unit_rng(seed: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(unit);
    rng
}

fn fractions(counts: &[u32; 3]) -> [f64; 3] {
    let n = counts.iter().sum::<u32>().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

fn softmax(m: &[f64; 3]) -> [f64; 3] {
    let top = m[0].max(m[1]).max(m[2]);
    let e = m.map(|v| (v - top).exp());
    let s = e[0] + e[1] + e[2];
    e.map(|v| v / s)
}

/// Mean multiclass log-loss of the margins.
pub fn log_loss(margins: &[[f64; 3]], labels: &[SignalClass]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(m, y)| {
            let top = m[0].max(m[1]).max(m[2]);
            let lse = top + m.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            lse - m[y.index()]
        })
        .sum();
    total / margins.len().max(1) as f64
}

fn standardize(x: &[f64; NUM_FEATURES], mean: &[f64; NUM_FEATURES], std: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
    std::array::from_fn(|f| (x[f] - mean[f]) / std[f])
}

pub fn train(params: &Params, data: &Dataset, seed: u64) -> Result<TrainedModel, MlError> {
    if data.is_empty() {
        return Err(MlError::EmptyDataset);
    }
    params.validate(data.len())?;
    let x = data.matrix();
    let labels = data.labels();
    let y: Vec<u8> = labels.iter().map(|c| c.index() as u8).collect();
    let body = match *params {
        Params::DecisionTree { max_depth, min_samples_leaf } => {
            let grow = GrowParams { max_depth, min_samples_leaf, max_features: None };
            ModelBody::DecisionTree(grow_tree::<_, ChaCha8Rng>(&x, &Presorted::new(&x), None, &Classes(&y), grow, None))
        }
        Params::RandomForest { n_trees, max_depth, min_samples_leaf } => {
            let presorted = Presorted::new(&x);
            let grow = GrowParams {
                max_depth,
                min_samples_leaf,
                max_features: Some((NUM_FEATURES as f64).sqrt().floor() as usize),
            };
            let n = x.len();
            let trees = (0..n_trees)
                .into_par_iter()
                .map(|t| {
                    let mut rng = unit_rng(seed, t as u64);
                    let mut multiplicity = vec![0u32; n];
                    for _ in 0..n {
                        multiplicity[rng.random_range(0..n)] += 1;
                    }
                    grow_tree(&x, &presorted, Some(&multiplicity), &Classes(&y), grow, Some(&mut rng))
                })
                .collect();
            ModelBody::RandomForest(trees)
        }
        Params::Gbdt { n_rounds, learning_rate, max_depth } => train_gbdt(&x, &labels, n_rounds, learning_rate, max_depth),
        Params::Knn { k } => {
            let n = x.len() as f64;
            let mean: [f64; NUM_FEATURES] = std::array::from_fn(|f| x.iter().map(|r| r[f]).sum::<f64>() / n);
            let std: [f64; NUM_FEATURES] = std::array::from_fn(|f| {
                let var = x.iter().map(|r| (r[f] - mean[f]).powi(2)).sum::<f64>() / n;
                let s = var.sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            });
            ModelBody::Knn {
                k,
                mean,
                std,
                points: x.iter().map(|r| standardize(r, &mean, &std)).collect(),
                labels,
            }
        }
    };
    Ok(TrainedModel { params: *params, body })
}

fn train_gbdt(
    x: &[[f64; NUM_FEATURES]],
    labels: &[SignalClass],
    n_rounds: usize,
    learning_rate: f64,
    max_depth: usize,
) -> ModelBody {
    let n = x.len();
    let mut counts = [0usize; 3];
    for y in labels {
        counts[y.index()] += 1;
    }
    let initial = counts.map(|c| (c as f64 / n as f64).max(MIN_PRIOR).ln());
    let presorted = Presorted::new(x);
    let grow = GrowParams { max_depth, min_samples_leaf: 1, max_features: None };
    let mut margins = vec![initial; n];
    let mut rounds = Vec::with_capacity(n_rounds);
    for _ in 0..n_rounds {
        let probs: Vec<[f64; 3]> = margins.iter().map(softmax).collect();
        let trees: Vec<Tree<f64>> = (0..SignalClass::COUNT)
            .into_par_iter()
            .map(|k| {
                let residual: Vec<f64> = probs
                    .iter()
                    .zip(labels)
                    .map(|(p, y)| f64::from(u8::from(y.index() == k)) - p[k])
                    .collect();
                grow_tree::<_, ChaCha8Rng>(x, &presorted, None, &Values(&residual), grow, None)
            })
            .collect();
        for (m, row) in margins.iter_mut().zip(x) {
            for k in 0..SignalClass::COUNT {
                m[k] += learning_rate * trees[k].value(row);
            }
        }
        let round: [Tree<f64>; 3] = trees.try_into().expect("three class trees");
        rounds.push(round);
    }
    ModelBody::Gbdt { initial, learning_rate, rounds }
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn predict(&self, x: &[f64; NUM_FEATURES]) -> Prediction {
        let scores = match &self.body {
            ModelBody::DecisionTree(tree) => fractions(tree.leaf(x)),
            ModelBody::RandomForest(trees) => {
                let mut votes = [0u32; 3];
                for t in trees {
                    votes[t.predict(x).index()] += 1;
                }
                fractions(&votes)
            }
            ModelBody::Gbdt { .. } => self.gbdt_margins(x, usize::MAX),
            ModelBody::Knn { k, mean, std, points, labels } => {
                let q = standardize(x, mean, std);
                let mut d: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((0..NUM_FEATURES).map(|f| (p[f] - q[f]).powi(2)).sum(), i))
                    .collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if *k < d.len() {
                    d.select_nth_unstable_by(*k - 1, cmp);
                }
                let mut votes = [0u32; 3];
                for &(_, i) in &d[..*k] {
                    votes[labels[i].index()] += 1;
                }
                fractions(&votes)
            }
        };
        let class = SignalClass::from_index(argmax(&scores)).expect("class index");
        Prediction { class, scores }
    }

    /// GBDT margins using only the first `rounds` boosting rounds.
    pub fn gbdt_margins(&self, x: &[f64; NUM_FEATURES], rounds: usize) -> [f64; 3] {
        let ModelBody::Gbdt { initial, learning_rate, rounds: trees } = &self.body else {
            return [0.0; 3];
        };
        let mut m = *initial;
        for round in trees.iter().take(rounds) {
            for k in 0..SignalClass::COUNT {
                m[k] += learning_rate * round[k].value(x);
            }
        }
        m
    }

    pub fn predict_all(&self, x: &[[f64; NUM_FEATURES]]) -> Vec<SignalClass> {
        x.par_iter().map(|r| self.predict(r).class).collect()
    }

    fn check(&self) -> Result<(), String> {
        let family_matches = matches!(
            (&self.params, &self.body),
            (Params::DecisionTree { .. }, ModelBody::DecisionTree(_))
                | (Params::RandomForest { .. }, ModelBody::RandomForest(_))
                | (Params::Gbdt { .. }, ModelBody::Gbdt { .. })
                | (Params::Knn { .. }, ModelBody::Knn { .. })
        );
        if !family_matches {
            return Err("parameters and structure belong to different families".into());
        }
        match &self.body {
            ModelBody::DecisionTree(t) => t.check(),
            ModelBody::RandomForest(ts) => {
                if ts.is_empty() {
                    return Err("forest has no trees".into());
                }
                ts.iter().try_for_each(Tree::check)
            }
            ModelBody::Gbdt { initial, learning_rate, rounds } => {
                if !initial.iter().chain([learning_rate]).all(|v| v.is_finite()) {
                    return Err("non-finite boosting constants".into());
                }
                rounds.iter().flatten().try_for_each(Tree::check)
            }
            ModelBody::Knn { k, std, points, labels, .. } => {
                if std.iter().any(|s| !(*s > 0.0)) {
                    return Err("non-positive standard deviation".into());
                }
                if points.len() != labels.len() || *k == 0 || *k > points.len() {
                    return Err("inconsistent neighbour set".into());
                }
                Ok(())
            }
        }
    }

    /// Container: magic, format version byte, little-endian u64 payload
    /// length, JSON payload, SHA-256 of the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("model serializes");
        let mut out = Vec::with_capacity(payload.len() + 45);
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_FORMAT_VERSION);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MlError> {
        let corrupt = |m: String| MlError::CorruptModel(m);
        if bytes.len() < 13 || &bytes[..4] != MODEL_MAGIC {
            return Err(corrupt("not a model file".into()));
        }
        if bytes[4] != MODEL_FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                bytes[4]
            )));
        }
        let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
        let body = &bytes[13..];
        if len > body.len() as u64 || body.len() as u64 - len != 32 {
            return Err(corrupt(format!("length field {len} does not match {} payload bytes", body.len())));
        }
        let (payload, digest) = body.split_at(len as usize);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(corrupt("checksum mismatch".into()));
        }
        let model: TrainedModel = serde_json::from_slice(payload).map_err(|e| corrupt(e.to_string()))?;
        model.check().map_err(corrupt)?;
        Ok(model)
    }
}
