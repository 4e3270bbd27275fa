use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, unit_rng, Dataset, Family, MlError, Params};
use crate::features::SignalClass;

/// Named value lists; the search enumerates their Cartesian product with
/// names in sorted order and the last name varying fastest. Parameters not
/// listed keep the family default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub family: Family,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl HyperGrid {
    pub fn points(&self) -> Result<Vec<Params>, MlError> {
        if self.params.values().any(Vec::is_empty) {
            return Err(MlError::InvalidGrid("a parameter has no values".into()));
        }
        let mut points = vec![BTreeMap::new()];
        for (name, values) in &self.params {
            points = points
                .into_iter()
                .flat_map(|p: BTreeMap<String, f64>| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), *v);
                        q
                    })
                })
                .collect();
        }
        points
            .iter()
            .map(|p| {
                Params::from_map(self.family, p)
                    .and_then(|q| q.validate_ranges().map(|()| q))
                    .map_err(|e| MlError::InvalidGrid(e.to_string()))
            })
            .collect()
    }
}

pub fn default_grid(family: Family) -> HyperGrid {
    let params: Vec<(&str, Vec<f64>)> = match family {
        Family::DecisionTree => vec![("max_depth", vec![3.0, 5.0, 8.0, 12.0]), ("min_samples_leaf", vec![1.0, 5.0, 20.0])],
        Family::RandomForest => vec![("n_trees", vec![50.0, 200.0]), ("max_depth", vec![8.0, 12.0])],
        Family::Gbdt => vec![
            ("n_rounds", vec![50.0, 200.0]),
            ("learning_rate", vec![0.05, 0.1, 0.3]),
            ("max_depth", vec![2.0, 3.0]),
        ],
        Family::Knn => vec![("k", vec![1.0, 5.0, 15.0, 45.0])],
    };
    HyperGrid {
        family,
        params: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

/// Fold index per row: rows of each class are shuffled, then dealt to folds
/// round-robin.
pub fn stratified_folds(labels: &[SignalClass], folds: usize, seed: u64) -> Vec<usize> {
    let mut assignment = vec![0; labels.len()];
    let mut rng = unit_rng(seed, u64::MAX);
    for class in SignalClass::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub params: Params,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Params,
    pub table: Vec<CvRow>,
}

impl SearchResult {
    /// CSV with one row per grid point: parameters, fold scores, mean.
    pub fn to_csv(&self) -> String {
        let folds = self.table.first().map_or(0, |r| r.fold_accuracy.len());
        let mut out = String::from("params");
        for f in 0..folds {
            out.push_str(&format!(",fold{}", f + 1));
        }
        out.push_str(",mean\n");
        for row in &self.table {
            let params: Vec<String> = row.params.to_map().iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&params.join(" "));
            for a in &row.fold_accuracy {
                out.push_str(&format!(",{a:.6}"));
            }
            out.push_str(&format!(",{:.6}\n", row.mean_accuracy));
        }
        out
    }
}

/// Stratified k-fold grid search scored by held-out accuracy. The best
/// point has the highest mean accuracy, the earliest one on ties.
pub fn grid_search_cv(grid: &HyperGrid, data: &Dataset, folds: usize, seed: u64) -> Result<SearchResult, MlError> {
    if folds < 2 {
        return Err(MlError::InvalidGrid(format!("{folds} folds; at least 2 needed")));
    }
    if data.len() < folds {
        return Err(MlError::TooFewSamples { rows: data.len(), folds });
    }
    let points = grid.points()?;
    let labels = data.labels();
    let assignment = stratified_folds(&labels, folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| {
            let (valid, fit): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| assignment[i] == f);
            (data.subset(&fit), data.subset(&valid))
        })
        .collect();
    for p in &points {
        let smallest = splits.iter().map(|(fit, _)| fit.len()).min().unwrap_or(0);
        p.validate(smallest).map_err(|e| MlError::InvalidGrid(format!("{p}: {e}")))?;
    }

    let units: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..folds).map(move |f| (p, f))).collect();
    let scores: Vec<f64> = units
        .par_iter()
        .enumerate()
        .map(|(u, &(p, f))| {
            let (fit, valid) = &splits[f];
            let unit_seed = seed.wrapping_add((u as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let model = train(&points[p], fit, unit_seed)?;
            if valid.is_empty() {
                return Ok(0.0);
            }
            let predicted = model.predict_all(&valid.matrix());
            let correct = predicted.iter().zip(valid.labels()).filter(|(a, b)| **a == *b).count();
            Ok(correct as f64 / valid.len() as f64)
        })
        .collect::<Result<_, MlError>>()?;

    let table: Vec<CvRow> = points
        .iter()
        .enumerate()
        .map(|(p, params)| {
            let fold_accuracy = scores[p * folds..(p + 1) * folds].to_vec();
            let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
            CvRow { params: *params, fold_accuracy, mean_accuracy }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_accuracy > table[best].mean_accuracy {
            best = i;
        }
    }
    Ok(SearchResult { best: table[best].params, table })
}
