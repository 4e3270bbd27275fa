//! Dataset assembly (combine, class-balance, stratified split) and accuracy
//! reports with confusion matrices.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::SignalClass;
use crate::ml::{unit_rng, Dataset, TrainedModel};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{class}: {target} rows requested but only {available} available")]
    TargetExceedsClassCount {
        class: SignalClass,
        target: usize,
        available: usize,
    },
    #[error("no {0} rows to balance")]
    MissingClass(SignalClass),
    #[error("split fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("{class}: split leaves {train} training and {test} test rows")]
    DegenerateSplit {
        class: SignalClass,
        train: usize,
        test: usize,
    },
    #[error("test set is empty")]
    EmptyTestSet,
}

/// Rows per class drawn by [`combine_and_balance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceTarget {
    /// The smallest class count of the pool.
    Auto,
    PerClass(usize),
}

/// Pool the sets and draw exactly the same number of rows of each class,
/// uniformly without replacement; the result is shuffled.
pub fn combine_and_balance(sets: &[Dataset], target: BalanceTarget, seed: u64) -> Result<Dataset, EvalError> {
    let pool: Vec<_> = sets.iter().flat_map(|d| d.rows().iter().cloned()).collect();
    let pool = Dataset::new(pool).expect("rows come from valid datasets");
    let mut by_class: [Vec<usize>; 3] = Default::default();
    for i in 0..pool.len() {
        by_class[pool.label(i).index()].push(i);
    }
    let target = match target {
        BalanceTarget::PerClass(t) => t,
        BalanceTarget::Auto => by_class.iter().map(Vec::len).min().unwrap_or(0),
    };
    for class in SignalClass::ALL {
        let available = by_class[class.index()].len();
        if available == 0 {
            return Err(EvalError::MissingClass(class));
        }
        if target > available {
            return Err(EvalError::TargetExceedsClassCount { class, target, available });
        }
    }
    let mut rng = unit_rng(seed, 0);
    let mut chosen = Vec::with_capacity(3 * target);
    for members in &by_class {
        let mut picks = index::sample(&mut rng, members.len(), target).into_vec();
        picks.sort_unstable();
        chosen.extend(picks.into_iter().map(|p| members[p]));
    }
    chosen.shuffle(&mut rng);
    Ok(pool.subset(&chosen))
}

/// Stratified disjoint split; `round(fraction * n_class)` rows of each class
/// go to the first set. Row order within each side follows the input.
pub fn split_train_test(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::InvalidFraction(fraction));
    }
    let mut rng = unit_rng(seed, 1);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for class in SignalClass::ALL {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng);
        let n_first = (fraction * members.len() as f64).round() as usize;
        let n_second = members.len() - n_first;
        if n_first == 0 || n_second == 0 {
            return Err(EvalError::DegenerateSplit { class, train: n_first, test: n_second });
        }
        first.extend_from_slice(&members[..n_first]);
        second.extend_from_slice(&members[n_first..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((data.subset(&first), data.subset(&second)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    #[serde(rename = "LOS")]
    pub los: Option<f64>,
    #[serde(rename = "NLOS")]
    pub nlos: Option<f64>,
    #[serde(rename = "LOSNLOS")]
    pub losnlos: Option<f64>,
}

impl PerClass {
    pub fn get(&self, class: SignalClass) -> Option<f64> {
        match class {
            SignalClass::LosOnly => self.los,
            SignalClass::NlosOnly => self.nlos,
            SignalClass::LosNlos => self.losnlos,
        }
    }
}

/// Confusion matrix rows are true classes, columns predictions. Per-class
/// accuracy is the row-normalized diagonal (`None` for an absent class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tag: String,
    pub algorithm: String,
    pub n: usize,
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    pub per_class: PerClass,
}

impl EvaluationReport {
    pub fn from_confusion(tag: &str, algorithm: &str, confusion: [[usize; 3]; 3]) -> Self {
        let n: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..3).map(|i| confusion[i][i]).sum();
        let recall = |i: usize| {
            let row: usize = confusion[i].iter().sum();
            (row > 0).then(|| confusion[i][i] as f64 / row as f64)
        };
        Self {
            tag: tag.to_string(),
            algorithm: algorithm.to_string(),
            n,
            confusion,
            accuracy: if n > 0 { trace as f64 / n as f64 } else { 0.0 },
            per_class: PerClass { los: recall(0), nlos: recall(1), losnlos: recall(2) },
        }
    }

    pub fn class_counts(&self) -> [usize; 3] {
        self.confusion.map(|row| row.iter().sum())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn evaluate(model: &TrainedModel, test: &Dataset, tag: &str) -> Result<EvaluationReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let predicted = model.predict_all(&test.matrix());
    let mut confusion = [[0usize; 3]; 3];
    for (truth, pred) in test.labels().into_iter().zip(predicted) {
        confusion[truth.index()][pred.index()] += 1;
    }
    Ok(EvaluationReport::from_confusion(tag, model.family().name(), confusion))
}

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |a| format!("{:.1}", 100.0 * a))
}

/// Aligned plain-text summary, accuracies in percent.
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut out = format!(
        "{:<8} {:<14} {:>6} {:>8} {:>6} {:>6} {:>8}\n",
        "dataset", "algorithm", "n", "overall", "LOS", "NLOS", "LOSNLOS"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<8} {:<14} {:>6} {:>8} {:>6} {:>6} {:>8}",
            r.tag,
            r.algorithm,
            r.n,
            percent(Some(r.accuracy)),
            percent(r.per_class.los),
            percent(r.per_class.nlos),
            percent(r.per_class.losnlos)
        );
    }
    out
}

/// Grouped-bar CSV: one overall row plus one row per class for each report.
pub fn render_plot_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("dataset,algorithm,class,accuracy\n");
    for r in reports {
        let _ = writeln!(out, "{},{},ALL,{:.6}", r.tag, r.algorithm, r.accuracy);
        for class in SignalClass::ALL {
            if let Some(a) = r.per_class.get(class) {
                let _ = writeln!(out, "{},{},{},{:.6}", r.tag, r.algorithm, class.label(), a);
            }
        }
    }
    out
}
