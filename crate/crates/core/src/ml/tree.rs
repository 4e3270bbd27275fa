use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, NUM_FEATURES};
use crate::features::SignalClass;

/// Binary tree stored in preorder; node 0 is the root. A sample goes left
/// when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node<L> {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(L),
}

/// Per-class training counts reaching a classification leaf.
pub type ClassCounts = [u32; SignalClass::COUNT];

impl<L> Tree<L> {
    pub fn leaf(&self, x: &[f64; NUM_FEATURES]) -> &L {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<L>(t: &Tree<L>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf(_) => 0,
            }
        }
        walk(self, 0)
    }

    pub(crate) fn check(&self) -> Result<(), String> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split { feature, threshold, left, right } = node {
                if *feature >= NUM_FEATURES || !threshold.is_finite() {
                    return Err(format!("node {i}: bad split"));
                }
                // preorder storage makes every child index larger than its parent
                if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                    return Err(format!("node {i}: bad child index"));
                }
            }
        }
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        Ok(())
    }
}

impl Tree<ClassCounts> {
    pub fn predict(&self, x: &[f64; NUM_FEATURES]) -> SignalClass {
        let counts = self.leaf(x);
        SignalClass::from_index(argmax(&counts.map(f64::from))).expect("class index")
    }
}

impl Tree<f64> {
    pub fn value(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        *self.leaf(x)
    }
}

/// `1 - sum(p_i^2)` over the class distribution; `None` for an empty node.
pub fn gini(counts: &[u32]) -> Option<f64> {
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    Some(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Gini decrease of splitting `parent` into `left` and the remainder.
pub fn gini_gain(parent: &[u32; 3], left: &[u32; 3]) -> f64 {
    let right = [parent[0] - left[0], parent[1] - left[1], parent[2] - left[2]];
    let n = parent.iter().sum::<u32>() as f64;
    let nl = left.iter().sum::<u32>() as f64;
    let nr = right.iter().sum::<u32>() as f64;
    gini(parent).unwrap_or(0.0) - nl / n * gini(left).unwrap_or(0.0) - nr / n * gini(&right).unwrap_or(0.0)
}

/// Row indices sorted by each feature (ties by row index).
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &[[f64; NUM_FEATURES]]) -> Self {
        let order = (0..NUM_FEATURES)
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.len() as u32).collect();
                idx.sort_by(|&a, &b| x[a as usize][f].total_cmp(&x[b as usize][f]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }

    /// Sorted lists for a multiset of rows given by per-row multiplicities.
    fn expand(&self, multiplicity: Option<&[u32]>) -> Vec<Vec<u32>> {
        match multiplicity {
            None => self.order.clone(),
            Some(m) => self
                .order
                .iter()
                .map(|o| {
                    let mut v = Vec::with_capacity(o.len());
                    for &r in o {
                        for _ in 0..m[r as usize] {
                            v.push(r);
                        }
                    }
                    v
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; all of them when `None`.
    pub max_features: Option<usize>,
}

/// Split criterion and leaf model.
pub(crate) trait Target {
    type Acc: Clone;
    type Leaf;
    fn empty(&self) -> Self::Acc;
    fn add(&self, acc: &mut Self::Acc, row: u32);
    fn minus(&self, a: &Self::Acc, b: &Self::Acc) -> Self::Acc;
    /// Impurity decrease; larger is better.
    fn gain(&self, parent: &Self::Acc, left: &Self::Acc, right: &Self::Acc) -> f64;
    fn pure(&self, acc: &Self::Acc, rows: &[u32]) -> bool;
    fn leaf(&self, acc: &Self::Acc) -> Self::Leaf;
}

pub(crate) struct Classes<'a>(pub &'a [u8]);

impl Target for Classes<'_> {
    type Acc = ClassCounts;
    type Leaf = ClassCounts;

    fn empty(&self) -> ClassCounts {
        [0; 3]
    }

    fn add(&self, acc: &mut ClassCounts, row: u32) {
        acc[self.0[row as usize] as usize] += 1;
    }

    fn minus(&self, a: &ClassCounts, b: &ClassCounts) -> ClassCounts {
        [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
    }

    fn gain(&self, parent: &ClassCounts, left: &ClassCounts, _right: &ClassCounts) -> f64 {
        gini_gain(parent, left)
    }

    fn pure(&self, acc: &ClassCounts, _rows: &[u32]) -> bool {
        acc.iter().filter(|&&c| c > 0).count() <= 1
    }

    fn leaf(&self, acc: &ClassCounts) -> ClassCounts {
        *acc
    }
}

/// Least-squares regression on real targets.
pub(crate) struct Values<'a>(pub &'a [f64]);

#[derive(Debug, Clone, Copy)]
pub(crate) struct SumCount {
    sum: f64,
    n: u32,
}

impl Target for Values<'_> {
    type Acc = SumCount;
    type Leaf = f64;

    fn empty(&self) -> SumCount {
        SumCount { sum: 0.0, n: 0 }
    }

    fn add(&self, acc: &mut SumCount, row: u32) {
        acc.sum += self.0[row as usize];
        acc.n += 1;
    }

    fn minus(&self, a: &SumCount, b: &SumCount) -> SumCount {
        SumCount { sum: a.sum - b.sum, n: a.n - b.n }
    }

    fn gain(&self, parent: &SumCount, left: &SumCount, right: &SumCount) -> f64 {
        left.sum * left.sum / left.n as f64 + right.sum * right.sum / right.n as f64
            - parent.sum * parent.sum / parent.n as f64
    }

    fn pure(&self, _acc: &SumCount, rows: &[u32]) -> bool {
        let first = self.0[rows[0] as usize];
        rows.iter().all(|&r| self.0[r as usize] == first)
    }

    fn leaf(&self, acc: &SumCount) -> f64 {
        acc.sum / acc.n as f64
    }
}

struct Grower<'a, T: Target, R: Rng> {
    x: &'a [[f64; NUM_FEATURES]],
    target: &'a T,
    params: GrowParams,
    rng: Option<&'a mut R>,
    goes_left: Vec<bool>,
    nodes: Vec<Node<T::Leaf>>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<T: Target, R: Rng> Grower<'_, T, R> {
    fn features(&mut self) -> Vec<usize> {
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < NUM_FEATURES => {
                let mut f = rand::seq::index::sample(rng, NUM_FEATURES, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..NUM_FEATURES).collect(),
        }
    }

    fn best_split(&mut self, sorted: &[Vec<u32>], total: &T::Acc) -> Option<Candidate> {
        let n = sorted[0].len();
        let msl = self.params.min_samples_leaf.max(1);
        let mut best: Option<Candidate> = None;
        for f in self.features() {
            let rows = &sorted[f];
            let mut left = self.target.empty();
            for i in 0..n - 1 {
                self.target.add(&mut left, rows[i]);
                let (lo, hi) = (self.x[rows[i] as usize][f], self.x[rows[i + 1] as usize][f]);
                if lo >= hi || i + 1 < msl || n - i - 1 < msl {
                    continue;
                }
                let right = self.target.minus(total, &left);
                let gain = self.target.gain(total, &left, &right);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi || !threshold.is_finite() {
                        threshold = lo;
                    }
                    best = Some(Candidate { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let mut total = self.target.empty();
        for &r in &sorted[0] {
            self.target.add(&mut total, r);
        }
        let id = self.nodes.len();
        let n = sorted[0].len();
        let splittable = depth < self.params.max_depth
            && n >= 2 * self.params.min_samples_leaf.max(1)
            && !self.target.pure(&total, &sorted[0]);
        let split = if splittable { self.best_split(&sorted, &total) } else { None };
        let Some(split) = split else {
            self.nodes.push(Node::Leaf(self.target.leaf(&total)));
            return id;
        };

        for &r in &sorted[split.feature] {
            self.goes_left[r as usize] = self.x[r as usize][split.feature] <= split.threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(NUM_FEATURES), Vec::with_capacity(NUM_FEATURES));
        for rows in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = rows.into_iter().partition(|&r| self.goes_left[r as usize]);
            left.push(l);
            right.push(r);
        }
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        if let Node::Split { left, right, .. } = &mut self.nodes[id] {
            *left = l;
            *right = r;
        }
        id
    }
}

/// Grow a CART tree on the rows with nonzero multiplicity (all rows when
/// `multiplicity` is `None`).
pub(crate) fn grow_tree<T: Target, R: Rng>(
    x: &[[f64; NUM_FEATURES]],
    presorted: &Presorted,
    multiplicity: Option<&[u32]>,
    target: &T,
    params: GrowParams,
    rng: Option<&mut R>,
) -> Tree<T::Leaf> {
    let sorted = presorted.expand(multiplicity);
    let mut grower = Grower {
        x,
        target,
        params,
        rng,
        goes_left: vec![false; x.len()],
        nodes: Vec::new(),
    };
    grower.grow(sorted, 0);
    Tree { nodes: grower.nodes }
}
