//! Binary Gini decision trees over latent features.
//!
//! Trees are grown level by level from a per-feature presort, so each level
//! costs one linear sweep per feature. Candidate thresholds are midpoints of
//! consecutive distinct values within a node; rows with `value <= threshold`
//! go left. Split quality is compared in exact integer arithmetic, with ties
//! going to the lower feature index and then the lower threshold.

use std::cmp::Ordering;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Gini impurity `sum_k p_k (1 - p_k)` of a two-class node.
pub fn gini_impurity(class_counts: (usize, usize)) -> Result<f64> {
    let (a, b) = class_counts;
    let n = a + b;
    if n == 0 {
        return Err(Error::validation("Gini impurity of an empty node"));
    }
    let (pa, pb) = (a as f64 / n as f64, b as f64 / n as f64);
    Ok(pa * (1.0 - pa) + pb * (1.0 - pb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Arena index of the `<= threshold` child.
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNode {
    pub depth: usize,
    /// (negatives, positives)
    pub class_counts: (usize, usize),
    pub gini: f64,
    pub majority_class: bool,
    /// `None` for leaves.
    pub split: Option<Split>,
}

/// Tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl DecisionTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Root split feature, if the root is not a leaf.
    pub fn root_feature(&self) -> Option<usize> {
        self.root().split.map(|s| s.feature)
    }

    /// Depth of the deepest node (0 for a single leaf).
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Prediction of the tree cut off at `depth`: nodes at that depth answer
    /// with their majority class.
    pub fn predict_truncated(&self, row: ArrayView1<'_, f32>, depth: usize) -> bool {
        let mut node = &self.nodes[0];
        while let Some(split) = node.split {
            if node.depth >= depth {
                break;
            }
            node = if row[split.feature] as f64 <= split.threshold {
                &self.nodes[split.left]
            } else {
                &self.nodes[split.right]
            };
        }
        node.majority_class
    }

    /// Fraction of rows whose truncated prediction matches the label.
    pub fn accuracy_truncated(&self, x: ArrayView2<'_, f32>, y: &[bool], depth: usize) -> f64 {
        let hits = x
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(row, &label)| self.predict_truncated(row.view(), depth) == label)
            .count();
        hits as f64 / y.len() as f64
    }
}

/// Maximises `(l0^2 + l1^2)/nl + (r0^2 + r1^2)/nr`, which is equivalent to
/// minimising the weighted child impurity `G`.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(left: (u64, u64), right: (u64, u64)) -> Self {
        let nl = (left.0 + left.1) as u128;
        let nr = (right.0 + right.1) as u128;
        let pl = (left.0 as u128).pow(2) + (left.1 as u128).pow(2);
        let pr = (right.0 as u128).pow(2) + (right.1 as u128).pow(2);
        Self {
            num: pl * nr + pr * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        match (
            self.num.checked_mul(other.den),
            other.num.checked_mul(self.den),
        ) {
            (Some(a), Some(b)) => a.cmp(&b),
            _ => (self.num as f64 / self.den as f64)
                .partial_cmp(&(other.num as f64 / other.den as f64))
                .unwrap_or(Ordering::Equal),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    score: SplitScore,
}

fn counts_of(rows: impl Iterator<Item = bool>) -> (u64, u64) {
    rows.fold((0, 0), |(n, p), y| if y { (n, p + 1) } else { (n + 1, p) })
}

fn make_node(depth: usize, counts: (u64, u64)) -> TreeNode {
    let cc = (counts.0 as usize, counts.1 as usize);
    TreeNode {
        depth,
        class_counts: cc,
        gini: gini_impurity(cc).expect("non-empty node"),
        majority_class: cc.1 > cc.0,
        split: None,
    }
}

fn splittable(node: &TreeNode, params: &TreeParams) -> bool {
    let (a, b) = node.class_counts;
    a > 0 && b > 0 && node.depth < params.max_depth && a + b >= params.min_samples_split.max(2)
}

/// Fits a Gini tree on `x` (`B x m`) and binary labels, skipping every
/// feature flagged in `excluded`.
pub fn fit_tree(
    x: ArrayView2<'_, f32>,
    y: &[bool],
    params: &TreeParams,
    excluded: &[bool],
) -> Result<DecisionTree> {
    let (n, m) = x.dim();
    if y.len() != n {
        return Err(Error::validation(format!(
            "{} labels for {n} rows",
            y.len()
        )));
    }
    if excluded.len() != m {
        return Err(Error::validation(format!(
            "exclusion mask has {} entries for {m} features",
            excluded.len()
        )));
    }
    let features: Vec<usize> = (0..m).filter(|&j| !excluded[j]).collect();
    if features.is_empty() {
        return Err(Error::config("every feature is excluded"));
    }
    let root_counts = counts_of(y.iter().copied());
    if root_counts.0 == 0 || root_counts.1 == 0 {
        return Err(Error::validation("tree fitting needs both classes present"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite latent value"));
    }

    let presorted: Vec<Vec<u32>> = features
        .par_iter()
        .map(|&j| {
            let col = x.column(j);
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut nodes = vec![make_node(0, root_counts)];
    // node_slot[row] = position of the row's node in `frontier`, or NONE
    const NONE: u32 = u32::MAX;
    let mut frontier: Vec<usize> = Vec::new();
    let mut node_slot = vec![NONE; n];
    if splittable(&nodes[0], params) {
        frontier.push(0);
        node_slot.fill(0);
    }

    while !frontier.is_empty() {
        let slots = frontier.len();
        let totals: Vec<(u64, u64)> = frontier
            .iter()
            .map(|&id| {
                let c = nodes[id].class_counts;
                (c.0 as u64, c.1 as u64)
            })
            .collect();

        let per_feature: Vec<Vec<Option<Candidate>>> = features
            .par_iter()
            .zip(presorted.par_iter())
            .map(|(&j, order)| {
                let col = x.column(j);
                let mut left = vec![(0u64, 0u64); slots];
                let mut last: Vec<Option<f32>> = vec![None; slots];
                let mut best: Vec<Option<Candidate>> = vec![None; slots];
                for &r in order {
                    let slot = node_slot[r as usize];
                    if slot == NONE {
                        continue;
                    }
                    let s = slot as usize;
                    let v = col[r as usize];
                    if let Some(prev) = last[s] {
                        if v > prev {
                            let l = left[s];
                            let right = (totals[s].0 - l.0, totals[s].1 - l.1);
                            let score = SplitScore::new(l, right);
                            if best[s].is_none_or(|b| score.cmp(&b.score) == Ordering::Greater) {
                                best[s] = Some(Candidate {
                                    feature: j,
                                    threshold: (prev as f64 + v as f64) / 2.0,
                                    score,
                                });
                            }
                        }
                    }
                    if y[r as usize] {
                        left[s].1 += 1;
                    } else {
                        left[s].0 += 1;
                    }
                    last[s] = Some(v);
                }
                best
            })
            .collect();

        // reduce in feature order; only a strictly better score displaces the incumbent
        let mut chosen: Vec<Option<Candidate>> = vec![None; slots];
        for feature_best in &per_feature {
            for (s, cand) in feature_best.iter().enumerate() {
                if let Some(c) = cand {
                    if chosen[s].is_none_or(|b| c.score.cmp(&b.score) == Ordering::Greater) {
                        chosen[s] = Some(*c);
                    }
                }
            }
        }

        // child slots for the next level
        let mut child_counts: Vec<((u64, u64), (u64, u64))> = vec![((0, 0), (0, 0)); slots];
        for r in 0..n {
            let slot = node_slot[r];
            if slot == NONE {
                continue;
            }
            if let Some(c) = chosen[slot as usize] {
                let goes_left = x[[r, c.feature]] as f64 <= c.threshold;
                let side = if goes_left {
                    &mut child_counts[slot as usize].0
                } else {
                    &mut child_counts[slot as usize].1
                };
                if y[r] {
                    side.1 += 1;
                } else {
                    side.0 += 1;
                }
            }
        }
        let mut next_frontier = Vec::new();
        let mut next_slot_of = vec![(NONE, NONE); slots];
        for (s, &id) in frontier.iter().enumerate() {
            let Some(c) = chosen[s] else { continue };
            let depth = nodes[id].depth + 1;
            let (lc, rc) = child_counts[s];
            let left = nodes.len();
            nodes.push(make_node(depth, lc));
            let right = nodes.len();
            nodes.push(make_node(depth, rc));
            nodes[id].split = Some(Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
            });
            let mut slot_for = |node: usize| {
                if splittable(&nodes[node], params) {
                    next_frontier.push(node);
                    (next_frontier.len() - 1) as u32
                } else {
                    NONE
                }
            };
            next_slot_of[s] = (slot_for(left), slot_for(right));
        }
        for r in 0..n {
            let slot = node_slot[r];
            if slot == NONE {
                continue;
            }
            let s = slot as usize;
            node_slot[r] = match chosen[s] {
                Some(c) if (x[[r, c.feature]] as f64) <= c.threshold => next_slot_of[s].0,
                Some(_) => next_slot_of[s].1,
                None => NONE,
            };
        }
        frontier = next_frontier;
    }

    Ok(DecisionTree { nodes })
}
