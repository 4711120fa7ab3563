//! Feature monosemanticity scoring.
//!
//! For one concept, a Gini tree over all latents gives the feature capacity
//! (`accs_0`, the eval accuracy of its root stump) and the cumulative
//! capacity curve (`accs_cum`, eval accuracy of the tree truncated at each
//! depth). Repeatedly refitting with the previous roots excluded gives the
//! ablation curve `accs`. The local score measures the accuracy drop after
//! removing the top `p` features, the global score penalises the accuracy
//! gained by adding features beyond the first, and `FMS@p` weights their
//! mean by `accs_0` and averages over concepts.

mod tree;

pub use tree::{fit_tree, gini_impurity, DecisionTree, Split, TreeNode, TreeParams};

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{oversample_indices, stratified_indices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeanMode {
    #[default]
    Arithmetic,
    Harmonic,
}

impl std::str::FromStr for MeanMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "harmonic" => Ok(Self::Harmonic),
            other => Err(Error::config(format!(
                "unknown mean mode {other:?} (expected arithmetic or harmonic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmsConfig {
    pub p_values: Vec<usize>,
    /// `accs_cum` counts as saturated at `1 - epsilon`.
    pub epsilon: f64,
    pub max_depth: usize,
    /// Upper bound on the length of the ablation curve.
    pub max_ablation_rounds: usize,
    /// Ablation stops once the last accuracy is within this band of 0.5.
    pub convergence_band: f64,
    pub mean_mode: MeanMode,
    pub min_samples_split: usize,
    /// Held-out share used for every reported accuracy.
    pub eval_fraction: f64,
    /// Oversample the minority class in both parts so chance level is 0.5.
    pub balance_classes: bool,
    pub seed: u64,
}

impl Default for FmsConfig {
    fn default() -> Self {
        Self {
            p_values: vec![1, 5],
            epsilon: 0.02,
            max_depth: 12,
            max_ablation_rounds: 50,
            convergence_band: 0.02,
            mean_mode: MeanMode::Arithmetic,
            min_samples_split: 2,
            eval_fraction: 0.2,
            balance_classes: true,
            seed: 0,
        }
    }
}

impl FmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::config(format!(
                "epsilon {} must lie in (0, 0.5)",
                self.epsilon
            )));
        }
        if self.p_values.is_empty() || self.p_values.contains(&0) {
            return Err(Error::config(
                "p values must be a non-empty list of positive integers",
            ));
        }
        if self.max_depth == 0 || self.max_ablation_rounds == 0 {
            return Err(Error::config(
                "max depth and ablation rounds must be at least 1",
            ));
        }
        Ok(())
    }

    fn tree_params(&self, max_depth: usize) -> TreeParams {
        TreeParams {
            max_depth,
            min_samples_split: self.min_samples_split,
        }
    }
}

/// Latents of a set of rows with one concept's binary labels.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub latents: ArrayView2<'a, f32>,
    pub labels: &'a [bool],
}

impl Probe<'_> {
    fn check(&self, what: &str) -> Result<()> {
        if self.latents.nrows() != self.labels.len() {
            return Err(Error::validation(format!(
                "{what}: {} latent rows but {} labels",
                self.latents.nrows(),
                self.labels.len()
            )));
        }
        let pos = self.labels.iter().filter(|&&b| b).count();
        if pos == 0 || pos == self.labels.len() {
            return Err(Error::validation(format!(
                "{what}: labels must contain both classes ({pos} of {} positive)",
                self.labels.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmsCurves {
    pub accs_0: f64,
    /// Root-stump eval accuracy after removing the top 0, 1, 2, ... features.
    pub accs: Vec<f64>,
    /// Eval accuracy of the first tree truncated at depths `1..=max_depth`.
    pub accs_cum: Vec<f64>,
    pub removed_features: Vec<usize>,
    pub n_star: usize,
    pub n_star_reached: bool,
}

/// Eval accuracy of `tree` truncated at each depth `1..=max_depth`.
pub fn cumulative_capacity(
    tree: &DecisionTree,
    eval: Probe<'_>,
    max_depth: usize,
) -> Result<Vec<f64>> {
    if eval.labels.is_empty() || eval.latents.nrows() != eval.labels.len() {
        return Err(Error::validation(
            "cumulative capacity needs a non-empty eval set",
        ));
    }
    Ok((1..=max_depth)
        .map(|depth| tree.accuracy_truncated(eval.latents, eval.labels, depth))
        .collect())
}

/// First depth (1-based) where `accs_cum` reaches `1 - epsilon`, or the last
/// depth with `false` when it never does.
pub fn saturation_depth(accs_cum: &[f64], epsilon: f64) -> (usize, bool) {
    match accs_cum.iter().position(|&a| a >= 1.0 - epsilon) {
        Some(i) => (i + 1, true),
        None => (accs_cum.len(), false),
    }
}

/// Root-ablation loop: trees refitted on `train` with all earlier roots
/// excluded, each root stump scored on `eval`.
pub fn ablation_curve(train: Probe<'_>, eval: Probe<'_>, config: &FmsConfig) -> Result<FmsCurves> {
    config.validate()?;
    train.check("train set")?;
    eval.check("eval set")?;
    let m = train.latents.ncols();
    if eval.latents.ncols() != m {
        return Err(Error::validation("train and eval latents differ in width"));
    }

    let first = fit_tree(
        train.latents,
        train.labels,
        &config.tree_params(config.max_depth),
        &vec![false; m],
    )?;
    let Some(root) = first.root_feature() else {
        return Err(Error::Degenerate(
            "no latent feature varies, so no tree root exists".into(),
        ));
    };
    let accs_cum = cumulative_capacity(&first, eval, config.max_depth)?;
    let accs_0 = accs_cum[0];
    let (n_star, n_star_reached) = saturation_depth(&accs_cum, config.epsilon);

    let mut excluded = vec![false; m];
    excluded[root] = true;
    let mut accs = vec![accs_0];
    let mut removed = vec![root];
    let stump = config.tree_params(1);
    let converged = |accs: &[f64]| (accs[accs.len() - 1] - 0.5).abs() <= config.convergence_band;
    while accs.len() < config.max_ablation_rounds && !converged(&accs) {
        if excluded.iter().all(|&e| e) {
            break;
        }
        let tree = fit_tree(train.latents, train.labels, &stump, &excluded)?;
        let Some(root) = tree.root_feature() else {
            break;
        };
        accs.push(tree.accuracy_truncated(eval.latents, eval.labels, 1));
        excluded[root] = true;
        removed.push(root);
    }

    Ok(FmsCurves {
        accs_0,
        accs,
        accs_cum,
        removed_features: removed,
        n_star,
        n_star_reached,
    })
}

/// `clamp(2 (accs_0 - accs_p), 0, 1)`.
pub fn fms_local(accs_0: f64, accs_p: f64) -> f64 {
    (2.0 * (accs_0 - accs_p)).clamp(0.0, 1.0)
}

/// `clamp(1 - A(n)/n, 0, 1)` with `A(n) = sum_{i<=n} (accs_cum_i - accs_0)`.
pub fn fms_global(curves: &FmsCurves, epsilon: f64) -> Result<f64> {
    if curves.accs_cum.is_empty() {
        return Err(Error::validation("empty cumulative capacity curve"));
    }
    let (n, _) = saturation_depth(&curves.accs_cum, epsilon);
    let gain: f64 = curves.accs_cum[..n]
        .iter()
        .map(|&a| a - curves.accs_0)
        .sum();
    Ok((1.0 - gain / n as f64).clamp(0.0, 1.0))
}

/// Ablated accuracy after removing `p` features; when ablation stopped
/// earlier the last recorded accuracy stands in.
pub fn accs_at(curves: &FmsCurves, p: usize) -> f64 {
    curves.accs[p.min(curves.accs.len() - 1)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConceptScore {
    pub accs_0: f64,
    pub local: f64,
    pub global: f64,
}

impl ConceptScore {
    /// Capacity-weighted mean of the local and global scores for one concept.
    pub fn combined(&self, mode: MeanMode) -> f64 {
        let mean = match mode {
            MeanMode::Arithmetic => (self.local + self.global) / 2.0,
            MeanMode::Harmonic => {
                let s = self.local + self.global;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * self.local * self.global / s
                }
            }
        };
        self.accs_0 * mean
    }
}

/// `FMS@p` over a set of concepts: plain mean of the per-concept combined scores.
pub fn fms_aggregate(per_concept: &[ConceptScore], mode: MeanMode) -> Result<f64> {
    if per_concept.is_empty() {
        return Err(Error::validation("FMS aggregate over zero concepts"));
    }
    Ok(per_concept.iter().map(|c| c.combined(mode)).sum::<f64>() / per_concept.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmsReport {
    pub concept: String,
    pub accs_0: f64,
    pub accs: Vec<f64>,
    pub accs_cum: Vec<f64>,
    pub removed_features: Vec<usize>,
    pub n_star: usize,
    pub n_star_reached: bool,
    pub fms_local: BTreeMap<usize, f64>,
    pub fms_global: f64,
    pub fms_at: BTreeMap<usize, f64>,
    pub mean_mode: MeanMode,
}

impl FmsReport {
    pub fn from_curves(
        concept: impl Into<String>,
        curves: FmsCurves,
        config: &FmsConfig,
    ) -> Result<Self> {
        let global = fms_global(&curves, config.epsilon)?;
        let mut fms_local = BTreeMap::new();
        let mut fms_at = BTreeMap::new();
        for &p in &config.p_values {
            let local = fms_local_at(&curves, p);
            fms_local.insert(p, local);
            let score = ConceptScore {
                accs_0: curves.accs_0,
                local,
                global,
            };
            fms_at.insert(p, score.combined(config.mean_mode));
        }
        Ok(Self {
            concept: concept.into(),
            accs_0: curves.accs_0,
            accs: curves.accs,
            accs_cum: curves.accs_cum,
            removed_features: curves.removed_features,
            n_star: curves.n_star,
            n_star_reached: curves.n_star_reached,
            fms_local,
            fms_global: global,
            fms_at,
            mean_mode: config.mean_mode,
        })
    }

    pub fn score(&self, p: usize) -> Option<ConceptScore> {
        Some(ConceptScore {
            accs_0: self.accs_0,
            local: *self.fms_local.get(&p)?,
            global: self.fms_global,
        })
    }

    /// The feature the first tree put at its root.
    pub fn root_feature(&self) -> usize {
        self.removed_features[0]
    }
}

fn fms_local_at(curves: &FmsCurves, p: usize) -> f64 {
    fms_local(curves.accs_0, accs_at(curves, p))
}

/// Splits, optionally balances, and scores one concept.
pub fn measure_concept(
    latents: ArrayView2<'_, f32>,
    labels: &[bool],
    concept: &str,
    config: &FmsConfig,
) -> Result<FmsReport> {
    config.validate()?;
    Probe { latents, labels }.check(concept)?;
    let (mut train_rows, mut eval_rows) =
        stratified_indices(labels, config.eval_fraction, config.seed)?;
    if config.balance_classes {
        train_rows = rebalance(&train_rows, labels, config.seed.wrapping_add(1))?;
        eval_rows = rebalance(&eval_rows, labels, config.seed.wrapping_add(2))?;
    }
    let pick = |rows: &[usize]| {
        (
            latents.select(Axis(0), rows),
            rows.iter().map(|&r| labels[r]).collect::<Vec<_>>(),
        )
    };
    let (train_x, train_y) = pick(&train_rows);
    let (eval_x, eval_y) = pick(&eval_rows);
    let curves = ablation_curve(
        Probe {
            latents: train_x.view(),
            labels: &train_y,
        },
        Probe {
            latents: eval_x.view(),
            labels: &eval_y,
        },
        config,
    )?;
    FmsReport::from_curves(concept, curves, config)
}

fn rebalance(rows: &[usize], labels: &[bool], seed: u64) -> Result<Vec<usize>> {
    let sub: Vec<bool> = rows.iter().map(|&r| labels[r]).collect();
    Ok(oversample_indices(&sub, seed)?
        .into_iter()
        .map(|i| rows[i])
        .collect())
}

/// Scores for every concept plus the aggregate `FMS@p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FmsSummary {
    pub reports: Vec<FmsReport>,
    pub fms_at: BTreeMap<usize, f64>,
    pub mean_mode: MeanMode,
}

/// Runs [`measure_concept`] for each `(name, labels)` pair; concepts are
/// independent and evaluated in parallel on the current rayon pool.
pub fn measure_concepts(
    latents: ArrayView2<'_, f32>,
    concepts: &[(String, Vec<bool>)],
    config: &FmsConfig,
) -> Result<FmsSummary> {
    let reports = concepts
        .par_iter()
        .map(|(name, labels)| measure_concept(latents, labels, name, config))
        .collect::<Result<Vec<_>>>()?;
    let mut fms_at = BTreeMap::new();
    for &p in &config.p_values {
        let scores: Vec<ConceptScore> = reports.iter().filter_map(|r| r.score(p)).collect();
        fms_at.insert(p, fms_aggregate(&scores, config.mean_mode)?);
    }
    Ok(FmsSummary {
        reports,
        fms_at,
        mean_mode: config.mean_mode,
    })
}
