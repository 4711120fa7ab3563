//! Concept detection from the conditioned latents, and separation statistics.
//!
//! Detection only runs the encoder; the input activations are never
//! reconstructed or modified.

use ndarray::{Array2, ArrayView2};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gsae::GsaeModel;
use crate::store::{ActivationDataset, LABEL_THRESHOLD};

pub const DEFAULT_DETECTION_THRESHOLD: f32 = 0.5;

/// Mann–Whitney U statistic of `present` over `absent`, its two-sided
/// normal-approximation p-value, and the rank-biserial correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    #[serde(rename = "U")]
    pub u: f64,
    pub p_value: f64,
    pub rbc: f64,
}

/// `U = #{a > b} + 0.5 #{a == b}` over present x absent pairs, computed from
/// midranks; `rbc = 2U / (n1 n2) - 1`.
pub fn mann_whitney_rbc(present: &[f64], absent: &[f64]) -> Result<Separation> {
    let (n1, n2) = (present.len(), absent.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::validation(format!(
            "Mann-Whitney needs two non-empty groups, got {n1} and {n2}"
        )));
    }
    if present.iter().chain(absent).any(|v| v.is_nan()) {
        return Err(Error::validation("NaN in Mann-Whitney input"));
    }
    let mut pooled: Vec<(f64, bool)> = present
        .iter()
        .map(|&v| (v, true))
        .chain(absent.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("no NaN"));

    let n = pooled.len();
    let mut rank_sum_present = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank
        let midrank = (i + 1 + j) as f64 / 2.0;
        let in_present = pooled[i..j].iter().filter(|p| p.1).count();
        rank_sum_present += midrank * in_present as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let u = rank_sum_present - n1f * (n1f + 1.0) / 2.0;
    let rbc = 2.0 * u / (n1f * n2f) - 1.0;

    let nf = n as f64;
    let mean = n1f * n2f / 2.0;
    let var = n1f * n2f / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(Separation { u, p_value, rbc })
}

/// Per-concept statistics of a detection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptDetection {
    pub concept: String,
    pub n_present: usize,
    pub n_absent: usize,
    /// `None` when either group is empty.
    #[serde(flatten)]
    pub separation: Option<Separation>,
    pub threshold: f32,
    /// Agreement of the thresholded decision with the binarised label.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    /// `N x (c+1)` conditioned activations.
    pub activations: Array2<f32>,
    /// `activations >= threshold`
    pub decisions: Array2<bool>,
    pub threshold: f32,
    pub concepts: Vec<ConceptDetection>,
}

/// Reads the conditioned block of the encoder on every row.
pub fn conditioned_activations(
    model: &GsaeModel<f32>,
    x: ArrayView2<'_, f32>,
) -> Result<Array2<f32>> {
    if model.n_conditioned == 0 {
        return Err(Error::config(
            "detection needs a guided model with conditioned latents",
        ));
    }
    let latents = model.encode(x)?;
    Ok(latents.conditioned(model.n_conditioned).to_owned())
}

/// Thresholds the conditioned latents and scores them against the dataset labels.
pub fn detect_concepts(
    model: &GsaeModel<f32>,
    dataset: &ActivationDataset,
    threshold: f32,
) -> Result<DetectionReport> {
    let activations = conditioned_activations(model, dataset.activations.view())?;
    let decisions = activations.mapv(|f| f >= threshold);
    let shared = model.n_conditioned.min(dataset.n_concepts());
    let mut concepts = Vec::with_capacity(shared);
    for j in 0..shared {
        let labels = dataset.labels.column(j);
        let mut present = Vec::new();
        let mut absent = Vec::new();
        let mut hits = 0usize;
        for (r, &y) in labels.iter().enumerate() {
            let truth = y >= LABEL_THRESHOLD;
            let f = activations[[r, j]] as f64;
            if truth {
                present.push(f);
            } else {
                absent.push(f);
            }
            hits += (decisions[[r, j]] == truth) as usize;
        }
        let separation = if present.is_empty() || absent.is_empty() {
            None
        } else {
            Some(mann_whitney_rbc(&present, &absent)?)
        };
        concepts.push(ConceptDetection {
            concept: dataset.concept_names[j].clone(),
            n_present: present.len(),
            n_absent: absent.len(),
            separation,
            threshold,
            accuracy: if labels.is_empty() {
                0.0
            } else {
                hits as f64 / labels.len() as f64
            },
        });
    }
    Ok(DetectionReport {
        activations,
        decisions,
        threshold,
        concepts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn model_with_h(h: f32) -> GsaeModel<f32> {
        // one input, two latents; latent 0 is conditioned and reads h = b_enc[0] at x = 0
        GsaeModel {
            w_enc: array![[1.0], [0.0]],
            b_enc: Array1::from(vec![h, 0.0]),
            w_dec: array![[1.0, 0.0]],
            b_dec: Array1::zeros(1),
            k: 1,
            n_conditioned: 1,
        }
    }

    fn one_row(label: f32) -> ActivationDataset {
        ActivationDataset::new(array![[0.0f32]], array![[label]], vec!["c".into()]).unwrap()
    }

    #[test]
    fn threshold_decisions() {
        // sigmoid(2.1972246) = 0.9
        let r = detect_concepts(&model_with_h(2.197_224_6), &one_row(1.0), 0.5).unwrap();
        assert!(r.decisions[[0, 0]]);
        let r = detect_concepts(&model_with_h(0.0), &one_row(1.0), 0.5).unwrap();
        assert_eq!(r.activations[[0, 0]], 0.5);
        assert!(r.decisions[[0, 0]]);
        assert!(r.concepts[0].separation.is_none());
    }

    #[test]
    fn vanilla_model_rejected() {
        let mut m = model_with_h(0.0);
        m.n_conditioned = 0;
        assert!(matches!(
            detect_concepts(&m, &one_row(0.0), 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn pair_counting_examples() {
        let s = mann_whitney_rbc(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.u, s.rbc), (9.0, 1.0));
        let s = mann_whitney_rbc(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!((s.u, s.rbc), (0.0, -1.0));
        let s = mann_whitney_rbc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.u, s.rbc), (4.5, 0.0));
        assert!(s.p_value > 0.9);
        assert!(mann_whitney_rbc(&[], &[1.0]).is_err());
    }

    #[test]
    fn p_value_matches_reference() {
        // scipy.stats.mannwhitneyu([1..10], [6..15], method="asymptotic") -> U=12.5, p=0.0050754
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b: Vec<f64> = (6..=15).map(f64::from).collect();
        let s = mann_whitney_rbc(&a, &b).unwrap();
        assert_eq!(s.u, 12.5);
        assert!(
            (s.p_value - 0.005_075_392_315).abs() < 1e-9,
            "{}",
            s.p_value
        );
    }

    #[test]
    fn all_tied_gives_unit_p_value() {
        let s = mann_whitney_rbc(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(s.p_value, 1.0);
        assert_eq!(s.rbc, 0.0);
    }
}
