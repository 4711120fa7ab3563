//! Decoder-column steering.
//!
//! For each target concept `i`, the decoder column `D_i` is rescaled to the
//! norm of the activation (`beta_i = ||x|| / ||D_i||`), weighted by a
//! presence-dependent `gamma_i`, scaled by `alpha_i` and added to `x`.
//! `gamma_i` is read from one encoder pass over the unsteered `x`.

use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gsae::GsaeModel;
use crate::store::ActivationDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `gamma = 1 - f` when increasing, `gamma = f` when decreasing.
    Balanced,
    ConstantOne,
}

impl FromStr for GammaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "one" | "constant_one" => Ok(Self::ConstantOne),
            other => Err(Error::config(format!(
                "unknown gamma mode {other:?} (expected balanced or one)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteeringTarget {
    pub concept: usize,
    pub direction: Direction,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringConfig {
    pub targets: Vec<SteeringTarget>,
    pub gamma_mode: GammaMode,
}

impl SteeringConfig {
    /// Constant gamma for a single target, balanced gamma for several.
    pub fn new(targets: Vec<SteeringTarget>) -> Self {
        let gamma_mode = if targets.len() > 1 {
            GammaMode::Balanced
        } else {
            GammaMode::ConstantOne
        };
        Self {
            targets,
            gamma_mode,
        }
    }

    /// Parses `"+0:0.5,-2:1"`: the sign selects the direction and the sign of
    /// the applied strength, the magnitude defaults to 1.
    pub fn parse_targets(list: &str) -> Result<Vec<SteeringTarget>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|entry| {
                let bad = || {
                    Error::config(format!(
                        "bad steering target {entry:?}; expected +i[:alpha] or -i[:alpha]"
                    ))
                };
                let (direction, rest) = if let Some(rest) = entry.strip_prefix('+') {
                    (Direction::Increase, rest)
                } else if let Some(rest) = entry
                    .strip_prefix('-')
                    .or_else(|| entry.strip_prefix('\u{2212}'))
                {
                    (Direction::Decrease, rest)
                } else {
                    return Err(bad());
                };
                let (index, magnitude) = match rest.split_once(':') {
                    Some((i, a)) => (i, a.parse::<f64>().map_err(|_| bad())?),
                    None => (rest, 1.0),
                };
                let concept = index.parse::<usize>().map_err(|_| bad())?;
                if !magnitude.is_finite() {
                    return Err(bad());
                }
                let alpha = match direction {
                    Direction::Increase => magnitude.abs(),
                    Direction::Decrease => -magnitude.abs(),
                };
                Ok(SteeringTarget {
                    concept,
                    direction,
                    alpha,
                })
            })
            .collect()
    }

    pub fn validate(&self, n_conditioned: usize) -> Result<()> {
        let mut seen = vec![false; n_conditioned];
        for t in &self.targets {
            if t.concept >= n_conditioned {
                return Err(Error::validation(format!(
                    "steering target {} is not one of the {n_conditioned} conditioned latents",
                    t.concept
                )));
            }
            if std::mem::replace(&mut seen[t.concept], true) {
                return Err(Error::validation(format!(
                    "concept {} targeted more than once",
                    t.concept
                )));
            }
            if !t.alpha.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite alpha for concept {}",
                    t.concept
                )));
            }
        }
        Ok(())
    }
}

/// Decoder column `concept_index`, unmodified.
pub fn steering_vector(model: &GsaeModel<f32>, concept_index: usize) -> Result<Array1<f32>> {
    if concept_index >= model.n_conditioned {
        return Err(Error::validation(format!(
            "concept index {concept_index} out of range for {} conditioned latents",
            model.n_conditioned
        )));
    }
    Ok(model.w_dec.column(concept_index).to_owned())
}

fn norm(v: ArrayView1<'_, f32>) -> f64 {
    v.iter()
        .map(|&a| (a as f64) * (a as f64))
        .sum::<f64>()
        .sqrt()
}

/// Steers one activation row.
pub fn apply_steering(
    x: ArrayView1<'_, f32>,
    model: &GsaeModel<f32>,
    config: &SteeringConfig,
) -> Result<Array1<f32>> {
    config.validate(model.n_conditioned)?;
    if x.len() != model.input_dim() {
        return Err(Error::validation(format!(
            "activation width {} does not match model width {}",
            x.len(),
            model.input_dim()
        )));
    }
    let active: Vec<&SteeringTarget> = config.targets.iter().filter(|t| t.alpha != 0.0).collect();
    let column_norms = active
        .iter()
        .map(|t| {
            let n = norm(model.w_dec.column(t.concept));
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::Degenerate(format!(
                    "steering vector for concept {} has zero norm",
                    t.concept
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if active.is_empty() {
        return Ok(x.to_owned());
    }
    let x_norm = norm(x);
    if x_norm == 0.0 {
        return Ok(x.to_owned());
    }
    let f = model.encode_row(x)?.values;

    let mut delta = vec![0.0f64; x.len()];
    for (t, col_norm) in active.iter().zip(&column_norms) {
        let presence = f[[0, t.concept]] as f64;
        let gamma = match (config.gamma_mode, t.direction) {
            (GammaMode::ConstantOne, _) => 1.0,
            (GammaMode::Balanced, Direction::Increase) => 1.0 - presence,
            (GammaMode::Balanced, Direction::Decrease) => presence,
        };
        let coef = t.alpha * (x_norm / col_norm) * gamma;
        for (d, &c) in delta.iter_mut().zip(model.w_dec.column(t.concept)) {
            *d += coef * c as f64;
        }
    }
    Ok(x.iter()
        .zip(delta)
        .map(|(&xi, di)| (xi as f64 + di) as f32)
        .collect())
}

/// Applies [`apply_steering`] to every row; labels pass through unchanged.
pub fn steer_dataset(
    dataset: &ActivationDataset,
    model: &GsaeModel<f32>,
    config: &SteeringConfig,
) -> Result<ActivationDataset> {
    if dataset.dim() != model.input_dim() {
        return Err(Error::validation(format!(
            "dataset width {} does not match model width {}",
            dataset.dim(),
            model.input_dim()
        )));
    }
    let mut out = dataset.clone();
    for (mut row, x) in out
        .activations
        .axis_iter_mut(Axis(0))
        .zip(dataset.activations.axis_iter(Axis(0)))
    {
        row.assign(&apply_steering(x, model, config)?);
    }
    Ok(out)
}
