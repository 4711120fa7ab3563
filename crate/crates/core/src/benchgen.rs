//! Synthetic activations with planted, linearly embedded binary concepts.
//!
//! Each row is `sum_j s * z_j * c_j + sum_l a_l * u_l + noise`, where the
//! concept directions `c_j` and nuisance directions `u_l` are orthonormal,
//! `z_j ~ Bernoulli(p)`, `a_l ~ N(0, 1)` and the noise is isotropic Gaussian.
//! Because the directions are known, an analytic autoencoder that isolates
//! each concept in one latent can be written down directly ([`oracle_model`]).

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gsae::GsaeModel;
use crate::store::ActivationDataset;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub d: usize,
    pub n_concepts: usize,
    pub n_nuisance: usize,
    pub n_samples: usize,
    pub concept_prob: f64,
    pub signal_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(
        d: usize,
        n_concepts: usize,
        n_nuisance: usize,
        n_samples: usize,
        seed: u64,
    ) -> Self {
        Self {
            d,
            n_concepts,
            n_nuisance,
            n_samples,
            concept_prob: 0.3,
            signal_scale: 1.0,
            noise_std: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_concepts == 0 {
            return Err(Error::config("at least one concept is required"));
        }
        if self.n_concepts + self.n_nuisance > self.d {
            return Err(Error::config(format!(
                "{} concepts + {} nuisance directions do not fit in d = {}",
                self.n_concepts, self.n_nuisance, self.d
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        if !(self.concept_prob > 0.0 && self.concept_prob < 1.0) {
            return Err(Error::config(format!(
                "concept probability {} must lie in (0, 1)",
                self.concept_prob
            )));
        }
        if !(self.signal_scale > 0.0 && self.signal_scale.is_finite()) {
            return Err(Error::config("signal scale must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise std must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGroundTruth {
    /// `d x n_concepts`, orthonormal columns.
    pub concept_directions: Array2<f64>,
    /// `d x n_nuisance`, orthonormal and orthogonal to the concept columns.
    pub nuisance_directions: Array2<f64>,
    pub signal_scale: f64,
    /// Generator settings; `None` when the truth was restored from a sidecar file.
    pub config: Option<SyntheticConfig>,
}

impl PlantedGroundTruth {
    pub fn dim(&self) -> usize {
        self.concept_directions.nrows()
    }

    pub fn n_concepts(&self) -> usize {
        self.concept_directions.ncols()
    }

    pub fn n_nuisance(&self) -> usize {
        self.nuisance_directions.ncols()
    }

    /// Concept direction `j` as an owned vector.
    pub fn concept(&self, j: usize) -> Array1<f64> {
        self.concept_directions.column(j).to_owned()
    }

    /// Stores the directions in the dataset container: one row per direction,
    /// concept rows scaled by the signal scale, nuisance rows unit-norm, and a
    /// single label column flagging concept rows.
    pub fn to_dataset(&self) -> Result<ActivationDataset> {
        let (nc, nn) = (self.n_concepts(), self.n_nuisance());
        let d = self.dim();
        let mut rows = Array2::zeros((nc + nn, d));
        let mut labels = Array2::zeros((nc + nn, 1));
        for j in 0..nc {
            for i in 0..d {
                rows[[j, i]] = (self.signal_scale * self.concept_directions[[i, j]]) as f32;
            }
            labels[[j, 0]] = 1.0;
        }
        for l in 0..nn {
            for i in 0..d {
                rows[[nc + l, i]] = self.nuisance_directions[[i, l]] as f32;
            }
        }
        ActivationDataset::new(rows, labels, vec!["planted_concept".to_string()])
    }

    /// Inverse of [`PlantedGroundTruth::to_dataset`], up to `f32` rounding.
    pub fn from_dataset(ds: &ActivationDataset) -> Result<Self> {
        if ds.n_concepts() != 1 {
            return Err(Error::Format(
                "ground-truth sidecar must have exactly one label column".into(),
            ));
        }
        let flags = ds.binary_labels(0)?;
        let concept_rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| flags[i]).collect();
        let nuisance_rows: Vec<usize> = (0..ds.n_rows()).filter(|&i| !flags[i]).collect();
        let Some(&first) = concept_rows.first() else {
            return Err(Error::Format(
                "ground-truth sidecar holds no concept rows".into(),
            ));
        };
        let norm = |r: usize| {
            ds.activations
                .row(r)
                .iter()
                .map(|&v| (v as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let signal_scale = norm(first);
        if signal_scale == 0.0 {
            return Err(Error::Format(
                "zero-norm concept direction in sidecar".into(),
            ));
        }
        let d = ds.dim();
        let build = |rows: &[usize]| {
            let mut out = Array2::zeros((d, rows.len()));
            for (c, &r) in rows.iter().enumerate() {
                let n = norm(r);
                for i in 0..d {
                    out[[i, c]] = ds.activations[[r, i]] as f64 / n;
                }
            }
            out
        };
        Ok(Self {
            concept_directions: build(&concept_rows),
            nuisance_directions: build(&nuisance_rows),
            signal_scale,
            config: None,
        })
    }
}

/// Gram–Schmidt (applied twice for stability) on a seeded Gaussian matrix.
fn orthonormal_columns(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((d, n));
    let mut j = 0;
    while j < n {
        let mut v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for p in 0..j {
                let col = q.column(p);
                let proj = col.dot(&v);
                v.scaled_add(-proj, &col);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        q.column_mut(j).assign(&(v / norm));
        j += 1;
    }
    q
}

/// Draws a planted-concept dataset and its ground truth.
pub fn generate_planted(
    config: &SyntheticConfig,
) -> Result<(ActivationDataset, PlantedGroundTruth)> {
    config.validate()?;
    let (d, nc, nn) = (config.d, config.n_concepts, config.n_nuisance);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dirs = orthonormal_columns(d, nc + nn, &mut rng);
    let concept_directions = dirs.slice(ndarray::s![.., ..nc]).to_owned();
    let nuisance_directions = dirs.slice(ndarray::s![.., nc..]).to_owned();

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let n = config.n_samples;
    let mut activations = Array2::<f32>::zeros((n, d));
    let mut labels = Array2::<f32>::zeros((n, nc));
    let mut row = Array1::<f64>::zeros(d);
    for r in 0..n {
        row.fill(0.0);
        for j in 0..nc {
            if rng.random_bool(config.concept_prob) {
                labels[[r, j]] = 1.0;
                row.scaled_add(config.signal_scale, &concept_directions.column(j));
            }
        }
        for l in 0..nn {
            let a: f64 = StandardNormal.sample(&mut rng);
            row.scaled_add(a, &nuisance_directions.column(l));
        }
        if config.noise_std > 0.0 {
            for v in row.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        for i in 0..d {
            activations[[r, i]] = row[i] as f32;
        }
    }
    let names = (0..nc).map(|j| format!("concept_{j}")).collect();
    let dataset = ActivationDataset::new(activations, labels, names)?;
    let truth = PlantedGroundTruth {
        concept_directions,
        nuisance_directions,
        signal_scale: config.signal_scale,
        config: Some(config.clone()),
    };
    Ok((dataset, truth))
}

pub const DEFAULT_ORACLE_GAIN: f64 = 10.0;

/// Bias on oracle latents that carry no direction, keeping them out of the TopK set.
const UNUSED_LATENT_BIAS: f32 = -1.0e4;

/// The analytic autoencoder that isolates each planted concept in latent `i`.
///
/// Concept latents fire at `sigmoid(+-gain * s / 2)`, nuisance latents read off
/// the nuisance coefficients, and the decoder maps concept latents back onto
/// `s * c_i`.
pub fn oracle_model(truth: &PlantedGroundTruth, m: usize, gain: f64) -> Result<GsaeModel<f32>> {
    let (d, nc, nn) = (truth.dim(), truth.n_concepts(), truth.n_nuisance());
    if m < nc + nn {
        return Err(Error::config(format!(
            "oracle latent width {m} is smaller than {} planted directions",
            nc + nn
        )));
    }
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::config(format!(
            "oracle gain {gain} must be positive"
        )));
    }
    let s = truth.signal_scale;
    let mut w_enc = Array2::<f32>::zeros((m, d));
    let mut b_enc = Array1::<f32>::from_elem(m, UNUSED_LATENT_BIAS);
    let mut w_dec = Array2::<f32>::zeros((d, m));
    for i in 0..nc {
        for r in 0..d {
            let c = truth.concept_directions[[r, i]];
            w_enc[[i, r]] = (gain * c) as f32;
            w_dec[[r, i]] = (s * c) as f32;
        }
        b_enc[i] = (-gain * s / 2.0) as f32;
    }
    for l in 0..nn {
        let i = nc + l;
        for r in 0..d {
            let u = truth.nuisance_directions[[r, l]] as f32;
            w_enc[[i, r]] = u;
            w_dec[[r, i]] = u;
        }
        b_enc[i] = 0.0;
    }
    let model = GsaeModel {
        w_enc,
        b_enc,
        w_dec,
        b_dec: Array1::zeros(d),
        k: nc + nn,
        n_conditioned: nc,
    };
    model.validate()?;
    Ok(model)
}
