use std::path::PathBuf;

use ndarray::{s, Array1, Array2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{gradients, init_model, load_checkpoint, Gradients, GsaeModel, DEFAULT_BCE_CLAMP};
use crate::error::{Error, Result};
use crate::store::ActivationDataset;

/// Optimiser and schedule settings. Defaults are sized for desk-scale runs;
/// [`TrainConfig::large_scale`] gives the large-scale preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the conditioning loss, 0 (vanilla) or 1 (guided).
    pub condition_weight: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub bce_clamp: f32,
    pub seed: u64,
    /// Resume from these weights with a fresh optimiser state.
    pub warm_start: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 30,
            condition_weight: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            bce_clamp: DEFAULT_BCE_CLAMP as f32,
            seed: 0,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    pub fn large_scale() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 2048,
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if self.condition_weight != 0.0 && self.condition_weight != 1.0 {
            return Err(Error::config(format!(
                "condition weight must be 0 or 1, got {}",
                self.condition_weight
            )));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(Error::config("BCE clamp must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Architecture {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub n_conditioned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub loss_reconstruction: f32,
    pub loss_condition: f32,
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    moments: [(Vec<f32>, Vec<f32>); 4],
}

impl Adam {
    pub fn new(model: &GsaeModel<f32>, config: &TrainConfig) -> Self {
        let zeros = |n: usize| (vec![0.0; n], vec![0.0; n]);
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            step: 0,
            moments: [
                zeros(model.w_enc.len()),
                zeros(model.b_enc.len()),
                zeros(model.w_dec.len()),
                zeros(model.b_dec.len()),
            ],
        }
    }

    pub fn update(&mut self, model: &mut GsaeModel<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let [m0, m1, m2, m3] = &mut self.moments;
        let hp = (self.lr, self.beta1, self.beta2, self.eps, bc1, bc2);
        adam_apply(&mut model.w_enc, &grads.w_enc, m0, hp);
        adam_apply(&mut model.b_enc, &grads.b_enc, m1, hp);
        adam_apply(&mut model.w_dec, &grads.w_dec, m2, hp);
        adam_apply(&mut model.b_dec, &grads.b_dec, m3, hp);
    }
}

fn adam_apply<D: Dimension>(
    param: &mut ndarray::Array<f32, D>,
    grad: &ndarray::Array<f32, D>,
    (m, v): &mut (Vec<f32>, Vec<f32>),
    (lr, beta1, beta2, eps, bc1, bc2): (f32, f32, f32, f32, f32, f32),
) {
    // parameters and gradients are standard-layout, so iteration order is fixed
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad.iter())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Trains a (guided) SAE on every row of `dataset`.
///
/// With `condition_weight == 0` the dataset labels are never read.
pub fn train(
    dataset: &ActivationDataset,
    config: &TrainConfig,
    arch: Architecture,
) -> Result<(GsaeModel<f32>, Vec<EpochLosses>)> {
    config.validate()?;
    if dataset.dim() != arch.d {
        return Err(Error::config(format!(
            "dataset width {} does not match architecture d = {}",
            dataset.dim(),
            arch.d
        )));
    }
    let guided = config.condition_weight != 0.0;
    if guided && arch.n_conditioned != dataset.n_concepts() {
        return Err(Error::config(format!(
            "guided training needs n_conditioned = {} (dataset concepts), got {}",
            dataset.n_concepts(),
            arch.n_conditioned
        )));
    }
    if dataset.n_rows() == 0 {
        return Err(Error::config("cannot train on an empty dataset"));
    }

    let mut model = match &config.warm_start {
        Some(path) => {
            let m = load_checkpoint(path)?;
            let got = Architecture {
                d: m.input_dim(),
                m: m.latent_dim(),
                k: m.k,
                n_conditioned: m.n_conditioned,
            };
            if got != arch {
                return Err(Error::config(format!(
                    "warm-start checkpoint has architecture {got:?}, expected {arch:?}"
                )));
            }
            m
        }
        None => init_model(arch.d, arch.m, arch.k, arch.n_conditioned, config.seed)?,
    };

    let mut adam = Adam::new(&model, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3e_0000_0001);
    let mut order: Vec<usize> = (0..dataset.n_rows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let cond_labels: Option<Array2<f32>> = guided.then(|| {
        dataset
            .labels
            .slice(s![.., ..arch.n_conditioned])
            .to_owned()
    });

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum_r = 0.0f64;
        let mut sum_c = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.activations.select(Axis(0), chunk);
            let y = cond_labels.as_ref().map(|l| l.select(Axis(0), chunk));
            let grads = gradients(
                &model,
                x.view(),
                y.as_ref().map(|y| y.view()),
                config.condition_weight,
                config.bce_clamp,
            )?;
            adam.update(&mut model, &grads);
            sum_r += grads.loss_reconstruction as f64;
            sum_c += grads.loss_condition as f64;
            batches += 1;
        }
        if !all_finite(&model) {
            return Err(Error::Degenerate(format!(
                "training diverged to non-finite weights in epoch {epoch}"
            )));
        }
        history.push(EpochLosses {
            epoch,
            loss_reconstruction: (sum_r / batches as f64) as f32,
            loss_condition: (sum_c / batches as f64) as f32,
        });
    }
    Ok((model, history))
}

fn all_finite(model: &GsaeModel<f32>) -> bool {
    let finite = |a: &Array1<f32>| a.iter().all(|v| v.is_finite());
    finite(&model.b_enc)
        && finite(&model.b_dec)
        && Zip::from(&model.w_enc).all(|v| v.is_finite())
        && Zip::from(&model.w_dec).all(|v| v.is_finite())
}
