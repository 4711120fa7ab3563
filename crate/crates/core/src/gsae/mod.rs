//! TopK-sigmoid sparse autoencoder with an optional block of conditioned latents.
//!
//! `h = W_enc x + b_enc`, the `k` largest entries of `h` plus the conditioned
//! indices `0..n_conditioned` stay active, `f = sigmoid(h)` on active units and
//! exactly `0` elsewhere, and `x_hat = W_dec f + b_dec`.

mod checkpoint;
mod grad;
mod loss;
mod train;

pub use checkpoint::{
    inspect_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use grad::{gradients, Gradients};
pub use loss::{loss_condition, loss_reconstruction, DEFAULT_BCE_CLAMP};
pub use train::{train, Adam, Architecture, EpochLosses, TrainConfig};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct GsaeModel<T = f32> {
    /// `m x d`
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    /// `d x m`
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
    /// TopK sparsity budget.
    pub k: usize,
    /// Size of the conditioned block `f[0..n_conditioned]`; 0 for a vanilla SAE.
    pub n_conditioned: usize,
}

/// Encoder output for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch<T = f32> {
    /// `B x m` latents; exactly 0 on masked units.
    pub values: Array2<T>,
    pub active_mask: Array2<bool>,
    /// `B x m` pre-activations `h`.
    pub preactivations: Array2<T>,
}

impl<T: Real> LatentBatch<T> {
    /// The conditioned block `f[.., 0..n]`.
    pub fn conditioned(&self, n: usize) -> ArrayView2<'_, T> {
        self.values.slice(ndarray::s![.., ..n])
    }
}

/// Uniform `(-1/sqrt(d), 1/sqrt(d))` encoder, decoder tied to its transpose, zero biases.
pub fn init_model(
    d: usize,
    m: usize,
    k: usize,
    n_conditioned: usize,
    seed: u64,
) -> Result<GsaeModel<f32>> {
    check_arch(d, m, k, n_conditioned)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let w_enc = Array2::from_shape_simple_fn((m, d), || {
        // open interval: redraw the (measure-zero) lower endpoint
        loop {
            let v = rng.random_range(-bound..bound);
            if v != -bound {
                return v as f32;
            }
        }
    });
    let w_dec = w_enc.t().to_owned();
    Ok(GsaeModel {
        w_enc,
        b_enc: Array1::zeros(m),
        w_dec,
        b_dec: Array1::zeros(d),
        k,
        n_conditioned,
    })
}

fn check_arch(d: usize, m: usize, k: usize, n_conditioned: usize) -> Result<()> {
    if d == 0 || m == 0 {
        return Err(Error::config(format!(
            "d = {d} and m = {m} must be positive"
        )));
    }
    if k == 0 || k > m {
        return Err(Error::config(format!("k = {k} must lie in 1..={m}")));
    }
    if n_conditioned > m {
        return Err(Error::config(format!(
            "{n_conditioned} conditioned latents exceed latent width {m}"
        )));
    }
    Ok(())
}

impl<T: Real> GsaeModel<T> {
    pub fn input_dim(&self) -> usize {
        self.w_enc.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, d) = self.w_enc.dim();
        check_arch(d, m, self.k, self.n_conditioned)?;
        if self.b_enc.len() != m || self.w_dec.dim() != (d, m) || self.b_dec.len() != d {
            return Err(Error::validation(format!(
                "inconsistent parameter shapes: W_enc {:?}, b_enc {}, W_dec {:?}, b_dec {}",
                self.w_enc.dim(),
                self.b_enc.len(),
                self.w_dec.dim(),
                self.b_dec.len()
            )));
        }
        let finite = self.w_enc.iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("model contains non-finite parameters"));
        }
        Ok(())
    }

    /// Encodes a `B x d` batch.
    pub fn encode(&self, x: ArrayView2<'_, T>) -> Result<LatentBatch<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::validation(format!(
                "input width {} does not match model width {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite value in encoder input"));
        }
        let mut h = x.dot(&self.w_enc.t());
        h += &self.b_enc;
        let m = self.latent_dim();
        let mut values = Array2::zeros(h.raw_dim());
        let mut active_mask = Array2::from_elem(h.raw_dim(), false);
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for ((h_row, mut f_row), mut mask_row) in h
            .axis_iter(Axis(0))
            .zip(values.axis_iter_mut(Axis(0)))
            .zip(active_mask.axis_iter_mut(Axis(0)))
        {
            order.clear();
            order.extend(0..m);
            if self.k < m {
                // descending by h, ties toward the lower index
                let by_rank = |&a: &usize, &b: &usize| {
                    h_row[b]
                        .partial_cmp(&h_row[a])
                        .expect("finite pre-activations")
                        .then(a.cmp(&b))
                };
                order.select_nth_unstable_by(self.k - 1, by_rank);
            }
            for j in order[..self.k].iter().copied().chain(0..self.n_conditioned) {
                mask_row[j] = true;
                f_row[j] = sigmoid(h_row[j]);
            }
        }
        Ok(LatentBatch {
            values,
            active_mask,
            preactivations: h,
        })
    }

    /// Encodes a single row.
    pub fn encode_row(&self, x: ArrayView1<'_, T>) -> Result<LatentBatch<T>> {
        self.encode(x.insert_axis(Axis(0)))
    }

    /// `x_hat = f W_dec^T + b_dec` for a `B x m` latent matrix.
    pub fn decode(&self, f: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if f.ncols() != self.latent_dim() {
            return Err(Error::validation(format!(
                "latent width {} does not match model latent width {}",
                f.ncols(),
                self.latent_dim()
            )));
        }
        let mut out = f.dot(&self.w_dec.t());
        out += &self.b_dec;
        Ok(out)
    }

    /// Lossless widening or rounding conversion of every parameter.
    pub fn cast<U: Real>(&self) -> GsaeModel<U> {
        let conv = |v: &T| U::from_f64_lossy(v.as_f64());
        GsaeModel {
            w_enc: self.w_enc.map(conv),
            b_enc: self.b_enc.map(conv),
            w_dec: self.w_dec.map(conv),
            b_dec: self.b_dec.map(conv),
            k: self.k,
            n_conditioned: self.n_conditioned,
        }
    }
}
