//! Backward pass of `L_total = L_r + lambda_c * L_c`.
//!
//! The TopK active set is held fixed for the step. Masked units pass no
//! gradient; neither does a conditioned unit whose activation sits in a
//! saturated region of the BCE clamp.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::loss::{loss_condition, loss_reconstruction};
use super::GsaeModel;
use crate::error::{Error, Result};
use crate::real::Real;

/// Parameter gradients plus the loss values at which they were taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub w_enc: Array2<T>,
    pub b_enc: Array1<T>,
    pub w_dec: Array2<T>,
    pub b_dec: Array1<T>,
    pub loss_reconstruction: T,
    /// Zero when no labels were supplied.
    pub loss_condition: T,
}

/// Gradients for one batch. `labels` must be `Some` with `n_conditioned`
/// columns when `condition_weight` is non-zero; with weight zero it is never read.
pub fn gradients<T: Real>(
    model: &GsaeModel<T>,
    x: ArrayView2<'_, T>,
    labels: Option<ArrayView2<'_, T>>,
    condition_weight: T,
    bce_clamp: T,
) -> Result<Gradients<T>> {
    let batch = x.nrows();
    if batch == 0 {
        return Err(Error::validation("empty batch"));
    }
    let conditioned = condition_weight != T::zero();
    let labels = if conditioned {
        let y = labels.ok_or_else(|| Error::validation("conditioning weight set but no labels"))?;
        if y.dim() != (batch, model.n_conditioned) {
            return Err(Error::validation(format!(
                "labels {:?} do not match batch {} x {} conditioned latents",
                y.dim(),
                batch,
                model.n_conditioned
            )));
        }
        Some(y)
    } else {
        None
    };

    let latents = model.encode(x)?;
    let f = &latents.values;
    let x_hat = model.decode(f.view())?;
    let l_r = loss_reconstruction(x_hat.view(), x)?;

    let b = T::from_usize(batch).unwrap();
    let two = T::one() + T::one();
    // dL_r / dx_hat = 2 (x_hat - x) / (B ||x||^2)
    let mut d_xhat = &x_hat - &x;
    for (mut row, xr) in d_xhat.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
        let norm2: T = xr.iter().map(|&v| v * v).sum();
        row *= two / (b * norm2);
    }

    let grad_w_dec = d_xhat.t().dot(f);
    let grad_b_dec = d_xhat.sum_axis(Axis(0));
    let mut d_f = d_xhat.dot(&model.w_dec);

    let mut l_c = T::zero();
    if let Some(y) = labels {
        let c = model.n_conditioned;
        let f_cond = latents.conditioned(c);
        l_c = loss_condition(f_cond, y, bce_clamp)?;
        let scale = condition_weight / (b * T::from_usize(c).unwrap());
        let upper = T::one() - bce_clamp;
        for r in 0..batch {
            for j in 0..c {
                let fv = f[[r, j]];
                if fv < bce_clamp || fv > upper {
                    continue;
                }
                let t = y[[r, j]];
                d_f[[r, j]] -= scale * (t / fv - (T::one() - t) / (T::one() - fv));
            }
        }
    }

    // through the sigmoid on active units only
    let mut d_h = d_f;
    ndarray::Zip::from(&mut d_h)
        .and(f)
        .and(&latents.active_mask)
        .for_each(|g, &fv, &active| {
            *g = if active {
                *g * fv * (T::one() - fv)
            } else {
                T::zero()
            };
        });

    let grad_w_enc = d_h.t().dot(&x);
    let grad_b_enc = d_h.sum_axis(Axis(0));

    Ok(Gradients {
        w_enc: grad_w_enc,
        b_enc: grad_b_enc,
        w_dec: grad_w_dec,
        b_dec: grad_b_dec,
        loss_reconstruction: l_r,
        loss_condition: l_c,
    })
}
