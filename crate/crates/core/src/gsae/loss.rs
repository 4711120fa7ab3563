use ndarray::{ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_BCE_CLAMP: f64 = 1e-7;

/// Mean over rows of `||x_hat - x||^2 / ||x||^2`.
pub fn loss_reconstruction<T: Real>(x_hat: ArrayView2<'_, T>, x: ArrayView2<'_, T>) -> Result<T> {
    if x_hat.dim() != x.dim() {
        return Err(Error::validation(format!(
            "reconstruction shape {:?} does not match input shape {:?}",
            x_hat.dim(),
            x.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    let mut total = T::zero();
    for (row, (xh, xr)) in x_hat
        .axis_iter(Axis(0))
        .zip(x.axis_iter(Axis(0)))
        .enumerate()
    {
        let norm2: T = xr.iter().map(|&v| v * v).sum();
        if norm2 == T::zero() {
            return Err(Error::Degenerate(format!(
                "row {row} has zero norm; normalised reconstruction error is undefined"
            )));
        }
        let err2: T = Zip::from(&xh)
            .and(&xr)
            .fold(T::zero(), |acc, &a, &b| acc + (a - b) * (a - b));
        total += err2 / norm2;
    }
    Ok(total / T::from_usize(x.nrows()).unwrap())
}

/// Mean over rows of the clamped binary cross-entropy averaged over the
/// `c+1` conditioned units.
pub fn loss_condition<T: Real>(
    f_conditioned: ArrayView2<'_, T>,
    y: ArrayView2<'_, T>,
    clamp: T,
) -> Result<T> {
    if f_conditioned.dim() != y.dim() {
        return Err(Error::validation(format!(
            "conditioned latents {:?} and labels {:?} differ in shape",
            f_conditioned.dim(),
            y.dim()
        )));
    }
    let (rows, width) = y.dim();
    if rows == 0 || width == 0 {
        return Err(Error::validation("empty conditioning batch"));
    }
    let upper = T::one() - clamp;
    let total = Zip::from(&f_conditioned)
        .and(&y)
        .fold(T::zero(), |acc, &f, &t| {
            let f = f.max(clamp).min(upper);
            acc - (t * f.ln() + (T::one() - t) * (T::one() - f).ln())
        });
    Ok(total / T::from_usize(rows * width).unwrap())
}
