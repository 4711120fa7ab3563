//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use gsae::GsaeModel;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BCE_CLAMP: f64 = 1e-7;

/// Naive forward pass and loss, row by row, with plain loops.
pub fn reference_loss(
    model: &GsaeModel<f64>,
    x: &Array2<f64>,
    y: Option<&Array2<f64>>,
    weight: f64,
) -> f64 {
    let (b, d) = x.dim();
    let m = model.b_enc.len();
    let mut l_r = 0.0;
    let mut l_c = 0.0;
    for r in 0..b {
        let h: Vec<f64> = (0..m)
            .map(|i| model.b_enc[i] + (0..d).map(|j| model.w_enc[[i, j]] * x[[r, j]]).sum::<f64>())
            .collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &c| h[c].partial_cmp(&h[a]).unwrap().then(a.cmp(&c)));
        let mut active = vec![false; m];
        for &i in &order[..model.k] {
            active[i] = true;
        }
        for a in active.iter_mut().take(model.n_conditioned) {
            *a = true;
        }
        let f: Vec<f64> = (0..m)
            .map(|i| {
                if active[i] {
                    1.0 / (1.0 + (-h[i]).exp())
                } else {
                    0.0
                }
            })
            .collect();
        let mut err = 0.0;
        let mut norm = 0.0;
        for j in 0..d {
            let xh = model.b_dec[j] + (0..m).map(|i| model.w_dec[[j, i]] * f[i]).sum::<f64>();
            err += (xh - x[[r, j]]).powi(2);
            norm += x[[r, j]].powi(2);
        }
        l_r += err / norm;
        if let Some(y) = y {
            let c = model.n_conditioned;
            let mut bce = 0.0;
            for i in 0..c {
                let p = f[i].clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let t = y[[r, i]];
                bce -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
            l_c += bce / c as f64;
        }
    }
    (l_r + weight * l_c) / b as f64
}

/// Random tiny f64 model and batch whose TopK sets are well separated, so a
/// small parameter step cannot change the active set.
pub fn tiny_problem(
    seed: u64,
    d: usize,
    m: usize,
    k: usize,
    c: usize,
    batch: usize,
) -> (GsaeModel<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
        };
        let model = GsaeModel {
            w_enc: draw(m, d),
            b_enc: draw(1, m).row(0).to_owned(),
            w_dec: draw(d, m),
            b_dec: draw(1, d).row(0).to_owned(),
            k,
            n_conditioned: c,
        };
        let x = draw(batch, d);
        let y = draw(batch, c).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let separated = x.rows().into_iter().all(|row| {
            let mut h: Vec<f64> = (0..m)
                .map(|i| model.b_enc[i] + row.dot(&model.w_enc.row(i)))
                .collect();
            h.sort_by(|a, b| b.partial_cmp(a).unwrap());
            k == m || h[k - 1] - h[k] > 1e-2
        });
        if separated {
            return (model, x, y);
        }
    }
}

/// Central finite differences of [`reference_loss`] for every parameter,
/// in the order w_enc, b_enc, w_dec, b_dec.
pub fn numeric_gradients(
    model: &GsaeModel<f64>,
    x: &Array2<f64>,
    y: Option<&Array2<f64>>,
    weight: f64,
    step: f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = model.clone();
    macro_rules! sweep {
        ($field:ident) => {
            for idx in 0..model.$field.len() {
                let orig = model.$field.as_slice().unwrap()[idx];
                probe.$field.as_slice_mut().unwrap()[idx] = orig + step;
                let up = reference_loss(&probe, x, y, weight);
                probe.$field.as_slice_mut().unwrap()[idx] = orig - step;
                let down = reference_loss(&probe, x, y, weight);
                probe.$field.as_slice_mut().unwrap()[idx] = orig;
                out.push((up - down) / (2.0 * step));
            }
        };
    }
    sweep!(w_enc);
    sweep!(b_enc);
    sweep!(w_dec);
    sweep!(b_dec);
    out
}

pub fn flatten_gradients(g: &gsae::gsae::Gradients<f64>) -> Vec<f64> {
    g.w_enc
        .iter()
        .chain(g.b_enc.iter())
        .chain(g.w_dec.iter())
        .chain(g.b_dec.iter())
        .copied()
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over all parameters.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// `1 - p0^2 - p1^2` from the textbook definition.
pub fn hand_gini(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    let p0 = neg as f64 / n;
    let p1 = pos as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Exhaustive best stump: every feature, every midpoint between consecutive
/// distinct values, minimal weighted child Gini; ties go to the lower
/// feature and then the lower threshold. `None` when every feature is constant.
pub fn best_stump(x: &Array2<f32>, y: &[bool]) -> Option<(usize, f64)> {
    let (n, m) = x.dim();
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..m {
        let mut values: Vec<f32> = x.column(j).to_vec();
        values.sort_by(f32::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] as f64 + w[1] as f64) / 2.0;
            let mut l = (0, 0);
            let mut r = (0, 0);
            for i in 0..n {
                let side = if (x[[i, j]] as f64) <= t {
                    &mut l
                } else {
                    &mut r
                };
                if y[i] {
                    side.1 += 1;
                } else {
                    side.0 += 1;
                }
            }
            let nl = (l.0 + l.1) as f64;
            let nr = (r.0 + r.1) as f64;
            let g = (nl * hand_gini(l.0, l.1) + nr * hand_gini(r.0, r.1)) / n as f64;
            let better = match best {
                None => true,
                Some((bg, _, _)) => g < bg - 1e-12,
            };
            if better {
                best = Some((g, j, t));
            }
        }
    }
    best.map(|(_, j, t)| (j, t))
}

/// `U = #{a > b} + 0.5 #{a == b}` by enumerating every pair.
pub fn pair_count_u(present: &[f64], absent: &[f64]) -> f64 {
    let mut u = 0.0;
    for &a in present {
        for &b in absent {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    u
}

pub fn dot(a: ndarray::ArrayView1<'_, f32>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(&u, &v)| u as f64 * v).sum()
}
