//! Dense kernels with their backward passes.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Clone, Debug)]
pub(crate) struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

/// Row-wise layer normalization.
pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * gain + bias;
    (y, LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = r * (gv - mean_g - xv * mean_gx));
    }
    (dx, dgain, dbias)
}

/// Row-wise softmax where `allowed(i, j) == false` entries get exactly zero
/// weight. A row with nothing allowed comes back all zero.
pub(crate) fn masked_softmax(
    scores: &Array2<f64>,
    allowed: impl Fn(usize, usize) -> bool,
) -> Array2<f64> {
    let mut out = Array2::zeros(scores.raw_dim());
    for (i, row) in scores.rows().into_iter().enumerate() {
        let max = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| allowed(i, j))
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if allowed(i, j) {
                let e = (v - max).exp();
                out[[i, j]] = e;
                total += e;
            }
        }
        out.row_mut(i).mapv_inplace(|v| v / total);
    }
    out
}

/// Gradient through a row softmax given its output `p`.
pub(crate) fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut ds = p * dp;
    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let s = row.sum();
        Zip::from(&mut row).and(&prow).for_each(|v, &pv| *v -= pv * s);
    }
    ds
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

pub(crate) fn log_sum_exp(logits: ArrayView1<f64>) -> f64 {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Column block `[.., start..start + width]` as an owned matrix.
pub(crate) fn columns(x: &Array2<f64>, start: usize, width: usize) -> Array2<f64> {
    x.slice(ndarray::s![.., start..start + width]).to_owned()
}
