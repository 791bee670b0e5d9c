//! Dense kernels and their adjoints.
//!
//! Every forward kernel here has a matching `*_backward` that maps an output
//! cotangent to input cotangents. Summation order is fixed (ascending over the
//! reduced index) so results are bit-reproducible run to run.

use crate::error::{Error, Result};
use crate::numeric::macs;
use crate::numeric::Matrix;

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-6;

/// `sqrt(2 / pi)` for the tanh form of GELU.
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh form of GELU.
const GELU_CUBIC: f64 = 0.044_715;

/// `a · b`. Each output entry accumulates over the inner index left to right.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let (m, kd, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        let arow = &ad[i * kd..(i + 1) * kd];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &bd[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    macs::add((m * kd * n) as u64);
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    matmul(a, &b.transpose())
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::dim("matmul_tn", a.shape(), b.shape()));
    }
    matmul(&a.transpose(), b)
}

/// Adjoint of `c = a · b`: returns `(dc · bᵀ, aᵀ · dc)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dc: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((matmul_nt(dc, b)?, matmul_tn(a, dc)?))
}

/// `x · w + bias` with `bias` broadcast over rows.
pub fn linear(x: &Matrix, w: &Matrix, bias: &Matrix) -> Result<Matrix> {
    let mut out = matmul(x, w)?;
    out.add_row_broadcast(bias.data())?;
    Ok(out)
}

/// `sum_j weights[j] * m.row(rows[j])`, accumulated in list order.
pub fn weighted_row_sum(m: &Matrix, rows: &[usize], weights: &[f64]) -> Vec<f64> {
    assert_eq!(rows.len(), weights.len(), "one weight per row");
    let mut out = vec![0.0; m.cols()];
    for (&r, &w) in rows.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += w * v;
        }
    }
    macs::add((rows.len() * m.cols()) as u64);
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Adjoint of `p = softmax_rows(s)` given `p` and `dp`.
pub fn softmax_rows_backward(p: &Matrix, dp: &Matrix) -> Matrix {
    let mut ds = Matrix::zeros(p.rows(), p.cols());
    for r in 0..p.rows() {
        let pr = p.row(r);
        let dpr = dp.row(r);
        let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
        for ((d, &pv), &dv) in ds.row_mut(r).iter_mut().zip(pr).zip(dpr) {
            *d = pv * (dv - dot);
        }
    }
    ds
}

/// Saved state for [`layer_norm_backward`].
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_rows(m: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    layer_norm_rows_cached(m, gain, bias, eps).map(|(out, _)| out)
}

/// Per-row standardization (population variance) followed by `gain * x + bias`.
pub fn layer_norm_rows_cached(
    m: &Matrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    if gain.len() != m.cols() || bias.len() != m.cols() {
        return Err(Error::dim(
            "layer_norm_rows",
            m.shape(),
            (gain.len(), bias.len()),
        ));
    }
    let n = m.cols() as f64;
    let mut normalized = Matrix::zeros(m.rows(), m.cols());
    let mut out = Matrix::zeros(m.rows(), m.cols());
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let nr = normalized.row_mut(r);
        for (o, v) in nr.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let nr = normalized.row(r);
        for (((o, x), g), b) in out.row_mut(r).iter_mut().zip(nr).zip(gain).zip(bias) {
            *o = x * g + b;
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Adjoint of layer norm. Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dy: &Matrix,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let xh = cache.normalized.row(r);
        let dyr = dy.row(r);
        for c in 0..cols {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    (dx, dgain, dbias)
}

/// Scalar GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub fn gelu_map(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    out
}

/// Adjoint of [`gelu_map`] evaluated at the pre-activation `x`.
pub fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut out = dy.clone();
    for (o, &xv) in out.data_mut().iter_mut().zip(x.data()) {
        *o *= gelu_grad(xv);
    }
    out
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::dim(
            "cross_entropy_logits",
            logits.shape(),
            (labels.len(), 1),
        ));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= logits.cols()) {
        return Err(Error::Index(format!(
            "label {l} at row {i} outside 0..{}",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean over rows of `-log softmax(logits)[label]`.
pub fn cross_entropy_logits(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`cross_entropy_logits`] w.r.t. the logits.
pub fn cross_entropy_backward(logits: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(logits, labels)?;
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits);
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        row[label] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(matmul(&a, &Matrix::identity(2)).unwrap(), a);
        let r = matmul(
            &Matrix::from_rows(&[vec![1.0, 2.0]]),
            &Matrix::from_rows(&[vec![3.0], vec![4.0]]),
        )
        .unwrap();
        assert_eq!(r.data(), &[11.0]);
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(4, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1f64.ln(), 3f64.ln()],
            vec![1000.0, 1000.0],
        ]));
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.get(1, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(s.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let z = layer_norm_rows(&Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]), &[1.0; 3], &[0.0; 3], LN_EPS)
            .unwrap();
        assert_eq!(z.row(0), &[0.0, 0.0, 0.0]);

        let s = layer_norm_rows(&Matrix::from_rows(&[vec![-1.0, 1.0]]), &[1.0; 2], &[0.0; 2], 1e-15)
            .unwrap();
        assert!((s.get(0, 0) + 1.0).abs() < 1e-12 && (s.get(0, 1) - 1.0).abs() < 1e-12);

        // mean 1, population variance 1: normalized [-1, 1] -> 2 * [-1, 1] + 1
        let a = layer_norm_rows(&Matrix::from_rows(&[vec![0.0, 2.0]]), &[2.0; 2], &[1.0; 2], LN_EPS)
            .unwrap();
        assert!((a.get(0, 0) + 1.0).abs() < 1e-5);
        assert!((a.get(0, 1) - 3.0).abs() < 1e-5);

        assert!(layer_norm_rows(&Matrix::zeros(1, 3), &[1.0; 2], &[0.0; 3], LN_EPS).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu(-10.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Matrix::zeros(3, 10);
        let l = cross_entropy_logits(&uniform, &[0, 4, 9]).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);

        let mut peaked = Matrix::zeros(1, 10);
        peaked.set(0, 3, 1000.0);
        assert!(cross_entropy_logits(&peaked, &[3]).unwrap().abs() < 1e-12);

        let two = Matrix::from_rows(&[vec![0.0, 3f64.ln()]]);
        let l = cross_entropy_logits(&two, &[1]).unwrap();
        assert!((l - 0.287_682_072_451_780_9).abs() < 1e-12);

        assert!(matches!(
            cross_entropy_logits(&two, &[2]),
            Err(Error::Index(_))
        ));
    }
}
