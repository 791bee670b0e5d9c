use serde::{Deserialize, Serialize};

use crate::encoder::ModelTrace;
use crate::error::{Error, Result};
use crate::numeric::{matmul_tn, Matrix};

fn centered(m: &Matrix) -> Matrix {
    let means = m.col_means();
    let mut out = m.clone();
    for r in 0..out.rows() {
        for (v, mu) in out.row_mut(r).iter_mut().zip(&means) {
            *v -= mu;
        }
    }
    out
}

/// Linear CKA between two feature matrices with one row per example.
///
/// Columns are centered first. Returns 0 when either side has no variance.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::dim("linear_cka", x.shape(), y.shape()));
    }
    if x.rows() < 2 {
        return Err(Error::Argument("linear_cka needs at least 2 rows".into()));
    }
    let (xc, yc) = (centered(x), centered(y));
    let cross = matmul_tn(&xc, &yc)?.frobenius_norm();
    let xx = matmul_tn(&xc, &xc)?.frobenius_norm();
    let yy = matmul_tn(&yc, &yc)?.frobenius_norm();
    if xx == 0.0 || yy == 0.0 {
        return Ok(0.0);
    }
    Ok((cross * cross / (xx * yy)).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccSummary {
    pub mean: f64,
    /// Population variance of the pairwise coefficients.
    pub variance: f64,
    pub pairs: usize,
    /// Constant rows left out (their coefficient is undefined).
    pub excluded_constant: usize,
}

/// Pearson coefficients of every unordered pair of non-constant rows, and the
/// number of constant rows skipped.
pub fn pairwise_pcc(rows: &Matrix) -> (Vec<f64>, usize) {
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut excluded = 0;
    for r in 0..rows.rows() {
        let row = rows.row(r);
        let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if row.is_empty() || lo == hi {
            excluded += 1;
            continue;
        }
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        kept.push((c, norm));
    }
    let mut out = Vec::with_capacity(kept.len() * kept.len().saturating_sub(1) / 2);
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            let dot: f64 = kept[i].0.iter().zip(&kept[j].0).map(|(a, b)| a * b).sum();
            out.push((dot / (kept[i].1 * kept[j].1)).clamp(-1.0, 1.0));
        }
    }
    (out, excluded)
}

fn summarize(coefs: &[f64], excluded: usize) -> Result<PccSummary> {
    if coefs.is_empty() {
        return Err(Error::Numeric(format!(
            "PCC undefined: fewer than two non-constant rows ({excluded} constant)"
        )));
    }
    let n = coefs.len() as f64;
    let mean = coefs.iter().sum::<f64>() / n;
    let variance = coefs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(PccSummary {
        mean,
        variance,
        pairs: coefs.len(),
        excluded_constant: excluded,
    })
}

/// Mean and variance of pairwise Pearson coefficients between query rows.
pub fn token_query_pcc(queries: &Matrix) -> Result<PccSummary> {
    if queries.rows() < 2 {
        return Err(Error::Argument("token_query_pcc needs at least 2 rows".into()));
    }
    let (coefs, excluded) = pairwise_pcc(queries);
    summarize(&coefs, excluded)
}

fn mean_patch_row(tokens: &Matrix) -> Vec<f64> {
    let n = tokens.rows() - 1;
    let mut out = vec![0.0; tokens.cols()];
    for r in 1..tokens.rows() {
        for (o, v) in out.iter_mut().zip(tokens.row(r)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// CKA between each block's mean patch token and the final CLS token, with
/// one row per traced image.
pub fn cka_curve(traces: &[ModelTrace]) -> Result<Vec<f64>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Argument("cka_curve needs traces".into()))?;
    let cls = Matrix::from_rows(
        &traces.iter().map(|t| t.final_tokens().row(0).to_vec()).collect::<Vec<_>>(),
    );
    (1..first.tokens.len())
        .map(|l| {
            let feats: Vec<Vec<f64>> = traces.iter().map(|t| mean_patch_row(&t.tokens[l])).collect();
            linear_cka(&Matrix::from_rows(&feats), &cls)
        })
        .collect()
}

/// Per-layer PCC of patch-token queries, pooled over all traced images.
///
/// Only rows that went through attention are used: the informative patches
/// in slow-fast layers, every patch in dense layers.
pub fn pcc_curve(traces: &[ModelTrace]) -> Result<Vec<PccSummary>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Argument("pcc_curve needs traces".into()))?;
    (0..first.blocks.len())
        .map(|l| {
            let mut coefs = Vec::new();
            let mut excluded = 0;
            for t in traces {
                let b = &t.blocks[l];
                let rows: Vec<usize> = (1..b.slow_rows.len()).collect();
                let (c, e) = pairwise_pcc(&b.attn.q.gather_rows(&rows));
                coefs.extend(c);
                excluded += e;
            }
            summarize(&coefs, excluded)
        })
        .collect()
}
