//! Pre-norm encoder block, dense or slow-fast routed, with its backward pass.
//!
//! A block always reads and writes `1 + N` rows. With a [`SlowFastPlan`] only
//! CLS, the informative rows and one representative row (weighted sum of the
//! placeholders) go through MSA and FFN; every placeholder row then receives
//! the representative row's two residuals.

use crate::encoder::{EncoderConfig, LayerParams, TokenSequence};
use crate::error::{Error, Result};
use crate::numeric::{
    gelu_backward, gelu_map, layer_norm_backward, layer_norm_rows_cached, linear, matmul,
    matmul_backward, matmul_nt, softmax_rows, softmax_rows_backward, weighted_row_sum,
    LayerNormCache, Matrix, Parameter, LN_EPS,
};

/// Routing of patch tokens through one block.
///
/// Indices are patch indices (`0..N`, CLS excluded). `weights` are the
/// normalized aggregation weights of the placeholders, in `placeholder` order.
#[derive(Clone, Debug, PartialEq)]
pub struct SlowFastPlan {
    pub informative: Vec<usize>,
    pub placeholder: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SlowFastPlan {
    fn validate(&self, n_patches: usize) -> Result<()> {
        if self.weights.len() != self.placeholder.len() {
            return Err(Error::Argument(format!(
                "{} aggregation weights for {} placeholders",
                self.weights.len(),
                self.placeholder.len()
            )));
        }
        let mut seen = vec![false; n_patches];
        for &i in self.informative.iter().chain(&self.placeholder) {
            if i >= n_patches || seen[i] {
                return Err(Error::Argument(format!(
                    "patch index {i} out of range or repeated (N = {n_patches})"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Argument("plan does not cover every patch".into()));
        }
        Ok(())
    }

    pub fn has_representative(&self) -> bool {
        !self.placeholder.is_empty()
    }
}

/// Saved activations of multi-head attention.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Per-head attention probabilities, each `m x m`.
    pub probs: Vec<Matrix>,
    pub concat: Matrix,
}

impl AttentionTrace {
    /// Row 0 (the CLS query) averaged over heads.
    pub fn class_attention(&self) -> Vec<f64> {
        let m = self.probs[0].cols();
        let mut out = vec![0.0; m];
        for p in &self.probs {
            for (o, v) in out.iter_mut().zip(p.row(0)) {
                *o += v;
            }
        }
        let h = self.probs.len() as f64;
        out.iter_mut().for_each(|v| *v /= h);
        out
    }

    /// Head-averaged attention matrix.
    pub fn mean_attention(&self) -> Matrix {
        let mut out = self.probs[0].clone();
        for p in &self.probs[1..] {
            out.add_assign(p).expect("heads share a shape");
        }
        out.scale(1.0 / self.probs.len() as f64)
    }
}

/// Multi-head self-attention on already-normalized rows.
pub(crate) fn attention_forward(
    h: &Matrix,
    lp: &LayerParams,
    heads: usize,
) -> Result<(Matrix, AttentionTrace)> {
    let c = h.cols();
    if heads == 0 || !c.is_multiple_of(heads) {
        return Err(Error::Config(format!("embed_dim {c} not divisible by heads {heads}")));
    }
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = linear(h, &lp.q_w.value, &lp.q_b.value)?;
    let k = linear(h, &lp.k_w.value, &lp.k_b.value)?;
    let v = linear(h, &lp.v_w.value, &lp.v_b.value)?;
    let mut concat = Matrix::zeros(h.rows(), c);
    let mut probs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = q.column_block(head * d, d);
        let kh = k.column_block(head * d, d);
        let vh = v.column_block(head * d, d);
        let p = softmax_rows(&matmul_nt(&qh, &kh)?.scale(scale));
        concat.set_column_block(head * d, &matmul(&p, &vh)?);
        probs.push(p);
    }
    let out = linear(&concat, &lp.proj_w.value, &lp.proj_b.value)?;
    Ok((
        out,
        AttentionTrace {
            q,
            k,
            v,
            probs,
            concat,
        },
    ))
}

fn accumulate_linear(
    w: &mut Parameter,
    b: &mut Parameter,
    input: &Matrix,
    dout: &Matrix,
) -> Result<Matrix> {
    let (dx, dw) = matmul_backward(input, &w.value, dout)?;
    w.accumulate(&dw);
    b.accumulate_slice(&dout.col_sums());
    Ok(dx)
}

fn attention_backward(
    h: &Matrix,
    tr: &AttentionTrace,
    lp: &mut LayerParams,
    dout: &Matrix,
) -> Result<Matrix> {
    let heads = tr.probs.len();
    let (m, c) = h.shape();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let dconcat = accumulate_linear(&mut lp.proj_w, &mut lp.proj_b, &tr.concat, dout)?;
    let mut dq = Matrix::zeros(m, c);
    let mut dk = Matrix::zeros(m, c);
    let mut dv = Matrix::zeros(m, c);
    for (head, p) in tr.probs.iter().enumerate() {
        let qh = tr.q.column_block(head * d, d);
        let kh = tr.k.column_block(head * d, d);
        let vh = tr.v.column_block(head * d, d);
        let doh = dconcat.column_block(head * d, d);
        let (dp, dvh) = matmul_backward(p, &vh, &doh)?;
        let ds = softmax_rows_backward(p, &dp).scale(scale);
        let (dqh, dkh_t) = matmul_backward(&qh, &kh.transpose(), &ds)?;
        dq.set_column_block(head * d, &dqh);
        dk.set_column_block(head * d, &dkh_t.transpose());
        dv.set_column_block(head * d, &dvh);
    }
    let mut dh = accumulate_linear(&mut lp.q_w, &mut lp.q_b, h, &dq)?;
    dh.add_assign(&accumulate_linear(&mut lp.k_w, &mut lp.k_b, h, &dk)?)?;
    dh.add_assign(&accumulate_linear(&mut lp.v_w, &mut lp.v_b, h, &dv)?)?;
    Ok(dh)
}

/// MSA over a token sequence without normalization.
///
/// Returns the output-projected attention and the head-averaged CLS attention
/// row (length `1 + N`).
pub fn msa_forward(
    x: &TokenSequence,
    lp: &LayerParams,
    cfg: &EncoderConfig,
) -> Result<(Matrix, Vec<f64>)> {
    x.check()?;
    let (out, tr) = attention_forward(&x.tokens, lp, cfg.heads)?;
    Ok((out, tr.class_attention()))
}

/// Everything the backward pass of one block needs.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    pub n_tokens: usize,
    /// Positions (in the `1 + N` sequence) of the slow rows, CLS first.
    /// The representative row, when present, follows them.
    pub slow_rows: Vec<usize>,
    pub plan: Option<SlowFastPlan>,
    pub ln1: LayerNormCache,
    pub h1: Matrix,
    pub attn: AttentionTrace,
    pub ln2: LayerNormCache,
    pub h2: Matrix,
    pub pre_act: Matrix,
    pub act: Matrix,
    /// MSA and FFN residuals of the representative row.
    pub rep_residuals: Option<(Vec<f64>, Vec<f64>)>,
}

impl BlockTrace {
    pub fn has_representative(&self) -> bool {
        self.rep_residuals.is_some()
    }

    /// Head-averaged CLS attention over the slow sequence.
    pub fn class_attention(&self) -> Vec<f64> {
        self.attn.class_attention()
    }
}

/// One block. `plan = None` is the dense (vanilla) block.
pub fn block_forward(
    x: &Matrix,
    lp: &LayerParams,
    heads: usize,
    plan: Option<SlowFastPlan>,
) -> Result<(Matrix, BlockTrace)> {
    let n_tokens = x.rows();
    if n_tokens == 0 {
        return Err(Error::State("empty token sequence".into()));
    }
    let slow_rows: Vec<usize> = match &plan {
        None => (0..n_tokens).collect(),
        Some(p) => {
            p.validate(n_tokens - 1)?;
            std::iter::once(0)
                .chain(p.informative.iter().map(|i| i + 1))
                .collect()
        }
    };
    let mut slow = x.gather_rows(&slow_rows);
    if let Some(p) = plan.as_ref().filter(|p| p.has_representative()) {
        let rows: Vec<usize> = p.placeholder.iter().map(|i| i + 1).collect();
        slow.push_row(&weighted_row_sum(x, &rows, &p.weights));
    }

    let (h1, ln1) = layer_norm_rows_cached(
        &slow,
        lp.norm1_gain.value.data(),
        lp.norm1_bias.value.data(),
        LN_EPS,
    )?;
    let (r1, attn) = attention_forward(&h1, lp, heads)?;
    let mut y = slow;
    y.add_assign(&r1)?;
    let (h2, ln2) = layer_norm_rows_cached(
        &y,
        lp.norm2_gain.value.data(),
        lp.norm2_bias.value.data(),
        LN_EPS,
    )?;
    let pre_act = linear(&h2, &lp.fc1_w.value, &lp.fc1_b.value)?;
    let act = gelu_map(&pre_act);
    let r2 = linear(&act, &lp.fc2_w.value, &lp.fc2_b.value)?;
    let mut z = y;
    z.add_assign(&r2)?;

    let (out, rep_residuals) = match &plan {
        None => (z, None),
        Some(p) => {
            let mut out = x.clone();
            for (i, &row) in slow_rows.iter().enumerate() {
                out.row_mut(row).copy_from_slice(z.row(i));
            }
            let rep_residuals = if p.has_representative() {
                let rep = slow_rows.len();
                let delta: Vec<f64> = r1.row(rep).iter().zip(r2.row(rep)).map(|(a, b)| a + b).collect();
                for &ph in &p.placeholder {
                    for (o, d) in out.row_mut(ph + 1).iter_mut().zip(&delta) {
                        *o += d;
                    }
                }
                Some((r1.row(rep).to_vec(), r2.row(rep).to_vec()))
            } else {
                None
            };
            (out, rep_residuals)
        }
    };
    if !out.all_finite() {
        return Err(Error::Numeric("non-finite block output".into()));
    }
    Ok((
        out,
        BlockTrace {
            n_tokens,
            slow_rows,
            plan,
            ln1,
            h1,
            attn,
            ln2,
            h2,
            pre_act,
            act,
            rep_residuals,
        },
    ))
}

/// Backward of [`block_forward`]: accumulates parameter gradients into `lp`
/// and returns the cotangent of the block input.
///
/// Routing and aggregation weights are treated as constants.
pub fn block_backward(tr: &BlockTrace, lp: &mut LayerParams, dout: &Matrix) -> Result<Matrix> {
    let c = dout.cols();
    let has_rep = tr.has_representative();
    let m = tr.slow_rows.len() + usize::from(has_rep);

    let mut dz = Matrix::zeros(m, c);
    for (i, &row) in tr.slow_rows.iter().enumerate() {
        dz.row_mut(i).copy_from_slice(dout.row(row));
    }
    let mut dx = Matrix::zeros(tr.n_tokens, c);
    // Placeholders pass straight through and feed both representative residuals.
    let mut dph_sum = vec![0.0; c];
    if let Some(p) = tr.plan.as_ref().filter(|_| has_rep) {
        for &ph in &p.placeholder {
            let g = dout.row(ph + 1);
            dx.row_mut(ph + 1).copy_from_slice(g);
            for (s, v) in dph_sum.iter_mut().zip(g) {
                *s += v;
            }
        }
    }
    let add_rep = |mat: &mut Matrix| {
        if has_rep {
            for (o, v) in mat.row_mut(m - 1).iter_mut().zip(&dph_sum) {
                *o += v;
            }
        }
    };

    // z = y + r2, r2 = fc2(gelu(fc1(ln2(y))))
    let mut dr2 = dz.clone();
    add_rep(&mut dr2);
    let dact = accumulate_linear(&mut lp.fc2_w, &mut lp.fc2_b, &tr.act, &dr2)?;
    let dpre = gelu_backward(&tr.pre_act, &dact);
    let dh2 = accumulate_linear(&mut lp.fc1_w, &mut lp.fc1_b, &tr.h2, &dpre)?;
    let (dy_ln, dg2, db2) = layer_norm_backward(&tr.ln2, lp.norm2_gain.value.data(), &dh2);
    lp.norm2_gain.accumulate_slice(&dg2);
    lp.norm2_bias.accumulate_slice(&db2);
    let mut dy = dz;
    dy.add_assign(&dy_ln)?;

    // y = s + r1, r1 = msa(ln1(s))
    let mut dr1 = dy.clone();
    add_rep(&mut dr1);
    let dh1 = attention_backward(&tr.h1, &tr.attn, lp, &dr1)?;
    let (ds_ln, dg1, db1) = layer_norm_backward(&tr.ln1, lp.norm1_gain.value.data(), &dh1);
    lp.norm1_gain.accumulate_slice(&dg1);
    lp.norm1_bias.accumulate_slice(&db1);
    let mut ds = dy;
    ds.add_assign(&ds_ln)?;

    for (i, &row) in tr.slow_rows.iter().enumerate() {
        for (o, v) in dx.row_mut(row).iter_mut().zip(ds.row(i)) {
            *o += v;
        }
    }
    if let Some(p) = tr.plan.as_ref().filter(|_| has_rep) {
        let drep = ds.row(m - 1);
        for (&ph, &w) in p.placeholder.iter().zip(&p.weights) {
            for (o, v) in dx.row_mut(ph + 1).iter_mut().zip(drep) {
                *o += w * v;
            }
        }
    }
    Ok(dx)
}

/// Dense pre-norm block: `y = x + MSA(LN(x))`, `out = y + FFN(LN(y))`.
pub fn vanilla_block_forward(
    x: &TokenSequence,
    lp: &LayerParams,
    cfg: &EncoderConfig,
) -> Result<(TokenSequence, Vec<f64>)> {
    x.check()?;
    let (out, tr) = block_forward(&x.tokens, lp, cfg.heads, None)?;
    let seq = TokenSequence::new(out, x.n_patches)?;
    Ok((seq, tr.class_attention()))
}
