use crate::encoder::block::{block_backward, block_forward, BlockTrace, SlowFastPlan};
use crate::encoder::{patchify, EncoderConfig, Image, LayerParams, ModelParams, TokenSequence};
use crate::error::{Error, Result};
use crate::numeric::{matmul, matmul_backward, Matrix};

/// Per-layer attention bookkeeping of one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionRecord {
    /// Head-averaged CLS attention per layer, length `1 + N`.
    ///
    /// In a slow-fast layer the representative token's share is handed back
    /// to the placeholders in proportion to their aggregation weights, so each
    /// vector still sums to one.
    pub class_attention: Vec<Vec<f64>>,
    /// Head-averaged attention matrices over each layer's slow sequence;
    /// populated only when recording was requested.
    pub full_attention: Option<Vec<Matrix>>,
}

/// Chooses the routing of each layer and observes its result.
pub trait LayerRouter {
    fn route(&mut self, layer: usize, tokens: &Matrix, lp: &LayerParams) -> Result<Option<SlowFastPlan>>;

    fn observe(&mut self, _layer: usize, _trace: &BlockTrace) -> Result<()> {
        Ok(())
    }
}

/// Routes every layer densely.
pub struct DenseRouter;

impl LayerRouter for DenseRouter {
    fn route(&mut self, _: usize, _: &Matrix, _: &LayerParams) -> Result<Option<SlowFastPlan>> {
        Ok(None)
    }
}

/// Saved state of a full forward pass.
#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub n_patches: usize,
    pub patches: Matrix,
    /// Token matrices `x_0 ..= x_depth`.
    pub tokens: Vec<Matrix>,
    pub blocks: Vec<BlockTrace>,
    pub logits_cls: Vec<f64>,
    pub logits_avg: Vec<f64>,
}

impl ModelTrace {
    pub fn attention_record(&self, with_full: bool) -> AttentionRecord {
        let class_attention = self
            .blocks
            .iter()
            .map(|b| scatter_class_attention(b, self.n_patches))
            .collect();
        let full_attention =
            with_full.then(|| self.blocks.iter().map(|b| b.attn.mean_attention()).collect());
        AttentionRecord {
            class_attention,
            full_attention,
        }
    }

    pub fn plans(&self) -> Vec<Option<SlowFastPlan>> {
        self.blocks.iter().map(|b| b.plan.clone()).collect()
    }

    pub fn final_tokens(&self) -> &Matrix {
        self.tokens.last().expect("x_0 always present")
    }
}

/// Maps a block's slow-sequence class attention back onto `1 + N` positions.
pub fn scatter_class_attention(b: &BlockTrace, n_patches: usize) -> Vec<f64> {
    let a = b.class_attention();
    match &b.plan {
        None => a,
        Some(plan) => {
            let mut out = vec![0.0; n_patches + 1];
            for (i, &row) in b.slow_rows.iter().enumerate() {
                out[row] = a[i];
            }
            if b.has_representative() {
                let rep = a[b.slow_rows.len()];
                for (&ph, &w) in plan.placeholder.iter().zip(&plan.weights) {
                    out[ph + 1] = rep * w;
                }
            }
            out
        }
    }
}

/// `x_0 = [cls | patches · W + b] + pos`.
pub fn embed(image: &Image, params: &ModelParams, cfg: &EncoderConfig) -> Result<TokenSequence> {
    let patches = patchify(image, cfg)?;
    let tokens = embed_patches(&patches, params)?;
    TokenSequence::new(tokens, cfg.n_patches())
}

fn embed_patches(patches: &Matrix, params: &ModelParams) -> Result<Matrix> {
    let proj = matmul(patches, &params.patch_w.value)?;
    let c = proj.cols();
    if params.pos_embed.value.shape() != (patches.rows() + 1, c) {
        return Err(Error::dim("embed", params.pos_embed.value.shape(), (patches.rows() + 1, c)));
    }
    let mut tokens = Matrix::zeros(patches.rows() + 1, c);
    tokens.row_mut(0).copy_from_slice(params.cls_token.value.row(0));
    for i in 0..proj.rows() {
        let dst = tokens.row_mut(i + 1);
        for ((d, p), b) in dst.iter_mut().zip(proj.row(i)).zip(params.patch_b.value.row(0)) {
            *d = p + b;
        }
    }
    tokens.add_assign(&params.pos_embed.value)?;
    Ok(tokens)
}

fn head_logits(features: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let mut out = matmul(&Matrix::row_vector(features), &params.head_w.value)?.into_data();
    for (o, b) in out.iter_mut().zip(params.head_b.value.data()) {
        *o += b;
    }
    Ok(out)
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

/// Shared-head logits: `(head(CLS), head(mean of patch rows))`.
pub fn classify(tokens: &Matrix, params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        head_logits(tokens.row(0), params)?,
        head_logits(&mean_patch_row(tokens), params)?,
    ))
}

/// Runs embedding, every block under `router`, and the classifier head.
pub fn forward_traced(
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    router: &mut dyn LayerRouter,
) -> Result<ModelTrace> {
    cfg.validate()?;
    if params.layers.len() != cfg.depth {
        return Err(Error::Config(format!(
            "params carry {} layers, config depth is {}",
            params.layers.len(),
            cfg.depth
        )));
    }
    let patches = patchify(image, cfg)?;
    let x0 = embed_patches(&patches, params)?;
    let n_patches = cfg.n_patches();
    let mut tokens = vec![x0];
    let mut blocks = Vec::with_capacity(cfg.depth);
    for (l, lp) in params.layers.iter().enumerate() {
        let x = tokens.last().expect("non-empty");
        let plan = router.route(l, x, lp)?;
        let (out, trace) = block_forward(x, lp, cfg.heads, plan)?;
        if out.rows() != n_patches + 1 {
            return Err(Error::State(format!(
                "layer {l} emitted {} rows, expected {}",
                out.rows(),
                n_patches + 1
            )));
        }
        router.observe(l, &trace)?;
        blocks.push(trace);
        tokens.push(out);
    }
    let (logits_cls, logits_avg) = classify(tokens.last().expect("non-empty"), params)?;
    Ok(ModelTrace {
        n_patches,
        patches,
        tokens,
        blocks,
        logits_cls,
        logits_avg,
    })
}

/// Accumulates parameter gradients for cotangents on both logit vectors.
pub fn backward(
    trace: &ModelTrace,
    params: &mut ModelParams,
    dlogits_cls: &[f64],
    dlogits_avg: &[f64],
) -> Result<()> {
    let last = trace.final_tokens();
    let n = trace.n_patches;
    let cls_feat = Matrix::row_vector(last.row(0));
    let avg_feat = Matrix::row_vector(&mean_patch_row(last));
    let dcls = Matrix::row_vector(dlogits_cls);
    let davg = Matrix::row_vector(dlogits_avg);
    let (dcls_feat, dw_cls) = matmul_backward(&cls_feat, &params.head_w.value, &dcls)?;
    let (davg_feat, dw_avg) = matmul_backward(&avg_feat, &params.head_w.value, &davg)?;
    params.head_w.accumulate(&dw_cls);
    params.head_w.accumulate(&dw_avg);
    params.head_b.accumulate_slice(dlogits_cls);
    params.head_b.accumulate_slice(dlogits_avg);

    let mut dx = Matrix::zeros(last.rows(), last.cols());
    dx.row_mut(0).copy_from_slice(dcls_feat.row(0));
    let share: Vec<f64> = davg_feat.row(0).iter().map(|v| v / n as f64).collect();
    for r in 1..=n {
        dx.row_mut(r).copy_from_slice(&share);
    }

    for (bt, lp) in trace.blocks.iter().zip(params.layers.iter_mut()).rev() {
        dx = block_backward(bt, lp, &dx)?;
    }

    params.pos_embed.accumulate(&dx);
    params.cls_token.accumulate_slice(dx.row(0));
    let dproj = dx.gather_rows(&(1..=n).collect::<Vec<_>>());
    params.patch_b.accumulate_slice(&dproj.col_sums());
    let (_, dw) = matmul_backward(&trace.patches, &params.patch_w.value, &dproj)?;
    params.patch_w.accumulate(&dw);
    Ok(())
}

/// Output of a model forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits_cls: Vec<f64>,
    pub logits_avg: Vec<f64>,
    pub record: AttentionRecord,
}

/// Dense forward. `record` keeps the full head-averaged attention matrices.
pub fn model_forward_vanilla(
    image: &Image,
    params: &ModelParams,
    cfg: &EncoderConfig,
    record: bool,
) -> Result<ModelOutput> {
    let trace = forward_traced(image, params, cfg, &mut DenseRouter)?;
    Ok(ModelOutput {
        record: trace.attention_record(record),
        logits_cls: trace.logits_cls,
        logits_avg: trace.logits_avg,
    })
}
