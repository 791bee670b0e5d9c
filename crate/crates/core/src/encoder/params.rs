use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet, Parameter, RngState};

const INIT_STD: f64 = 0.02;

/// Weights of one pre-norm encoder block. Vectors are stored as `1 x n` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub norm1_gain: Parameter,
    pub norm1_bias: Parameter,
    pub q_w: Parameter,
    pub q_b: Parameter,
    pub k_w: Parameter,
    pub k_b: Parameter,
    pub v_w: Parameter,
    pub v_b: Parameter,
    pub proj_w: Parameter,
    pub proj_b: Parameter,
    pub norm2_gain: Parameter,
    pub norm2_bias: Parameter,
    pub fc1_w: Parameter,
    pub fc1_b: Parameter,
    pub fc2_w: Parameter,
    pub fc2_b: Parameter,
}

impl LayerParams {
    fn init(index: usize, cfg: &EncoderConfig, rng: &mut RngState) -> Self {
        let c = cfg.embed_dim;
        let hid = cfg.hidden();
        let name = |s: &str| format!("blocks.{index}.{s}");
        let mut weight = |s: &str, r: usize, k: usize| {
            Parameter::new(name(s), rng.trunc_normal_matrix(r, k, INIT_STD), true)
        };
        let q_w = weight("attn.q.weight", c, c);
        let k_w = weight("attn.k.weight", c, c);
        let v_w = weight("attn.v.weight", c, c);
        let proj_w = weight("attn.proj.weight", c, c);
        let fc1_w = weight("mlp.fc1.weight", c, hid);
        let fc2_w = weight("mlp.fc2.weight", hid, c);
        let zeros = |s: &str, n: usize| Parameter::new(name(s), Matrix::zeros(1, n), false);
        let ones = |s: &str, n: usize| Parameter::new(name(s), Matrix::filled(1, n, 1.0), false);
        LayerParams {
            norm1_gain: ones("norm1.gain", c),
            norm1_bias: zeros("norm1.bias", c),
            q_w,
            q_b: zeros("attn.q.bias", c),
            k_w,
            k_b: zeros("attn.k.bias", c),
            v_w,
            v_b: zeros("attn.v.bias", c),
            proj_w,
            proj_b: zeros("attn.proj.bias", c),
            norm2_gain: ones("norm2.gain", c),
            norm2_bias: zeros("norm2.bias", c),
            fc1_w,
            fc1_b: zeros("mlp.fc1.bias", hid),
            fc2_w,
            fc2_b: zeros("mlp.fc2.bias", c),
        }
    }

    fn all(&self) -> [&Parameter; 16] {
        [
            &self.norm1_gain,
            &self.norm1_bias,
            &self.q_w,
            &self.q_b,
            &self.k_w,
            &self.k_b,
            &self.v_w,
            &self.v_b,
            &self.proj_w,
            &self.proj_b,
            &self.norm2_gain,
            &self.norm2_bias,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    fn all_mut(&mut self) -> [&mut Parameter; 16] {
        [
            &mut self.norm1_gain,
            &mut self.norm1_bias,
            &mut self.q_w,
            &mut self.q_b,
            &mut self.k_w,
            &mut self.k_b,
            &mut self.v_w,
            &mut self.v_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.norm2_gain,
            &mut self.norm2_bias,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }
}

/// All learnable weights of the encoder plus classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub patch_w: Parameter,
    pub patch_b: Parameter,
    pub cls_token: Parameter,
    pub pos_embed: Parameter,
    pub layers: Vec<LayerParams>,
    pub head_w: Parameter,
    pub head_b: Parameter,
}

impl ModelParams {
    /// Truncated-normal(0.02) projections, zero biases, unit LN gains,
    /// normal(0.02) CLS and position embeddings.
    pub fn init(cfg: &EncoderConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let patch_w = Parameter::new(
            "patch_embed.weight",
            rng.trunc_normal_matrix(cfg.patch_dim(), c, INIT_STD),
            true,
        );
        let patch_b = Parameter::new("patch_embed.bias", Matrix::zeros(1, c), false);
        let cls_token = Parameter::new("cls_token", rng.normal_matrix(1, c, INIT_STD), false);
        let pos_embed = Parameter::new(
            "pos_embed",
            rng.normal_matrix(cfg.n_tokens(), c, INIT_STD),
            false,
        );
        let layers = (0..cfg.depth)
            .map(|i| LayerParams::init(i, cfg, rng))
            .collect();
        let head_w = Parameter::new(
            "head.weight",
            rng.trunc_normal_matrix(c, cfg.num_classes, INIT_STD),
            true,
        );
        let head_b = Parameter::new("head.bias", Matrix::zeros(1, cfg.num_classes), false);
        Ok(ModelParams {
            patch_w,
            patch_b,
            cls_token,
            pos_embed,
            layers,
            head_w,
            head_b,
        })
    }

    /// Checks every parameter shape against `cfg`.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = ModelParams::init(cfg, &mut RngState::new(0))?;
        if expected.layers.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "depth {} in params vs {} in config",
                self.layers.len(),
                expected.layers.len()
            )));
        }
        for (have, want) in self.params().iter().zip(expected.params()) {
            if have.name != want.name || have.value.shape() != want.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, config expects {} with {:?}",
                    have.name,
                    have.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Overwrites every value with `v` (gradients untouched).
    pub fn fill_values(&mut self, v: f64) {
        for p in self.params_mut() {
            p.value.fill(v);
        }
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.patch_w, &self.patch_b, &self.cls_token, &self.pos_embed];
        for l in &self.layers {
            out.extend(l.all());
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![
            &mut self.patch_w,
            &mut self.patch_b,
            &mut self.cls_token,
            &mut self.pos_embed,
        ];
        for l in &mut self.layers {
            out.extend(l.all_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn names_unique_and_shapes_consistent() {
        let cfg = EncoderConfig::new(8, 4, 1, 8, 2, 3, 5);
        let p = ModelParams::init(&cfg, &mut RngState::new(1)).unwrap();
        let names: HashSet<_> = p.params().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), p.params().len());
        assert_eq!(p.params().len(), 4 + 3 * 16 + 2);
        p.check_shapes(&cfg).unwrap();
        let other = EncoderConfig::new(8, 4, 1, 8, 2, 2, 5);
        assert!(p.check_shapes(&other).is_err());
        for q in p.params() {
            assert_eq!(q.value.shape(), q.grad.shape());
        }
    }
}
