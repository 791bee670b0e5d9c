use crate::error::{Error, Result};

/// Exponential moving average of class attention across layers.
///
/// `scores` covers the `N` patch tokens; the CLS entry is tracked separately
/// and never competes in selection.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalClassAttention {
    pub scores: Vec<f64>,
    pub cls_share: f64,
    pub initialized: bool,
}

impl GlobalClassAttention {
    pub fn new(n_patches: usize) -> Self {
        GlobalClassAttention {
            scores: vec![0.0; n_patches],
            cls_share: 0.0,
            initialized: false,
        }
    }

    /// Applies `g <- alpha * g + (1 - alpha) * a` to the masked patch entries
    /// (all entries when `mask` is `None`) and to the CLS share.
    ///
    /// `class_attention` has length `1 + N` with CLS first. The first unmasked
    /// update copies `class_attention` instead of averaging.
    pub fn update(&mut self, class_attention: &[f64], alpha: f64, mask: Option<&[usize]>) -> Result<()> {
        let n = self.scores.len();
        if class_attention.len() != n + 1 {
            return Err(Error::dim("update_global_attention", (1, n + 1), (1, class_attention.len())));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")));
        }
        if !self.initialized {
            if mask.is_some() {
                return Err(Error::State(
                    "masked update of an uninitialized global class attention".into(),
                ));
            }
            self.cls_share = class_attention[0];
            self.scores.copy_from_slice(&class_attention[1..]);
            self.initialized = true;
            return Ok(());
        }
        let blend = |old: f64, new: f64| alpha * old + (1.0 - alpha) * new;
        self.cls_share = blend(self.cls_share, class_attention[0]);
        match mask {
            None => {
                for (g, &a) in self.scores.iter_mut().zip(&class_attention[1..]) {
                    *g = blend(*g, a);
                }
            }
            Some(idx) => {
                for &i in idx {
                    if i >= n {
                        return Err(Error::Index(format!("mask index {i} outside 0..{n}")));
                    }
                    self.scores[i] = blend(self.scores[i], class_attention[i + 1]);
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`GlobalClassAttention::update`].
pub fn update_global_attention(
    g: &GlobalClassAttention,
    class_attention: &[f64],
    alpha: f64,
    mask: Option<&[usize]>,
) -> Result<GlobalClassAttention> {
    let mut out = g.clone();
    out.update(class_attention, alpha, mask)?;
    Ok(out)
}
