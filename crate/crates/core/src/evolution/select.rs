use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numeric::{weighted_row_sum, Matrix};

/// Partition of patch indices for one layer. Both lists are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    pub informative: Vec<usize>,
    pub placeholder: Vec<usize>,
    pub layer: usize,
}

impl SelectionResult {
    pub fn at_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }

    pub fn k(&self) -> usize {
        self.informative.len()
    }

    pub fn n(&self) -> usize {
        self.informative.len() + self.placeholder.len()
    }

    /// `mask[i]` is true for informative patch `i`.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n()];
        for &i in &self.informative {
            m[i] = true;
        }
        m
    }
}

/// `max(1, floor(ratio * n))`, clamped to `n`.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    // The small bias keeps products like 0.3 * 10 from flooring to 2.
    let k = (ratio * n as f64 + 1e-9).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Top-`k` patches by score; ties go to the lower index.
pub fn select_informative(scores: &[f64], ratio: f64) -> Result<SelectionResult> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Argument(format!("keep ratio {ratio} outside (0, 1]")));
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::Argument("no patch tokens to select from".into()));
    }
    let k = keep_count(ratio, n);
    let mut order: Vec<usize> = (0..n).collect();
    let by_rank = |&a: &usize, &b: &usize| -> Ordering {
        scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
    };
    if k < n {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    let mut informative = order[..k].to_vec();
    let mut placeholder = order[k..].to_vec();
    informative.sort_unstable();
    placeholder.sort_unstable();
    Ok(SelectionResult {
        informative,
        placeholder,
        layer: 0,
    })
}

/// Weights renormalized to sum to one; uniform when they sum to zero.
pub fn normalized_weights(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    }
}

/// Representative token: weighted sum of the placeholder rows.
pub fn aggregate_placeholders(x_ph: &Matrix, weights: &[f64]) -> Result<Vec<f64>> {
    if x_ph.rows() == 0 {
        return Err(Error::Argument("no placeholders to aggregate".into()));
    }
    if weights.len() != x_ph.rows() {
        return Err(Error::dim("aggregate_placeholders", x_ph.shape(), (weights.len(), 1)));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Argument(format!("negative or NaN aggregation weight {w}")));
    }
    let rows: Vec<usize> = (0..x_ph.rows()).collect();
    Ok(weighted_row_sum(x_ph, &rows, &normalized_weights(weights)))
}
