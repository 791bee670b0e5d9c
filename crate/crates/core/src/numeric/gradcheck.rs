use crate::error::{Error, Result};
use crate::numeric::ParamSet;

/// Central-difference step for 64-bit checks.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over entries of `|g_ad - g_fd| / max(1, |g_fd|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `f(params, with_grad)` must return the scalar loss at the current parameter
/// values and, when `with_grad` is set, accumulate its gradient into the
/// (already zeroed) `grad` buffers. Parameter values are restored exactly
/// after each perturbation.
pub fn check_gradients<P, F>(params: &mut P, h: f64, mut f: F) -> Result<GradCheckReport>
where
    P: ParamSet + ?Sized,
    F: FnMut(&mut P, bool) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {h}")));
    }
    params.zero_grads();
    let base = f(params, true)?;
    if !base.is_finite() {
        return Err(Error::Numeric("non-finite loss at unperturbed parameters".into()));
    }
    let analytic: Vec<Vec<f64>> = params
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let names: Vec<String> = params.params().iter().map(|p| p.name.clone()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (e, &g_ad) in grads.iter().enumerate() {
            let original = params.params()[pi].value.data()[e];
            params.params_mut()[pi].value.data_mut()[e] = original + h;
            let plus = f(params, false)?;
            params.params_mut()[pi].value.data_mut()[e] = original - h;
            let minus = f(params, false)?;
            params.params_mut()[pi].value.data_mut()[e] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {}[{e}]",
                    names[pi]
                )));
            }
            let g_fd = (plus - minus) / (2.0 * h);
            let rel = (g_ad - g_fd).abs() / g_fd.abs().max(1.0);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((names[pi].clone(), e));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
