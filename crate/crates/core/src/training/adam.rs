use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet};

/// Adam with bias correction and decoupled weight decay.
///
/// Decay applies only to parameters flagged `decay` (the weight matrices).
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new<P: ParamSet + ?Sized>(params: &P, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Adam {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, lr: f64) -> Result<()> {
        let mut ps = params.params_mut();
        if ps.len() != self.m.len() {
            return Err(Error::State("optimizer state does not match parameters".into()));
        }
        if let Some(bad) = ps.iter().find(|p| !p.grad.all_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {}", bad.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in ps.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = if p.decay { lr * self.weight_decay } else { 0.0 };
            let grad = p.grad.data().to_vec();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps) + decay * *w;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Parameter;

    fn scalar(v: f64, decay: bool) -> Vec<Parameter> {
        vec![Parameter::new("w", Matrix::filled(1, 1, v), decay)]
    }

    #[test]
    fn hand_trace_two_steps() {
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut ps = scalar(1.0, false);
        let mut opt = Adam::new(&ps, b1, b2, eps, 0.0);

        // step 1, g = 0.5
        ps[0].grad.set(0, 0, 0.5);
        opt.step(&mut ps, lr).unwrap();
        let m1 = 0.1 * 0.5;
        let v1 = 0.001 * 0.25;
        let w1 = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + eps);
        assert!((ps[0].value.get(0, 0) - w1).abs() < 1e-12);

        // step 2, g = -1.0
        ps[0].grad.set(0, 0, -1.0);
        opt.step(&mut ps, lr).unwrap();
        let m2 = 0.9 * m1 + -0.1;
        let v2 = 0.999 * v1 + 0.001 * 1.0;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        let w2 = w1 - lr * m_hat / (v_hat.sqrt() + eps);
        assert!((ps[0].value.get(0, 0) - w2).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_only_decays_weights() {
        let mut ps = vec![
            Parameter::new("w", Matrix::filled(1, 2, 2.0), true),
            Parameter::new("b", Matrix::filled(1, 2, 2.0), false),
        ];
        let mut opt = Adam::new(&ps, 0.9, 0.999, 1e-8, 0.1);
        opt.step(&mut ps, 0.01).unwrap();
        assert!((ps[0].value.get(0, 0) - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert_eq!(ps[1].value.get(0, 0), 2.0);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut ps = scalar(3.0, true);
        let mut opt = Adam::new(&ps, 0.9, 0.999, 1e-8, 0.1);
        ps[0].grad.set(0, 0, 4.0);
        opt.step(&mut ps, 0.0).unwrap();
        assert_eq!(ps[0].value.get(0, 0), 3.0);
    }

    #[test]
    fn non_finite_grad_names_param() {
        let mut ps = scalar(3.0, true);
        let mut opt = Adam::new(&ps, 0.9, 0.999, 1e-8, 0.0);
        ps[0].grad.set(0, 0, f64::INFINITY);
        let err = opt.step(&mut ps, 0.1).unwrap_err().to_string();
        assert!(err.contains('w'), "{err}");
    }
}
