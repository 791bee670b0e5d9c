use crate::numeric::Matrix;

/// A learnable matrix with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Whether decoupled weight decay applies (weight matrices only).
    pub decay: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix, decay: bool) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Parameter {
            name: name.into(),
            value,
            grad,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn accumulate(&mut self, g: &Matrix) {
        self.grad
            .add_assign(g)
            .unwrap_or_else(|e| panic!("gradient shape for {}: {e}", self.name));
    }

    pub fn accumulate_slice(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.grad.data().len(), "gradient length for {}", self.name);
        for (a, b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// A collection of parameters visited in a fixed order.
pub trait ParamSet {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

impl ParamSet for Vec<Parameter> {
    fn params(&self) -> Vec<&Parameter> {
        self.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.iter_mut().collect()
    }
}
