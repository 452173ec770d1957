use super::gemm::gemm;
use super::{Param, ParamInit};

/// Fully connected layer on `(N, in)` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, init: &mut ParamInit) -> Self {
        Linear {
            weight: init.weight(format!("{name}.weight"), vec![outputs, inputs], inputs),
            bias: init.bias(format!("{name}.bias"), vec![outputs], inputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(rows, i, o, x, false, &self.weight.value, true, 1.0, &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.inputs(), self.outputs());
        gemm(o, rows, i, dy, true, x, false, 1.0, &mut self.weight.grad);
        for row in dy.chunks_exact(o) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; rows * i];
        gemm(rows, o, i, dy, false, &self.weight.value, false, 0.0, &mut dx);
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
