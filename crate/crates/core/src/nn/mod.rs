//! Minimal double-precision layers with explicit forward/backward passes.
//!
//! Every layer keeps its parameters in [`Param`]s whose `grad` buffers are
//! accumulated by `backward`; callers zero them between steps. Tensors are
//! NCHW.

pub mod conv;
mod gemm;
mod linear;
pub mod norm;
mod param;
mod tensor;

pub use conv::{Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use param::{Param, ParamInit};
pub use tensor::Tensor;

/// Batch-statistics (training) or running-statistics (evaluation) behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn relu(x: &mut Tensor) {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
}

/// Backward of ReLU given its output.
pub fn relu_backward(out: &Tensor, grad: &mut Tensor) {
    for (g, &y) in grad.data.iter_mut().zip(&out.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean over the spatial axes: `(N, C, H, W) → (N, C, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape;
    let hw = h * w;
    let data = x.data.chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(grad: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let hw = input_shape[2] * input_shape[3];
    let mut out = Tensor::zeros(input_shape);
    for (chunk, &g) in out.data.chunks_exact_mut(hw).zip(&grad.data) {
        chunk.fill(g / hw as f64);
    }
    out
}
