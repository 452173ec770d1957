//! Prior fusion: `fused = holistic(rgb) + masked(gray ⊙ mask)` where both
//! branches are 1×1 convolutions with bias (3→3 and 1→3 channels).

use super::NamedState;
use crate::error::{FmpnError, Result};
use crate::nn::{Param, Tensor};

#[derive(Debug, Clone)]
pub struct Pfn {
    /// `(3, 3)` weights of the holistic branch.
    pub holistic_weight: Param,
    pub holistic_bias: Param,
    /// `(3, 1)` weights of the masked branch.
    pub masked_weight: Param,
    pub masked_bias: Param,
}

#[derive(Debug)]
pub struct PfnCache {
    rgb: Tensor,
    gray: Tensor,
    masked: Tensor,
}

impl Default for Pfn {
    fn default() -> Self {
        Pfn::pass_through()
    }
}

impl Pfn {
    /// Holistic branch at identity, masked branch replicating its input to
    /// all three channels, zero biases.
    pub fn pass_through() -> Self {
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        Pfn {
            holistic_weight: Param::new("pfn.holistic.weight", vec![3, 3], eye),
            holistic_bias: Param::zeros("pfn.holistic.bias", vec![3]),
            masked_weight: Param::filled("pfn.masked.weight", vec![3, 1], 1.0),
            masked_bias: Param::zeros("pfn.masked.bias", vec![3]),
        }
    }

    pub fn fuse(&self, rgb: &Tensor, gray: &Tensor, mask: &Tensor) -> Result<(Tensor, PfnCache)> {
        let [n, c, h, w] = rgb.shape;
        if c != 3 || gray.shape != [n, 1, h, w] || mask.shape != gray.shape {
            return Err(FmpnError::Shape(format!(
                "fusion inputs rgb {:?}, gray {:?}, mask {:?}",
                rgb.shape, gray.shape, mask.shape
            )));
        }
        let plane = h * w;
        let mut masked = gray.clone();
        for (v, m) in masked.data.iter_mut().zip(&mask.data) {
            *v *= m;
        }
        let hw = &self.holistic_weight.value;
        let mw = &self.masked_weight.value;
        let mut out = Tensor::zeros(rgb.shape);
        for b in 0..n {
            let src = rgb.item(b);
            let gm = masked.item(b);
            let dst = out.item_mut(b);
            for o in 0..3 {
                let bias = self.holistic_bias.value[o] + self.masked_bias.value[o];
                let row = &mut dst[o * plane..(o + 1) * plane];
                for (p, v) in row.iter_mut().enumerate() {
                    *v = bias
                        + hw[o * 3] * src[p]
                        + hw[o * 3 + 1] * src[plane + p]
                        + hw[o * 3 + 2] * src[2 * plane + p]
                        + mw[o] * gm[p];
                }
            }
        }
        Ok((
            out,
            PfnCache {
                rgb: rgb.clone(),
                gray: gray.clone(),
                masked,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `∂L/∂mask`.
    pub fn backward(&mut self, cache: &PfnCache, dout: &Tensor) -> Tensor {
        let [n, _, h, w] = dout.shape;
        let plane = h * w;
        let mut dmask = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let d = dout.item(b);
            let src = cache.rgb.item(b);
            let gm = cache.masked.item(b);
            let g = cache.gray.item(b);
            let dm = dmask.item_mut(b);
            for o in 0..3 {
                let row = &d[o * plane..(o + 1) * plane];
                let s: f64 = row.iter().sum();
                self.holistic_bias.grad[o] += s;
                self.masked_bias.grad[o] += s;
                for i in 0..3 {
                    let ch = &src[i * plane..(i + 1) * plane];
                    self.holistic_weight.grad[o * 3 + i] += row.iter().zip(ch).map(|(a, b)| a * b).sum::<f64>();
                }
                self.masked_weight.grad[o] += row.iter().zip(gm).map(|(a, b)| a * b).sum::<f64>();
                let wo = self.masked_weight.value[o];
                for p in 0..plane {
                    dm[p] += row[p] * wo * g[p];
                }
            }
        }
        dmask
    }
}

impl NamedState for Pfn {
    fn params(&self) -> Vec<&Param> {
        vec![&self.holistic_weight, &self.holistic_bias, &self.masked_weight, &self.masked_bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.holistic_weight,
            &mut self.holistic_bias,
            &mut self.masked_weight,
            &mut self.masked_bias,
        ]
    }

    fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        Vec::new()
    }
}
