//! Facial-motion mask generator: a stride-2 convolutional encoder, a trunk of
//! residual blocks and a transposed-convolution decoder ending in a sigmoid.

use serde::{Deserialize, Serialize};

use super::{bn_buffers, bn_buffers_mut, NamedState};
use crate::error::{FmpnError, Result};
use crate::nn::{
    relu, relu_backward, sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, Mode, Param, ParamInit, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmgArch {
    /// Channels after the first stride-2 convolution (and before the last
    /// transposed convolution).
    pub enc1: usize,
    /// Channels after the second stride-2 convolution, kept through the trunk.
    pub enc2: usize,
    pub res_blocks: usize,
}

impl Default for FmgArch {
    fn default() -> Self {
        FmgArch {
            enc1: 64,
            enc2: 128,
            res_blocks: 4,
        }
    }
}

impl FmgArch {
    /// Narrow variant sized for single-core desk runs.
    pub fn desk() -> Self {
        FmgArch {
            enc1: 8,
            enc2: 16,
            res_blocks: 4,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

#[derive(Debug)]
struct ResCache {
    c1: crate::nn::conv::ConvCache,
    b1: crate::nn::norm::BatchNormCache,
    act: Tensor,
    c2: crate::nn::conv::ConvCache,
    b2: crate::nn::norm::BatchNormCache,
}

impl ResBlock {
    fn new(name: &str, channels: usize, init: &mut ParamInit) -> Self {
        ResBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), channels, channels, 3, 1, 1, false, init),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), channels),
            conv2: Conv2d::new(&format!("{name}.conv2"), channels, channels, 3, 1, 1, false, init),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), channels),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, ResCache) {
        let (h, c1) = self.conv1.forward(x);
        let (mut act, b1) = self.bn1.forward(&h, mode);
        relu(&mut act);
        let (h, c2) = self.conv2.forward(&act);
        let (mut out, b2) = self.bn2.forward(&h, mode);
        out.add_assign(x);
        (out, ResCache { c1, b1, act, c2, b2 })
    }

    fn backward(&mut self, cache: &ResCache, dy: &Tensor) -> Tensor {
        let d = self.bn2.backward(&cache.b2, dy);
        let mut d = self.conv2.backward(&cache.c2, &d);
        relu_backward(&cache.act, &mut d);
        let d = self.bn1.backward(&cache.b1, &d);
        let mut dx = self.conv1.backward(&cache.c1, &d);
        dx.add_assign(dy);
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Fmg {
    arch: FmgArch,
    enc1: Conv2d,
    bn1: BatchNorm2d,
    enc2: Conv2d,
    bn2: BatchNorm2d,
    blocks: Vec<ResBlock>,
    dec1: ConvTranspose2d,
    bn3: BatchNorm2d,
    dec2: ConvTranspose2d,
}

#[derive(Debug)]
pub struct FmgCache {
    e1: crate::nn::conv::ConvCache,
    n1: crate::nn::norm::BatchNormCache,
    a1: Tensor,
    e2: crate::nn::conv::ConvCache,
    n2: crate::nn::norm::BatchNormCache,
    a2: Tensor,
    blocks: Vec<ResCache>,
    d1: crate::nn::conv::ConvTransposeCache,
    n3: crate::nn::norm::BatchNormCache,
    a3: Tensor,
    d2: crate::nn::conv::ConvTransposeCache,
    mask: Tensor,
}

impl Fmg {
    pub fn new(arch: FmgArch, init: &mut ParamInit) -> Self {
        let FmgArch { enc1, enc2, res_blocks } = arch;
        Fmg {
            arch,
            enc1: Conv2d::new("fmg.enc1", 1, enc1, 3, 2, 1, false, init),
            bn1: BatchNorm2d::new("fmg.enc1.bn", enc1),
            enc2: Conv2d::new("fmg.enc2", enc1, enc2, 3, 2, 1, false, init),
            bn2: BatchNorm2d::new("fmg.enc2.bn", enc2),
            blocks: (0..res_blocks)
                .map(|i| ResBlock::new(&format!("fmg.res{i}"), enc2, init))
                .collect(),
            dec1: ConvTranspose2d::new("fmg.dec1", enc2, enc1, 3, 2, 1, 1, false, init),
            bn3: BatchNorm2d::new("fmg.dec1.bn", enc1),
            dec2: ConvTranspose2d::new("fmg.dec2", enc1, 1, 3, 2, 1, 1, true, init),
        }
    }

    pub fn arch(&self) -> FmgArch {
        self.arch
    }

    /// Zeroes the last transposed convolution so every mask value is `sigmoid(0)`.
    pub fn zero_output_layer(&mut self) {
        self.dec2.weight.value.fill(0.0);
        if let Some(b) = &mut self.dec2.bias {
            b.value.fill(0.0);
        }
    }

    /// Maps a `(B, 1, H, W)` gray batch to `(B, 1, H, W)` masks in `(0, 1)`.
    pub fn forward(&mut self, gray: &Tensor, mode: Mode) -> Result<(Tensor, FmgCache)> {
        let [_, c, h, w] = gray.shape;
        if c != 1 {
            return Err(FmpnError::Shape(format!("mask generator takes 1 channel, got {c}")));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(FmpnError::Shape(format!(
                "mask generator input {h}x{w} is not divisible by 4"
            )));
        }
        let (x, e1) = self.enc1.forward(gray);
        let (mut a1, n1) = self.bn1.forward(&x, mode);
        relu(&mut a1);
        let (x, e2) = self.enc2.forward(&a1);
        let (mut a2, n2) = self.bn2.forward(&x, mode);
        relu(&mut a2);
        let mut x = a2.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (y, cache) = block.forward(&x, mode);
            blocks.push(cache);
            x = y;
        }
        let (x, d1) = self.dec1.forward(&x);
        let (mut a3, n3) = self.bn3.forward(&x, mode);
        relu(&mut a3);
        let (mut mask, d2) = self.dec2.forward(&a3);
        for v in &mut mask.data {
            *v = sigmoid(*v);
        }
        let cache = FmgCache {
            e1,
            n1,
            a1,
            e2,
            n2,
            a2,
            blocks,
            d1,
            n3,
            a3,
            d2,
            mask: mask.clone(),
        };
        Ok((mask, cache))
    }

    /// Accumulates parameter gradients from `∂L/∂mask`.
    pub fn backward(&mut self, cache: &FmgCache, dmask: &Tensor) -> Tensor {
        let mut d = dmask.clone();
        for (g, &m) in d.data.iter_mut().zip(&cache.mask.data) {
            *g *= m * (1.0 - m);
        }
        let mut d = self.dec2.backward(&cache.d2, &d);
        relu_backward(&cache.a3, &mut d);
        let d = self.bn3.backward(&cache.n3, &d);
        let mut d = self.dec1.backward(&cache.d1, &d);
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = block.backward(bc, &d);
        }
        relu_backward(&cache.a2, &mut d);
        let d = self.bn2.backward(&cache.n2, &d);
        let mut d = self.enc2.backward(&cache.e2, &d);
        relu_backward(&cache.a1, &mut d);
        let d = self.bn1.backward(&cache.n1, &d);
        self.enc1.backward(&cache.e1, &d)
    }

    fn norms(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1, &self.bn2];
        for b in &self.blocks {
            v.push(&b.bn1);
            v.push(&b.bn2);
        }
        v.push(&self.bn3);
        v
    }
}

impl NamedState for Fmg {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.enc1.params();
        v.extend(self.bn1.params());
        v.extend(self.enc2.params());
        v.extend(self.bn2.params());
        for b in &self.blocks {
            v.extend(b.conv1.params());
            v.extend(b.bn1.params());
            v.extend(b.conv2.params());
            v.extend(b.bn2.params());
        }
        v.extend(self.dec1.params());
        v.extend(self.bn3.params());
        v.extend(self.dec2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.enc1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.enc2.params_mut());
        v.extend(self.bn2.params_mut());
        for b in &mut self.blocks {
            v.extend(b.conv1.params_mut());
            v.extend(b.bn1.params_mut());
            v.extend(b.conv2.params_mut());
            v.extend(b.bn2.params_mut());
        }
        v.extend(self.dec1.params_mut());
        v.extend(self.bn3.params_mut());
        v.extend(self.dec2.params_mut());
        v
    }

    fn buffers(&self) -> Vec<(String, &Vec<f64>)> {
        self.norms().into_iter().flat_map(bn_buffers).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut v: Vec<(String, &mut Vec<f64>)> = Vec::new();
        v.extend(bn_buffers_mut(&mut self.bn1));
        v.extend(bn_buffers_mut(&mut self.bn2));
        for b in &mut self.blocks {
            v.extend(bn_buffers_mut(&mut b.bn1));
            v.extend(bn_buffers_mut(&mut b.bn2));
        }
        v.extend(bn_buffers_mut(&mut self.bn3));
        v
    }
}
