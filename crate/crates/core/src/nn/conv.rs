use super::gemm::gemm;
use super::{Param, ParamInit, Tensor};

/// Geometry of a strided convolution between a large `(c, h, w)` image and
/// its `(oh, ow)` output grid.
#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Geom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col(&self, src: &[f64], col: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            let plane = &src[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut col[((ci * self.k + ky) * self.k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let out = &mut row[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let line = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                line[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns back onto the image.
    fn col2im(&self, col: &[f64], dst: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            let plane = &mut dst[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &col[((ci * self.k + ky) * self.k + kx) * p..][..p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in row[oy * self.ow..(oy + 1) * self.ow].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                line[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_exact_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn bias_grad(grad: &mut [f64], dy: &Tensor) {
    let plane = dy.shape[2] * dy.shape[3];
    for n in 0..dy.batch() {
        for (g, chunk) in grad.iter_mut().zip(dy.item(n).chunks_exact(plane)) {
            *g += chunk.iter().sum::<f64>();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: &mut ParamInit,
    ) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            weight: init.weight(format!("{name}.weight"), vec![out_c, in_c, k, k], fan_in),
            bias: bias.then(|| init.bias(format!("{name}.bias"), vec![out_c], fan_in)),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    fn geom(&self, shape: [usize; 4]) -> Geom {
        Geom::new(shape[1], shape[2], shape[3], self.weight.shape[2], self.stride, self.pad)
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvCache) {
        assert_eq!(x.shape[1], self.in_channels(), "{} input channels", self.weight.name);
        let g = self.geom(x.shape);
        let (rows, p, oc) = (g.col_rows(), g.positions(), self.out_channels());
        let mut cols = vec![0.0; x.batch() * rows * p];
        let mut y = Tensor::zeros([x.batch(), oc, g.oh, g.ow]);
        for n in 0..x.batch() {
            let col = &mut cols[n * rows * p..(n + 1) * rows * p];
            g.im2col(x.item(n), col);
            let out = y.item_mut(n);
            gemm(oc, rows, p, &self.weight.value, false, col, false, 0.0, out);
            if let Some(b) = &self.bias {
                add_bias(out, &b.value, p);
            }
        }
        (
            y,
            ConvCache {
                cols,
                in_shape: x.shape,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Tensor) -> Tensor {
        let g = self.geom(cache.in_shape);
        let (rows, p, oc) = (g.col_rows(), g.positions(), self.out_channels());
        let mut dx = Tensor::zeros(cache.in_shape);
        let mut dcol = vec![0.0; rows * p];
        for n in 0..dy.batch() {
            let col = &cache.cols[n * rows * p..(n + 1) * rows * p];
            let d = dy.item(n);
            gemm(oc, p, rows, d, false, col, true, 1.0, &mut self.weight.grad);
            gemm(rows, oc, p, &self.weight.value, true, d, false, 0.0, &mut dcol);
            g.col2im(&dcol, dx.item_mut(n));
        }
        if let Some(b) = &mut self.bias {
            bias_grad(&mut b.grad, dy);
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

/// Transposed convolution; weight layout `(in, out, k, k)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
    pub output_padding: usize,
}

#[derive(Debug)]
pub struct ConvTransposeCache {
    input: Tensor,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_padding: usize,
        bias: bool,
        init: &mut ParamInit,
    ) -> Self {
        assert!(output_padding < stride);
        // Each output pixel receives about in_c·k²/stride² contributions.
        let fan_in = (in_c * k * k / (stride * stride)).max(1);
        ConvTranspose2d {
            weight: init.weight(format!("{name}.weight"), vec![in_c, out_c, k, k], fan_in),
            bias: bias.then(|| init.bias(format!("{name}.bias"), vec![out_c], fan_in)),
            stride,
            pad,
            output_padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[1]
    }

    fn geom(&self, in_shape: [usize; 4]) -> Geom {
        let k = self.weight.shape[2];
        let oh = (in_shape[2] - 1) * self.stride + k + self.output_padding - 2 * self.pad;
        let ow = (in_shape[3] - 1) * self.stride + k + self.output_padding - 2 * self.pad;
        let g = Geom::new(self.out_channels(), oh, ow, k, self.stride, self.pad);
        debug_assert_eq!((g.oh, g.ow), (in_shape[2], in_shape[3]));
        g
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, ConvTransposeCache) {
        assert_eq!(x.shape[1], self.in_channels(), "{} input channels", self.weight.name);
        let g = self.geom(x.shape);
        let (rows, p, ic) = (g.col_rows(), g.positions(), self.in_channels());
        let mut y = Tensor::zeros([x.batch(), g.c, g.h, g.w]);
        let mut col = vec![0.0; rows * p];
        for n in 0..x.batch() {
            gemm(rows, ic, p, &self.weight.value, true, x.item(n), false, 0.0, &mut col);
            let out = y.item_mut(n);
            g.col2im(&col, out);
            if let Some(b) = &self.bias {
                add_bias(out, &b.value, g.h * g.w);
            }
        }
        (y, ConvTransposeCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &ConvTransposeCache, dy: &Tensor) -> Tensor {
        let x = &cache.input;
        let g = self.geom(x.shape);
        let (rows, p, ic) = (g.col_rows(), g.positions(), self.in_channels());
        let mut dx = Tensor::zeros(x.shape);
        let mut dcol = vec![0.0; rows * p];
        for n in 0..dy.batch() {
            g.im2col(dy.item(n), &mut dcol);
            gemm(ic, rows, p, &self.weight.value, false, &dcol, false, 0.0, dx.item_mut(n));
            gemm(ic, p, rows, x.item(n), false, &dcol, true, 1.0, &mut self.weight.grad);
        }
        if let Some(b) = &mut self.bias {
            bias_grad(&mut b.grad, dy);
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
