use super::{Mode, Param, Tensor};

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: [usize; 4],
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// In [`Mode::Train`] normalizes with batch statistics and folds them into
    /// the running estimates; in [`Mode::Eval`] uses the running estimates.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> (Tensor, BatchNormCache) {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.channels());
        let plane = h * w;
        let count = (n * plane) as f64;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..n {
                    for (ci, chunk) in x.item(b).chunks_exact(plane).enumerate() {
                        mean[ci] += chunk.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for b in 0..n {
                    for (ci, chunk) in x.item(b).chunks_exact(plane).enumerate() {
                        var[ci] += chunk.iter().map(|v| (v - mean[ci]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= count);
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                for ci in 0..c {
                    self.running_mean[ci] = (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                    self.running_var[ci] =
                        (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.data.len()];
        let mut y = Tensor::zeros(x.shape);
        for b in 0..n {
            let base = b * c * plane;
            for ci in 0..c {
                let range = base + ci * plane..base + (ci + 1) * plane;
                let (g, bt) = (self.gamma.value[ci], self.beta.value[ci]);
                for i in range {
                    let z = (x.data[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = z;
                    y.data[i] = g * z + bt;
                }
            }
        }
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                shape: x.shape,
                mode,
            },
        )
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Tensor) -> Tensor {
        let [n, c, h, w] = cache.shape;
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..n {
            for ci in 0..c {
                let start = (b * c + ci) * plane;
                for i in start..start + plane {
                    sum_dy[ci] += dy.data[i];
                    sum_dy_xhat[ci] += dy.data[i] * cache.xhat[i];
                }
            }
        }
        for ci in 0..c {
            self.gamma.grad[ci] += sum_dy_xhat[ci];
            self.beta.grad[ci] += sum_dy[ci];
        }
        let mut dx = Tensor::zeros(cache.shape);
        for b in 0..n {
            for ci in 0..c {
                let scale = self.gamma.value[ci] * cache.inv_std[ci];
                let start = (b * c + ci) * plane;
                for i in start..start + plane {
                    dx.data[i] = match cache.mode {
                        Mode::Train => {
                            scale * (dy.data[i] - sum_dy[ci] / count - cache.xhat[i] * sum_dy_xhat[ci] / count)
                        }
                        Mode::Eval => scale * dy.data[i],
                    };
                }
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
