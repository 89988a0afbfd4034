use ndarray::Array4;

use super::{join, Buffer, Init, Module, Param, Visitor};

const EPS: f64 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Batch normalization over (batch, height, width) per channel.
///
/// Training mode normalizes with biased batch statistics and updates the
/// running estimates with the unbiased variance; evaluation mode uses the
/// running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    cache: Option<(Array4<f32>, Vec<f64>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(&[channels], Init::Ones),
            beta: Param::new(&[channels], Init::Zeros),
            running_mean: Buffer::filled(&[channels], 0.0),
            running_var: Buffer::filled(&[channels], 1.0),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batch norm channels");
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let plane = h * w;
        let n = b * plane;
        let mut out = vec![0f32; src.len()];
        let mut xhat = if train { vec![0f32; src.len()] } else { Vec::new() };
        let mut inv_stds = vec![0f64; c];

        for ch in 0..c {
            let (mean, inv_std) = if train {
                let mut sum = 0f64;
                for bi in 0..b {
                    let off = (bi * c + ch) * plane;
                    sum += src[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / n as f64;
                let mut sq = 0f64;
                for bi in 0..b {
                    let off = (bi * c + ch) * plane;
                    sq += src[off..off + plane]
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / n as f64;
                let unbiased = if n > 1 { sq / (n - 1) as f64 } else { var };
                let rm = &mut self.running_mean.value[ch];
                *rm = (1.0 - MOMENTUM) * *rm + MOMENTUM * mean as f32;
                let rv = &mut self.running_var.value[ch];
                *rv = (1.0 - MOMENTUM) * *rv + MOMENTUM * unbiased as f32;
                (mean, 1.0 / (var + EPS).sqrt())
            } else {
                let var = self.running_var.value[ch] as f64;
                (self.running_mean.value[ch] as f64, 1.0 / (var + EPS).sqrt())
            };
            inv_stds[ch] = inv_std;
            let g = self.gamma.value[ch] as f64;
            let be = self.beta.value[ch] as f64;
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for k in off..off + plane {
                    let xh = (src[k] as f64 - mean) * inv_std;
                    out[k] = (g * xh + be) as f32;
                    if train {
                        xhat[k] = xh as f32;
                    }
                }
            }
        }
        if train {
            let xhat = Array4::from_shape_vec((b, c, h, w), xhat).expect("bn cache shape");
            self.cache = Some((xhat, inv_stds));
        }
        Array4::from_shape_vec((b, c, h, w), out).expect("bn output shape")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (xhat, inv_stds) = self.cache.take().expect("batch norm backward without a training forward");
        let (b, c, h, w) = grad.dim();
        let grad = grad.as_standard_layout();
        let dy = grad.as_slice().expect("standard layout");
        let xh = xhat.as_slice().expect("standard layout");
        let plane = h * w;
        let n = (b * plane) as f64;
        let mut dx = vec![0f32; dy.len()];
        for ch in 0..c {
            let mut sum_dy = 0f64;
            let mut sum_dy_xh = 0f64;
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for k in off..off + plane {
                    sum_dy += dy[k] as f64;
                    sum_dy_xh += dy[k] as f64 * xh[k] as f64;
                }
            }
            self.gamma.grad[ch] += sum_dy_xh as f32;
            self.beta.grad[ch] += sum_dy as f32;
            let scale = self.gamma.value[ch] as f64 * inv_stds[ch] / n;
            for bi in 0..b {
                let off = (bi * c + ch) * plane;
                for k in off..off + plane {
                    dx[k] = (scale * (n * dy[k] as f64 - sum_dy - xh[k] as f64 * sum_dy_xh)) as f32;
                }
            }
        }
        Array4::from_shape_vec((b, c, h, w), dx).expect("bn grad shape")
    }
}

impl Module for BatchNorm2d {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.gamma);
        v.param(&join(prefix, "bias"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}
