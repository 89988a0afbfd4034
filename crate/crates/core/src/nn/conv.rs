//! 2-d convolution via im2col and a single matrix product per call.

use ndarray::{Array2, Array4, ArrayView2, Axis};

use super::{join, Init, Module, Param, Visitor};

#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Array4<f32>>,
}

impl Conv2d {
    /// Square kernel, Kaiming-normal weights; the bias (if any) starts at zero.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(
                &[out_channels, in_channels, kernel, kernel],
                Init::KaimingNormal { fan_in },
            ),
            bias: bias.then(|| Param::new(&[out_channels], Init::Zeros)),
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    /// Rows index (channel, ky, kx); columns index (batch, oy, ox).
    fn im2col(&self, x: &Array4<f32>) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let cols_n = b * oh * ow;
        let mut cols = vec![0f32; c * k * k * cols_n];
        let x = x.as_slice().expect("standard layout input");
        let pad = self.padding as isize;
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for bi in 0..b {
                        let plane = &x[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            let out_row = &mut dst[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, v) in out_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    *v = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((c * k * k, cols_n), cols).expect("im2col shape")
    }

    fn col2im(&self, cols: ArrayView2<'_, f32>, shape: (usize, usize, usize, usize)) -> Array4<f32> {
        let (b, c, h, w) = shape;
        let (oh, ow) = self.output_size(h, w);
        let k = self.kernel;
        let cols_n = b * oh * ow;
        let cols = cols.as_standard_layout();
        let cols = cols.as_slice().expect("standard layout");
        let mut dx = vec![0f32; b * c * h * w];
        let pad = self.padding as isize;
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * cols_n..(row + 1) * cols_n];
                    for bi in 0..b {
                        let plane = &mut dx[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = &src[(bi * oh + oy) * ow..(bi * oh + oy + 1) * ow];
                            for (ox, g) in in_row.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    plane[iy as usize * w + ix as usize] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Array4::from_shape_vec(shape, dx).expect("col2im shape")
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let x = x.as_standard_layout().into_owned();
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(&x);
        let mut out = self.weight.view2().dot(&cols);
        if let Some(bias) = &self.bias {
            for (mut row, &bv) in out.axis_iter_mut(Axis(0)).zip(&bias.value) {
                row += bv;
            }
        }
        if train {
            self.input = Some(x);
        }
        out.into_shape_with_order((self.out_channels, b, oh, ow))
            .expect("conv output shape")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (x, g) = self.accumulate_param_grads(grad);
        let dcols = self.weight.view2().t().dot(&g);
        self.col2im(dcols.view(), x.dim())
    }

    /// Like [`Conv2d::backward`] but skips the input gradient, for the
    /// first layer of a network.
    pub fn backward_params_only(&mut self, grad: &Array4<f32>) {
        self.accumulate_param_grads(grad);
    }

    fn accumulate_param_grads(&mut self, grad: &Array4<f32>) -> (Array4<f32>, Array2<f32>) {
        let x = self.input.take().expect("conv backward without a training forward");
        let (b, _, oh, ow) = grad.dim();
        let g = grad
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.out_channels, b * oh * ow))
            .expect("conv grad shape");
        let cols = self.im2col(&x);
        let dw = g.dot(&cols.t());
        self.weight.grad2_mut().zip_mut_with(&dw, |acc, d| *acc += d);
        if let Some(bias) = &mut self.bias {
            for (acc, row) in bias.grad.iter_mut().zip(g.axis_iter(Axis(0))) {
                *acc += row.sum();
            }
        }
        (x, g)
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::*;
    use crate::nn::initialize;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive(conv: &Conv2d, x: &Array4<f32>) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = conv.output_size(h, w);
        let wt = conv.weight.view4();
        let k = conv.kernel;
        Array4::from_shape_fn((b, conv.out_channels, oh, ow), |(bi, o, oy, ox)| {
            let mut acc = conv.bias.as_ref().map_or(0.0, |bb| bb.value[o] as f64);
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                        let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += wt[[o, ci, ky, kx]] as f64 * x[[bi, ci, iy as usize, ix as usize]] as f64;
                        }
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn matches_naive_convolution() {
        for (k, stride, pad, bias) in [(3, 1, 1, false), (3, 2, 1, true), (1, 2, 0, false), (3, 1, 0, true)] {
            let mut conv = Conv2d::new(3, 5, k, stride, pad, bias);
            initialize(&mut conv, 9);
            if let Some(b) = &mut conv.bias {
                b.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f32);
            }
            let x = random4((2, 3, 7, 6), 1);
            let fast = conv.forward(&x, false);
            let slow = naive(&conv, &x);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, true);
        initialize(&mut conv, 4);
        let x = random4((2, 2, 5, 5), 2);
        let probe = random4((2, 3, 3, 3), 3);
        conv.forward(&x, true);
        let dx = conv.backward(&probe);

        let h = 1e-2f32;
        let loss = |conv: &mut Conv2d, x: &Array4<f32>| probe_loss(&conv.forward(x, false), &probe);
        for idx in [(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 4, 4)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * h as f64);
            assert_close(dx[idx] as f64, num, "conv input");
        }
        for i in [0, 7, 20, 53] {
            let analytic = conv.weight.grad[i] as f64;
            conv.weight.value[i] += h;
            let lp = loss(&mut conv, &x);
            conv.weight.value[i] -= 2.0 * h;
            let lm = loss(&mut conv, &x);
            conv.weight.value[i] += h;
            assert_close(analytic, (lp - lm) / (2.0 * h as f64), "conv weight");
        }
        let analytic = conv.bias.as_ref().unwrap().grad[1] as f64;
        let expected: f64 = probe.index_axis(Axis(1), 1).iter().map(|&v| v as f64).sum();
        assert_close(analytic, expected, "conv bias");
    }
}
