use ndarray::{Array2, Array4, Zip};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array4<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        if train {
            self.mask = Some(x.mapv(|v| v > 0.0));
        }
        // NaN passes through so the loss-level checks can report it
        x.mapv(|v| if v < 0.0 { 0.0 } else { v })
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("relu backward without a training forward");
        let mut out = grad.to_owned();
        Zip::from(&mut out).and(&mask).for_each(|g, &m| {
            if !m {
                *g = 0.0;
            }
        });
        out
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<((usize, usize, usize, usize), Vec<usize>)>,
}

impl MaxPool2 {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::zeros((b, c, oh, ow));
        let mut argmax = Vec::with_capacity(if train { out.len() } else { 0 });
        for bi in 0..b {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (2 * oy, 2 * ox);
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let cand = (2 * oy + dy, 2 * ox + dx);
                            let v = x[[bi, ch, cand.0, cand.1]];
                            if v > x[[bi, ch, best.0, best.1]] || v.is_nan() {
                                best = cand;
                            }
                        }
                        out[[bi, ch, oy, ox]] = x[[bi, ch, best.0, best.1]];
                        if train {
                            argmax.push(((bi * c + ch) * h + best.0) * w + best.1);
                        }
                    }
                }
            }
        }
        if train {
            self.cache = Some(((b, c, h, w), argmax));
        }
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (shape, argmax) = self.cache.take().expect("max pool backward without a training forward");
        let mut dx = vec![0f32; shape.0 * shape.1 * shape.2 * shape.3];
        for (g, &k) in grad.iter().zip(&argmax) {
            dx[k] += g;
        }
        Array4::from_shape_vec(shape, dx).expect("pool grad shape")
    }
}

/// Averages each channel over its spatial extent: (B,C,H,W) -> (B,C).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        if train {
            self.shape = Some((b, c, h, w));
        }
        let area = (h * w) as f64;
        Array2::from_shape_fn((b, c), |(bi, ch)| {
            let s: f64 = x
                .slice(ndarray::s![bi, ch, .., ..])
                .iter()
                .map(|&v| v as f64)
                .sum();
            (s / area) as f32
        })
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let shape = self.shape.take().expect("pool backward without a training forward");
        let area = (shape.2 * shape.3) as f32;
        Array4::from_shape_fn(shape, |(bi, ch, _, _)| grad[[bi, ch]] / area)
    }
}

/// Averages each quadrant of every channel, giving `(B, 4C)` features laid
/// out channel-major as `[c][top-left, top-right, bottom-left, bottom-right]`.
/// Unlike [`GlobalAvgPool`] this keeps coarse position.
#[derive(Debug, Clone, Default)]
pub struct QuadrantAvgPool {
    shape: Option<(usize, usize, usize, usize)>,
}

fn quadrant_of(y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
    let (qy, qx) = (usize::from(y >= h / 2), usize::from(x >= w / 2));
    let rows = if qy == 0 { h / 2 } else { h - h / 2 };
    let cols = if qx == 0 { w / 2 } else { w - w / 2 };
    (2 * qy + qx, rows * cols)
}

impl QuadrantAvgPool {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        assert!(h >= 2 && w >= 2, "quadrant pooling needs at least 2x2 maps");
        if train {
            self.shape = Some((b, c, h, w));
        }
        let mut sums = Array2::<f64>::zeros((b, 4 * c));
        for ((bi, ch, y, xx), &v) in x.indexed_iter() {
            let (q, _) = quadrant_of(y, xx, h, w);
            sums[[bi, 4 * ch + q]] += v as f64;
        }
        Array2::from_shape_fn((b, 4 * c), |(bi, f)| {
            let q = f % 4;
            let (qy, qx) = (q / 2, q % 2);
            let rows = if qy == 0 { h / 2 } else { h - h / 2 };
            let cols = if qx == 0 { w / 2 } else { w - w / 2 };
            (sums[[bi, f]] / (rows * cols) as f64) as f32
        })
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let shape = self.shape.take().expect("pool backward without a training forward");
        let (_, _, h, w) = shape;
        Array4::from_shape_fn(shape, |(bi, ch, y, x)| {
            let (q, area) = quadrant_of(y, x, h, w);
            grad[[bi, 4 * ch + q]] / area as f32
        })
    }
}
