use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{join, Init, Module, Param, Visitor};

/// Affine map `y = x W^T + b` with `W` of shape (out, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f32>>,
}

impl Linear {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::new(
                &[out_features, in_features],
                Init::Uniform {
                    bound: 1.0 / (in_features as f32).sqrt(),
                },
            ),
            bias: Param::new(&[out_features], Init::Zeros),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let mut y = x.dot(&self.weight.view2().t());
        y += &ArrayView2::from_shape((1, self.bias.len()), &self.bias.value).expect("bias row");
        if train {
            self.input = Some(x.to_owned());
        }
        y
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array2<f32> {
        let x = self.input.take().expect("linear backward without a training forward");
        let dw = grad.t().dot(&x);
        self.weight.grad2_mut().zip_mut_with(&dw, |acc, d| *acc += d);
        for (acc, col) in self.bias.grad.iter_mut().zip(grad.axis_iter(Axis(1))) {
            *acc += col.sum();
        }
        grad.dot(&self.weight.view2())
    }

    /// Drops the cached input of a forward pass whose backward is skipped.
    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }
}

const NORM_EPS: f32 = 1e-12;

fn row_norms(m: &ArrayView2<'_, f32>) -> Array1<f32> {
    m.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(NORM_EPS))
}

/// Back-propagates through `u = v / max(|v|, eps)` row-wise.
fn normalize_backward(u: &Array2<f32>, norms: &Array1<f32>, du: &Array2<f32>) -> Array2<f32> {
    let mut dv = du.to_owned();
    for ((mut row, u_row), &n) in dv.axis_iter_mut(Axis(0)).zip(u.axis_iter(Axis(0))).zip(norms) {
        if n > NORM_EPS {
            let proj = u_row.dot(&row);
            row.zip_mut_with(&u_row, |d, &uv| *d -= uv * proj);
        }
        row.mapv_inplace(|d| d / n);
    }
    dv
}

/// Cosine-similarity classifier: `y_bj = <x_b / |x_b|, w_j / |w_j|>`, so
/// every logit lies in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct CosineLinear {
    pub weight: Param,
    cache: Option<CosineCache>,
}

#[derive(Debug, Clone)]
struct CosineCache {
    xn: Array2<f32>,
    x_norms: Array1<f32>,
    wn: Array2<f32>,
    w_norms: Array1<f32>,
}

impl CosineLinear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::new(&[out_features, in_features], Init::Uniform { bound: 1.0 }),
            cache: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        let w = self.weight.view2();
        let x_norms = row_norms(&x.view());
        let w_norms = row_norms(&w);
        let xn = x / &x_norms.view().insert_axis(Axis(1));
        let wn = &w / &w_norms.view().insert_axis(Axis(1));
        let y = xn.dot(&wn.t());
        if train {
            self.cache = Some(CosineCache {
                xn,
                x_norms,
                wn,
                w_norms,
            });
        }
        y
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array2<f32> {
        let c = self.cache.take().expect("cosine backward without a training forward");
        let dxn = grad.dot(&c.wn);
        let dwn = grad.t().dot(&c.xn);
        let dw = normalize_backward(&c.wn, &c.w_norms, &dwn);
        self.weight.grad2_mut().zip_mut_with(&dw, |acc, d| *acc += d);
        normalize_backward(&c.xn, &c.x_norms, &dxn)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Module for CosineLinear {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        v.param(&join(prefix, "weight"), &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::initialize;
    use crate::nn::testing::assert_close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random2(shape: (usize, usize), seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0))
    }

    fn probe(y: &Array2<f32>, p: &Array2<f32>) -> f64 {
        y.iter().zip(p).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    #[test]
    fn linear_gradients() {
        let mut lin = Linear::new(4, 3);
        initialize(&mut lin, 1);
        lin.bias.value = vec![0.5, -0.5, 0.25];
        let x = random2((2, 4), 2);
        let p = random2((2, 3), 3);
        let y = lin.forward(&x, true);
        assert!((y[[1, 2]] - (x.row(1).dot(&lin.weight.view2().row(2)) + 0.25)).abs() < 1e-6);
        let dx = lin.backward(&p);
        let expected_dx = p.dot(&lin.weight.view2());
        assert_eq!(dx, expected_dx);
        let expected_dw = p.t().dot(&x);
        assert_eq!(lin.weight.grad, expected_dw.iter().copied().collect::<Vec<_>>());
        assert_eq!(lin.bias.grad, p.sum_axis(Axis(0)).to_vec());
    }

    #[test]
    fn cosine_logits_are_bounded_and_scale_free() {
        let mut cos = CosineLinear::new(5, 4);
        initialize(&mut cos, 7);
        let x = random2((3, 5), 8);
        let y = cos.forward(&x, false);
        assert!(y.iter().all(|v| v.abs() <= 1.0 + 1e-6));
        let y2 = cos.forward(&(&x * 7.5), false);
        for (a, b) in y.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn cosine_gradients_match_finite_differences() {
        let mut cos = CosineLinear::new(4, 3);
        initialize(&mut cos, 11);
        let x = random2((2, 4), 12);
        let p = random2((2, 3), 13);
        cos.forward(&x, true);
        let dx = cos.backward(&p);
        let h = 1e-2f32;
        for idx in [(0, 0), (1, 3), (0, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let num = (probe(&cos.forward(&xp, false), &p) - probe(&cos.forward(&xm, false), &p)) / (2.0 * h as f64);
            assert_close(dx[idx] as f64, num, "cosine input");
        }
        for i in [0, 5, 11] {
            let analytic = cos.weight.grad[i] as f64;
            cos.weight.value[i] += h;
            let lp = probe(&cos.forward(&x, false), &p);
            cos.weight.value[i] -= 2.0 * h;
            let lm = probe(&cos.forward(&x, false), &p);
            cos.weight.value[i] += h;
            assert_close(analytic, (lp - lm) / (2.0 * h as f64), "cosine weight");
        }
    }
}
