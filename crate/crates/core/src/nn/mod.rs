//! A small CPU layer kit with hand-written backward passes.
//!
//! Layers cache what their backward pass needs during a training-mode
//! forward call and accumulate parameter gradients into [`Param::grad`].
//! Every reduction runs in a fixed order, so a training step is bitwise
//! reproducible.

mod activation;
mod conv;
mod linear;
mod norm;
mod optim;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use activation::{GlobalAvgPool, MaxPool2, QuadrantAvgPool, Relu};
pub use conv::Conv2d;
pub use linear::{CosineLinear, Linear};
pub use norm::BatchNorm2d;
pub use optim::Sgd;

use crate::seeds;

/// How a parameter is filled by [`initialize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with std `sqrt(2 / fan_in)`.
    KaimingNormal { fan_in: usize },
    /// Uniform on `[-bound, bound]`.
    Uniform { bound: f32 },
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    init: Init,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(shape: &[usize], init: Init) -> Self {
        let n = shape.iter().product();
        let fill = if init == Init::Ones { 1.0 } else { 0.0 };
        Self {
            shape: shape.to_vec(),
            init,
            value: vec![fill; n],
            grad: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn view2(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape(
            (self.shape[0], self.value.len() / self.shape[0]),
            &self.value,
        )
        .expect("parameter storage matches its shape")
    }

    pub(crate) fn grad2_mut(&mut self) -> ArrayViewMut2<'_, f32> {
        let rows = self.shape[0];
        let cols = self.grad.len() / rows;
        ArrayViewMut2::from_shape((rows, cols), &mut self.grad).expect("gradient matches shape")
    }

    #[cfg(test)]
    pub(crate) fn view4(&self) -> ndarray::ArrayView4<'_, f32> {
        let s = &self.shape;
        ndarray::ArrayView4::from_shape((s[0], s[1], s[2], s[3]), &self.value)
            .expect("parameter storage matches its shape")
    }

    fn fill<R: Rng>(&mut self, rng: &mut R) {
        match self.init {
            Init::Zeros => self.value.fill(0.0),
            Init::Ones => self.value.fill(1.0),
            Init::KaimingNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                self.value
                    .iter_mut()
                    .for_each(|v| *v = normal.sample(rng) as f32);
            }
            Init::Uniform { bound } => self
                .value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..=bound)),
        }
    }
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    shape: Vec<usize>,
    pub value: Vec<f32>,
}

impl Buffer {
    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            value: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// Receives every parameter and buffer of a module tree, with its
/// hierarchical dotted name.
pub trait Visitor {
    fn param(&mut self, name: &str, param: &mut Param);

    fn buffer(&mut self, _name: &str, _buffer: &mut Buffer) {}
}

pub trait Module {
    fn visit(&mut self, prefix: &str, visitor: &mut dyn Visitor);
}

/// Joins a prefix and a child name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

struct FnVisitor<P, B>(P, B);

impl<P: FnMut(&str, &mut Param), B: FnMut(&str, &mut Buffer)> Visitor for FnVisitor<P, B> {
    fn param(&mut self, name: &str, param: &mut Param) {
        (self.0)(name, param)
    }

    fn buffer(&mut self, name: &str, buffer: &mut Buffer) {
        (self.1)(name, buffer)
    }
}

/// Calls `f` on every parameter.
pub fn for_each_param<M: Module + ?Sized>(module: &mut M, mut f: impl FnMut(&str, &mut Param)) {
    module.visit("", &mut FnVisitor(&mut f, |_: &str, _: &mut Buffer| {}));
}

/// Calls `f` on every buffer.
pub fn for_each_buffer<M: Module + ?Sized>(module: &mut M, mut f: impl FnMut(&str, &mut Buffer)) {
    module.visit("", &mut FnVisitor(|_: &str, _: &mut Param| {}, &mut f));
}

/// Fills every parameter from an rng stream derived from `seed` and the
/// parameter's full name, so a parameter's initial value does not depend on
/// which other modules exist.
pub fn initialize<M: Module + ?Sized>(module: &mut M, seed: u64) {
    for_each_param(module, |name, p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_named(seed, name));
        p.fill(&mut rng);
    });
}

pub fn zero_grad<M: Module + ?Sized>(module: &mut M) {
    for_each_param(module, |_, p| p.grad.fill(0.0));
}

pub fn num_params<M: Module + ?Sized>(module: &mut M) -> usize {
    let mut n = 0;
    for_each_param(module, |_, p| n += p.len());
    n
}

#[cfg(test)]
pub(crate) mod testing {
    //! Finite-difference checks of the layer kit, in f32 with loose
    //! tolerances. The loss-level checks in `oracles` run in f64.

    use super::*;
    use ndarray::Array4;

    /// Sum of `out * probe`, a linear functional with a known gradient.
    pub fn probe_loss(out: &Array4<f32>, probe: &Array4<f32>) -> f64 {
        out.iter().zip(probe).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    pub fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0))
    }

    pub fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-2);
        assert!(
            (analytic - numeric).abs() / denom < 2e-2,
            "{what}: analytic {analytic} vs numeric {numeric}"
        );
    }
}
