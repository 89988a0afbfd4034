use std::collections::BTreeMap;

use super::{for_each_param, Module};

/// SGD with heavy-ball momentum and L2 weight decay applied to every
/// parameter:
///
/// ```text
/// d = grad + weight_decay * w
/// v = momentum * v + d
/// w = w - lr * v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, lr: f32) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let velocity = &mut self.velocity;
        for_each_param(module, |name, p| {
            let v = velocity
                .entry(name.to_owned())
                .or_insert_with(|| vec![0.0; p.len()]);
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let d = g + wd * *w;
                *vel = mu * *vel + d;
                *w -= lr * *vel;
            }
        });
    }

    /// Momentum buffers keyed by parameter name.
    pub fn velocity(&self) -> &BTreeMap<String, Vec<f32>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Vec<f32>>) {
        self.velocity = velocity;
    }
}
