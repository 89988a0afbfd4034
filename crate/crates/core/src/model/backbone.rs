//! Feature extractors mapping (B, 3, H, W) images to (B, D) pooled features.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2, Module, QuadrantAvgPool, Relu, Visitor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneName {
    /// CIFAR ResNet-32: 3 stages of 5 basic blocks, widths 16/32/64.
    #[serde(rename = "resnet32-cifar")]
    Resnet32Cifar,
    /// ResNet-18 with a 3x3 stem and no stem pooling.
    #[serde(rename = "resnet18")]
    Resnet18,
    /// Two conv blocks and per-quadrant pooling, for desk-scale runs.
    #[serde(rename = "tinycnn")]
    TinyCnn,
}

impl BackboneName {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneName::Resnet32Cifar => "resnet32-cifar",
            BackboneName::Resnet18 => "resnet18",
            BackboneName::TinyCnn => "tinycnn",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneName::Resnet32Cifar => "ResNet 32",
            BackboneName::Resnet18 => "ResNet 18",
            BackboneName::TinyCnn => "TinyCNN",
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            BackboneName::Resnet32Cifar => 64,
            BackboneName::Resnet18 => 512,
            BackboneName::TinyCnn => 32,
        }
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet32-cifar" | "resnet32" => Ok(BackboneName::Resnet32Cifar),
            "resnet18" => Ok(BackboneName::Resnet18),
            "tinycnn" => Ok(BackboneName::TinyCnn),
            other => Err(Error::Config(format!(
                "unknown backbone '{other}'; valid: resnet32-cifar, resnet18, tinycnn"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
enum Shortcut {
    Identity,
    /// Stride-2 subsampling plus zero channel padding (parameter free).
    PadSubsample {
        pad: usize,
        input_shape: Option<(usize, usize, usize, usize)>,
    },
    Projection {
        conv: Conv2d,
        bn: BatchNorm2d,
    },
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Shortcut,
    relu_out: Relu,
}

impl BasicBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, projection: bool) -> Self {
        let shortcut = if stride == 1 && in_c == out_c {
            Shortcut::Identity
        } else if projection {
            Shortcut::Projection {
                conv: Conv2d::new(in_c, out_c, 1, stride, 0, false),
                bn: BatchNorm2d::new(out_c),
            }
        } else {
            debug_assert_eq!(out_c, 2 * in_c);
            Shortcut::PadSubsample {
                pad: out_c / 4,
                input_shape: None,
            }
        };
        Self {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, false),
            bn1: BatchNorm2d::new(out_c),
            relu1: Relu::default(),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, false),
            bn2: BatchNorm2d::new(out_c),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let h = self.conv1.forward(x, train);
        let h = self.bn1.forward(&h, train);
        let h = self.relu1.forward(&h, train);
        let h = self.conv2.forward(&h, train);
        let mut h = self.bn2.forward(&h, train);
        match &mut self.shortcut {
            Shortcut::Identity => h += x,
            Shortcut::PadSubsample { pad, input_shape } => {
                let sub = x.slice(s![.., .., ..;2, ..;2]);
                let in_c = x.dim().1;
                h.slice_mut(s![.., *pad..*pad + in_c, .., ..]).zip_mut_with(&sub, |a, b| *a += b);
                if train {
                    *input_shape = Some(x.dim());
                }
            }
            Shortcut::Projection { conv, bn } => {
                let p = conv.forward(x, train);
                h += &bn.forward(&p, train);
            }
        }
        self.relu_out.forward(&h, train)
    }

    fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let g = self.relu_out.backward(grad);
        let gh = self.bn2.backward(&g);
        let gh = self.conv2.backward(&gh);
        let gh = self.relu1.backward(&gh);
        let gh = self.bn1.backward(&gh);
        let mut dx = self.conv1.backward(&gh);
        match &mut self.shortcut {
            Shortcut::Identity => dx += &g,
            Shortcut::PadSubsample { pad, input_shape } => {
                let in_c = input_shape.expect("shortcut backward without a training forward").1;
                dx.slice_mut(s![.., .., ..;2, ..;2])
                    .zip_mut_with(&g.slice(s![.., *pad..*pad + in_c, .., ..]), |a, b| *a += b);
                *input_shape = None;
            }
            Shortcut::Projection { conv, bn } => {
                let gp = bn.backward(&g);
                dx += &conv.backward(&gp);
            }
        }
        dx
    }
}

impl Module for BasicBlock {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv1.visit(&join(prefix, "conv1"), v);
        self.bn1.visit(&join(prefix, "bn1"), v);
        self.conv2.visit(&join(prefix, "conv2"), v);
        self.bn2.visit(&join(prefix, "bn2"), v);
        if let Shortcut::Projection { conv, bn } = &mut self.shortcut {
            conv.visit(&join(prefix, "shortcut.0"), v);
            bn.visit(&join(prefix, "shortcut.1"), v);
        }
    }
}

#[derive(Debug, Clone)]
struct ResNet {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu: Relu,
    /// (stage, index within stage, block)
    blocks: Vec<(usize, usize, BasicBlock)>,
    pool: GlobalAvgPool,
}

impl ResNet {
    fn new(widths: &[usize], depths: &[usize], projection: bool) -> Self {
        let mut blocks = Vec::new();
        let mut in_c = widths[0];
        for (stage, (&width, &depth)) in widths.iter().zip(depths).enumerate() {
            for i in 0..depth {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                blocks.push((stage, i, BasicBlock::new(in_c, width, stride, projection)));
                in_c = width;
            }
        }
        Self {
            conv1: Conv2d::new(3, widths[0], 3, 1, 1, false),
            bn1: BatchNorm2d::new(widths[0]),
            relu: Relu::default(),
            blocks,
            pool: GlobalAvgPool::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let h = self.conv1.forward(x, train);
        let h = self.bn1.forward(&h, train);
        let mut h = self.relu.forward(&h, train);
        for (_, _, block) in &mut self.blocks {
            h = block.forward(&h, train);
        }
        self.pool.forward(&h, train)
    }

    fn backward(&mut self, grad: &Array2<f32>) {
        let mut g = self.pool.backward(grad);
        for (_, _, block) in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
        let g = self.relu.backward(&g);
        let g = self.bn1.backward(&g);
        self.conv1.backward_params_only(&g);
    }
}

impl Module for ResNet {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv1.visit(&join(prefix, "conv1"), v);
        self.bn1.visit(&join(prefix, "bn1"), v);
        for (stage, i, block) in &mut self.blocks {
            block.visit(&join(prefix, &format!("layer{}.{i}", *stage + 1)), v);
        }
    }
}

#[derive(Debug, Clone)]
struct TinyCnn {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    pool1: MaxPool2,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    pool: QuadrantAvgPool,
}

impl TinyCnn {
    fn new() -> Self {
        Self {
            conv1: Conv2d::new(3, 16, 3, 1, 1, false),
            bn1: BatchNorm2d::new(16),
            relu1: Relu::default(),
            pool1: MaxPool2::default(),
            conv2: Conv2d::new(16, 8, 3, 1, 1, false),
            bn2: BatchNorm2d::new(8),
            relu2: Relu::default(),
            pool: QuadrantAvgPool::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        let h = self.conv1.forward(x, train);
        let h = self.bn1.forward(&h, train);
        let h = self.relu1.forward(&h, train);
        let h = self.pool1.forward(&h, train);
        let h = self.conv2.forward(&h, train);
        let h = self.bn2.forward(&h, train);
        let h = self.relu2.forward(&h, train);
        self.pool.forward(&h, train)
    }

    fn backward(&mut self, grad: &Array2<f32>) {
        let g = self.pool.backward(grad);
        let g = self.relu2.backward(&g);
        let g = self.bn2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.pool1.backward(&g);
        let g = self.relu1.backward(&g);
        let g = self.bn1.backward(&g);
        self.conv1.backward_params_only(&g);
    }
}

impl Module for TinyCnn {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.conv1.visit(&join(prefix, "conv1"), v);
        self.bn1.visit(&join(prefix, "bn1"), v);
        self.conv2.visit(&join(prefix, "conv2"), v);
        self.bn2.visit(&join(prefix, "bn2"), v);
    }
}

#[derive(Debug, Clone)]
enum Net {
    ResNet(ResNet),
    Tiny(TinyCnn),
}

/// A feature extractor mapping `(B, 3, H, W)` images to `(B, D)` features.
#[derive(Debug, Clone)]
pub struct Backbone {
    name: BackboneName,
    net: Net,
}

impl Backbone {
    /// Builds the architecture with unset weights; see [`crate::nn::initialize`].
    pub fn new(name: BackboneName) -> Self {
        let net = match name {
            BackboneName::Resnet32Cifar => Net::ResNet(ResNet::new(&[16, 32, 64], &[5, 5, 5], false)),
            BackboneName::Resnet18 => {
                Net::ResNet(ResNet::new(&[64, 128, 256, 512], &[2, 2, 2, 2], true))
            }
            BackboneName::TinyCnn => Net::Tiny(TinyCnn::new()),
        };
        Self { name, net }
    }

    pub fn name(&self) -> BackboneName {
        self.name
    }

    pub fn feature_dim(&self) -> usize {
        self.name.feature_dim()
    }

    /// Number of residual blocks (zero for the tiny CNN).
    pub fn num_blocks(&self) -> usize {
        match &self.net {
            Net::ResNet(r) => r.blocks.len(),
            Net::Tiny(_) => 0,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array2<f32> {
        match &mut self.net {
            Net::ResNet(r) => r.forward(x, train),
            Net::Tiny(t) => t.forward(x, train),
        }
    }

    /// Accumulates parameter gradients given d(loss)/d(features).
    pub fn backward(&mut self, grad: &Array2<f32>) {
        match &mut self.net {
            Net::ResNet(r) => r.backward(grad),
            Net::Tiny(t) => t.backward(grad),
        }
    }
}

impl Module for Backbone {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        match &mut self.net {
            Net::ResNet(r) => r.visit(prefix, v),
            Net::Tiny(t) => t.visit(prefix, v),
        }
    }
}
