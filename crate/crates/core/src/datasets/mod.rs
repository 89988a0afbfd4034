//! Datasets: CIFAR-10/100 binary batches, the Tiny-ImageNet directory layout,
//! a synthetic fixture for desk-scale runs, and long-tailed subsampling.

mod cifar;
mod imbalance;
mod synthetic;
mod tiny_imagenet;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::ImageTensor;

pub use cifar::{
    encode_cifar100_records, encode_cifar10_records, load_cifar10, load_cifar100, parse_cifar100,
    parse_cifar10, CifarRecord, CIFAR100_RECORD_LEN, CIFAR10_RECORD_LEN,
};
pub use imbalance::{
    exponential_profile, per_class_counts, read_index_file, subsample_indices, write_index_file,
    ImbalanceProfile, IndexFile, IndexHeader,
};
pub use synthetic::synthetic_dataset;
pub use tiny_imagenet::load_tiny_imagenet;

/// An image paired with its supervised class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: ImageTensor,
    pub class_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Pixels {
    /// Raw bytes, scaled by 1/255 on access.
    Bytes(Vec<u8>),
    Floats(Vec<f32>),
}

/// An immutable, indexable collection of equally sized images.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    height: usize,
    width: usize,
    num_classes: usize,
    pixels: Pixels,
    labels: Vec<usize>,
}

impl Split {
    pub(crate) fn from_bytes(
        height: usize,
        width: usize,
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Self {
        debug_assert_eq!(pixels.len(), labels.len() * 3 * height * width);
        Self {
            height,
            width,
            num_classes,
            pixels: Pixels::Bytes(pixels),
            labels,
        }
    }

    pub(crate) fn from_floats(
        height: usize,
        width: usize,
        num_classes: usize,
        pixels: Vec<f32>,
        labels: Vec<usize>,
    ) -> Self {
        debug_assert_eq!(pixels.len(), labels.len() * 3 * height * width);
        Self {
            height,
            width,
            num_classes,
            pixels: Pixels::Floats(pixels),
            labels,
        }
    }

    /// Collects examples that share one image size.
    pub fn from_examples(num_classes: usize, examples: &[LabeledExample]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Data("cannot build a split from zero examples".into()))?;
        let (h, w) = (first.image.height(), first.image.width());
        let mut pixels = Vec::with_capacity(examples.len() * 3 * h * w);
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            if (ex.image.height(), ex.image.width()) != (h, w) {
                return Err(Error::Shape(format!(
                    "mixed image sizes: {}x{} vs {h}x{w}",
                    ex.image.height(),
                    ex.image.width()
                )));
            }
            if ex.class_label >= num_classes {
                return Err(Error::Data(format!(
                    "label {} outside [0, {num_classes})",
                    ex.class_label
                )));
            }
            pixels.extend(ex.image.as_array().iter());
            labels.push(ex.class_label);
        }
        Ok(Self::from_floats(h, w, num_classes, pixels, labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn image(&self, index: usize) -> ImageTensor {
        let n = self.image_len();
        let range = index * n..(index + 1) * n;
        let values: Vec<f32> = match &self.pixels {
            Pixels::Bytes(b) => b[range].iter().map(|&v| v as f32 / 255.0).collect(),
            Pixels::Floats(f) => f[range].to_vec(),
        };
        let data = Array3::from_shape_vec((3, self.height, self.width), values)
            .expect("split storage matches its shape");
        ImageTensor::new(data).expect("split storage holds valid images")
    }

    pub fn example(&self, index: usize) -> LabeledExample {
        LabeledExample {
            image: self.image(index),
            class_label: self.labels[index],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = LabeledExample> + '_ {
        (0..self.len()).map(|i| self.example(i))
    }

    /// Keeps only `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.image_len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let pixels = match &self.pixels {
            Pixels::Bytes(b) => Pixels::Bytes(
                indices
                    .iter()
                    .flat_map(|&i| b[i * n..(i + 1) * n].iter().copied())
                    .collect(),
            ),
            Pixels::Floats(f) => Pixels::Floats(
                indices
                    .iter()
                    .flat_map(|&i| f[i * n..(i + 1) * n].iter().copied())
                    .collect(),
            ),
        };
        Self {
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            pixels,
            labels,
        }
    }

    /// Per-channel mean and standard deviation over every pixel of the split.
    pub fn channel_stats(&self) -> ([f64; 3], [f64; 3]) {
        let plane = self.height * self.width;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let value = |k: usize| -> f64 {
            match &self.pixels {
                Pixels::Bytes(b) => b[k] as f64 / 255.0,
                Pixels::Floats(f) => f[k] as f64,
            }
        };
        for i in 0..self.len() {
            for c in 0..3 {
                let base = i * 3 * plane + c * plane;
                for k in base..base + plane {
                    let v = value(k);
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean = sum.map(|s| s / count);
        let mut std = [0f64; 3];
        for c in 0..3 {
            std[c] = (sq[c] / count - mean[c] * mean[c]).max(0.0).sqrt();
        }
        (mean, std)
    }
}

/// Per-channel standardization applied to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Statistics of a training split. Channels with zero spread keep a
    /// unit divisor.
    pub fn from_split(split: &Split) -> Self {
        let (mean, std) = split.channel_stats();
        Self {
            mean,
            std: std.map(|s| if s > 1e-8 { s } else { 1.0 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Cifar10,
    Cifar100,
    TinyImagenet,
    Synthetic,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
            DatasetName::TinyImagenet => "tiny-imagenet",
            DatasetName::Synthetic => "synthetic",
        }
    }

    /// Number of classes, `None` for the configurable synthetic set.
    pub fn num_classes(self) -> Option<usize> {
        match self {
            DatasetName::Cifar10 => Some(10),
            DatasetName::Cifar100 => Some(100),
            DatasetName::TinyImagenet => Some(200),
            DatasetName::Synthetic => None,
        }
    }

    /// Name used as a column group in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            DatasetName::Cifar10 => "CIFAR-10",
            DatasetName::Cifar100 => "CIFAR-100",
            DatasetName::TinyImagenet => "Tiny-ImageNet",
            DatasetName::Synthetic => "Synthetic",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetName::Cifar100),
            "tiny-imagenet" | "tinyimagenet" => Ok(DatasetName::TinyImagenet),
            "synthetic" => Ok(DatasetName::Synthetic),
            other => Err(Error::Config(format!(
                "unknown dataset '{other}'; valid: cifar10, cifar100, tiny-imagenet, synthetic"
            ))),
        }
    }
}

/// Size parameters of the synthetic fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 64,
            size: 8,
        }
    }
}

/// Where a dataset lives and which one it is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

impl DatasetSpec {
    pub fn num_classes(&self) -> usize {
        self.name
            .num_classes()
            .unwrap_or(self.synthetic.num_classes)
    }
}

/// A loaded train/test (or train/val) pair.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: DatasetName,
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
}

/// Loads a dataset. `seed` only affects the synthetic fixture.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let root = || -> Result<&Path> {
        spec.root.as_deref().ok_or_else(|| {
            Error::Config(format!(
                "dataset {} needs a data root (--data-root or DATA_ROOT)",
                spec.name
            ))
        })
    };
    let (train, test) = match spec.name {
        DatasetName::Cifar10 => load_cifar10(root()?)?,
        DatasetName::Cifar100 => load_cifar100(root()?)?,
        DatasetName::TinyImagenet => load_tiny_imagenet(root()?)?,
        DatasetName::Synthetic => {
            let s = spec.synthetic;
            synthetic_dataset(s.num_classes, s.per_class, s.size, seed)?
        }
    };
    Ok(Dataset {
        name: spec.name,
        num_classes: train.num_classes(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_keeps_labels_and_pixels() {
        let (train, _) = synthetic_dataset(3, 4, 4, 1).unwrap();
        let idx = [5, 0, 11];
        let sub = train.subset(&idx);
        assert_eq!(sub.len(), 3);
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(sub.example(k), train.example(i));
        }
    }

    #[test]
    fn channel_stats_of_constant_images() {
        let img = ImageTensor::new(Array3::from_shape_fn((3, 2, 2), |(c, _, _)| 0.25 * c as f32)).unwrap();
        let ex = LabeledExample {
            image: img,
            class_label: 0,
        };
        let split = Split::from_examples(1, &[ex.clone(), ex]).unwrap();
        let (mean, std) = split.channel_stats();
        assert_eq!(mean, [0.0, 0.25, 0.5]);
        assert!(std.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn dataset_names_round_trip() {
        for name in [
            DatasetName::Cifar10,
            DatasetName::Cifar100,
            DatasetName::TinyImagenet,
            DatasetName::Synthetic,
        ] {
            assert_eq!(name.as_str().parse::<DatasetName>().unwrap(), name);
        }
        assert!("mnist".parse::<DatasetName>().is_err());
    }

    #[test]
    fn real_datasets_require_a_root() {
        let spec = DatasetSpec {
            name: DatasetName::Cifar10,
            root: None,
            synthetic: SyntheticSpec::default(),
        };
        assert!(matches!(load_dataset(&spec, 0), Err(Error::Config(_))));
    }
}
