//! Class-separable synthetic images for fast, reproducible runs.
//!
//! Every image shares one oriented colour ramp: channel means 0.35, 0.5 and
//! 0.65, plus a linear slope along an asymmetric direction. The ramp makes a
//! quadrant's orientation, mirroring and channel order visible locally. Each
//! class adds its own random texture on top, and every sample adds small
//! uniform noise, so pixel values are distinct with probability one and the
//! classes are separable by a nearest-centroid rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Split;
use crate::error::{Error, Result};

const CHANNEL_MEANS: [f32; 3] = [0.35, 0.5, 0.65];
const RAMP: f32 = 0.25;
const TEXTURE: f32 = 0.04;
const NOISE: f32 = 0.02;

/// Number of held-out examples per class for a given training size.
pub(crate) fn test_per_class(per_class: usize) -> usize {
    (per_class / 4).max(8)
}

/// Returns `(train, test)` with `per_class` training images per class.
pub fn synthetic_dataset(
    num_classes: usize,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<(Split, Split)> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 classes, got {num_classes}"
        )));
    }
    if size < 2 || !size.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "synthetic image size must be even and at least 2, got {size}"
        )));
    }
    let n = 3 * size * size;
    let mut pattern_rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (size - 1) as f32;
    let ramp: Vec<f32> = (0..n)
        .map(|i| {
            let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
            let (v, u) = (2.0 * y as f32 / span - 1.0, 2.0 * x as f32 / span - 1.0);
            CHANNEL_MEANS[c] + RAMP * (v + 2.0 * u) / 3.0
        })
        .collect();
    let bases: Vec<Vec<f32>> = (0..num_classes)
        .map(|_| {
            ramp.iter()
                .map(|&r| r + pattern_rng.random_range(-TEXTURE..TEXTURE))
                .collect()
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_da7a);
    let mut make = |count: usize| {
        let mut pixels = Vec::with_capacity(num_classes * count * n);
        let mut labels = Vec::with_capacity(num_classes * count);
        // interleave classes so any prefix is roughly balanced
        for _ in 0..count {
            for (class, base) in bases.iter().enumerate() {
                pixels.extend(base.iter().map(|&b| b + noise_rng.random_range(-NOISE..NOISE)));
                labels.push(class);
            }
        }
        Split::from_floats(size, size, num_classes, pixels, labels)
    };
    let train = make(per_class);
    let test = make(test_per_class(per_class));
    Ok((train, test))
}
