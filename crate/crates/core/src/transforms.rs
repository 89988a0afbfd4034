//! Localizable pretext transformations.
//!
//! Each transform touches exactly one quadrant of a 2x2 grid laid over the
//! image and emits a self-label that encodes its parameters:
//!
//! | task            | parameters               | labels |
//! |-----------------|--------------------------|--------|
//! | LoRot-E         | quadrant x rotation step | 16     |
//! | quadrant flip   | flipped or not           | 2      |
//! | channel shuffle | permutation of (R,G,B)   | 6      |
//!
//! Quadrants are numbered row-major: 0 top-left, 1 top-right, 2 bottom-left,
//! 3 bottom-right. The image is split at `floor(H/2)` rows and `floor(W/2)`
//! columns. All functions are pure; randomness is passed in explicitly.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 3-channel, channel-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Array3<f32>);

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::InvalidDimension(format!(
                "expected 3 channels, got {c}"
            )));
        }
        if h < 2 || w < 2 {
            return Err(Error::InvalidDimension(format!(
                "image must be at least 2x2, got {h}x{w}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self(data))
    }

    /// Builds an image from `3*h*w` channel-major values.
    pub fn from_vec(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        let data = Array3::from_shape_vec((3, h, w), values)
            .map_err(|e| Error::InvalidDimension(e.to_string()))?;
        Self::new(data)
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(Array3::zeros((3, h, w)))
    }

    pub fn height(&self) -> usize {
        self.0.dim().1
    }

    pub fn width(&self) -> usize {
        self.0.dim().2
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array3<f32> {
        &self.0
    }

    pub fn into_array(self) -> Array3<f32> {
        self.0
    }
}

/// Index into the 2x2 quadrant grid, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuadrantId(u8);

impl QuadrantId {
    pub const ALL: [QuadrantId; 4] = [QuadrantId(0), QuadrantId(1), QuadrantId(2), QuadrantId(3)];

    pub fn new(value: u8) -> Result<Self> {
        if value > 3 {
            return Err(Error::Domain(format!("quadrant {value} outside [0, 3]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// Counterclockwise rotation by `value * 90` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotationStep(u8);

impl RotationStep {
    pub const ALL: [RotationStep; 4] = [
        RotationStep(0),
        RotationStep(1),
        RotationStep(2),
        RotationStep(3),
    ];

    pub fn new(value: u8) -> Result<Self> {
        if value > 3 {
            return Err(Error::Domain(format!("rotation step {value} outside [0, 3]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// The step that undoes this one.
    pub fn inverse(self) -> Self {
        Self((4 - self.0) % 4)
    }
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// A permutation of the three color channels, indexed lexicographically.
///
/// Output channel `c` takes input channel `mapping()[c]`; index 0 is the
/// identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation3(u8);

impl Permutation3 {
    pub const IDENTITY: Permutation3 = Permutation3(0);

    pub fn new(index: u8) -> Result<Self> {
        if index > 5 {
            return Err(Error::Domain(format!("permutation index {index} outside [0, 5]")));
        }
        Ok(Self(index))
    }

    pub fn all() -> impl Iterator<Item = Permutation3> {
        (0..6).map(Permutation3)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn mapping(self) -> [usize; 3] {
        PERMUTATIONS[self.0 as usize]
    }

    fn from_mapping(mapping: [usize; 3]) -> Self {
        let index = PERMUTATIONS
            .iter()
            .position(|p| *p == mapping)
            .expect("mapping is a permutation of (0, 1, 2)");
        Self(index as u8)
    }

    pub fn inverse(self) -> Self {
        let m = self.mapping();
        let mut inv = [0; 3];
        for (c, &src) in m.iter().enumerate() {
            inv[src] = c;
        }
        Self::from_mapping(inv)
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(self, next: Permutation3) -> Self {
        let first = self.mapping();
        let second = next.mapping();
        Self::from_mapping([first[second[0]], first[second[1]], first[second[2]]])
    }
}

/// The three pretext tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LorotE,
    #[serde(alias = "quad_flip")]
    Flip,
    #[serde(alias = "channel_shuffle")]
    Shuffle,
}

impl TaskKind {
    /// Canonical application order for composed transforms.
    pub const ALL: [TaskKind; 3] = [TaskKind::LorotE, TaskKind::Flip, TaskKind::Shuffle];

    pub fn label_cardinality(self) -> usize {
        match self {
            TaskKind::LorotE => 16,
            TaskKind::Flip => 2,
            TaskKind::Shuffle => 6,
        }
    }

    /// Short machine name, as accepted on the command line.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LorotE => "lorot_e",
            TaskKind::Flip => "flip",
            TaskKind::Shuffle => "shuffle",
        }
    }

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::LorotE => "LoRot-E",
            TaskKind::Flip => "Flip",
            TaskKind::Shuffle => "ShuffleChannel",
        }
    }

    fn canonical_rank(self) -> usize {
        match self {
            TaskKind::LorotE => 0,
            TaskKind::Flip => 1,
            TaskKind::Shuffle => 2,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "lorot_e" | "lorot" | "rotation" => Ok(TaskKind::LorotE),
            "flip" | "quad_flip" => Ok(TaskKind::Flip),
            "shuffle" | "channel_shuffle" => Ok(TaskKind::Shuffle),
            other => Err(Error::Config(format!(
                "unknown task '{other}'; valid tasks: lorot_e, flip, shuffle"
            ))),
        }
    }
}

/// Parses a comma-separated task list such as `lorot_e,shuffle`.
pub fn parse_task_list(s: &str) -> Result<Vec<TaskKind>> {
    let tasks = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(TaskKind::from_str)
        .collect::<Result<Vec<_>>>()?;
    check_unique(&tasks)?;
    Ok(tasks)
}

pub(crate) fn check_unique(tasks: &[TaskKind]) -> Result<()> {
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].contains(t) {
            return Err(Error::Config(format!("task '{t}' listed twice")));
        }
    }
    Ok(())
}

/// Task-specific sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformParams {
    Rotation(RotationStep),
    Flip(bool),
    Shuffle(Permutation3),
}

/// One applied pretext transform and its self-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub task: TaskKind,
    pub quadrant: QuadrantId,
    pub params: TransformParams,
    pub label: usize,
}

impl TransformOutcome {
    /// Builds an outcome, deriving the label from the parameters.
    pub fn new(quadrant: QuadrantId, params: TransformParams) -> Self {
        let (task, label) = match params {
            TransformParams::Rotation(r) => (
                TaskKind::LorotE,
                lorot_label(quadrant, r),
            ),
            TransformParams::Flip(f) => (TaskKind::Flip, usize::from(f)),
            TransformParams::Shuffle(p) => (TaskKind::Shuffle, p.index() as usize),
        };
        Self {
            task,
            quadrant,
            params,
            label,
        }
    }
}

fn lorot_label(q: QuadrantId, r: RotationStep) -> usize {
    4 * q.value() as usize + r.value() as usize
}

/// Half-open region `(row_start, row_end, col_start, col_end)`.
pub type Region = (usize, usize, usize, usize);

pub fn quadrant_bounds(q: QuadrantId, height: usize, width: usize) -> Result<Region> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidDimension(format!(
            "quadrants need an image of at least 2x2, got {height}x{width}"
        )));
    }
    let (mid_r, mid_c) = (height / 2, width / 2);
    let (rows, cols) = match q.value() {
        0 => ((0, mid_r), (0, mid_c)),
        1 => ((0, mid_r), (mid_c, width)),
        2 => ((mid_r, height), (0, mid_c)),
        _ => ((mid_r, height), (mid_c, width)),
    };
    Ok((rows.0, rows.1, cols.0, cols.1))
}

fn rotate_in_place(data: &mut Array3<f32>, region: Region, r: RotationStep) -> Result<()> {
    let (r0, r1, c0, c1) = region;
    let (rows, cols) = (r1 - r0, c1 - c0);
    if r.value() % 2 == 1 && rows != cols {
        return Err(Error::Shape(format!(
            "cannot rotate a {rows}x{cols} quadrant by {} degrees",
            r.value() as u32 * 90
        )));
    }
    if r.value() == 0 {
        return Ok(());
    }
    let src = data.slice(s![.., r0..r1, c0..c1]).to_owned();
    let mut dst = data.slice_mut(s![.., r0..r1, c0..c1]);
    for ch in 0..3 {
        for i in 0..rows {
            for j in 0..cols {
                dst[[ch, i, j]] = match r.value() {
                    1 => src[[ch, j, cols - 1 - i]],
                    2 => src[[ch, rows - 1 - i, cols - 1 - j]],
                    _ => src[[ch, rows - 1 - j, i]],
                };
            }
        }
    }
    Ok(())
}

fn flip_in_place(data: &mut Array3<f32>, region: Region) {
    let (r0, r1, c0, c1) = region;
    let mirrored = data.slice(s![.., r0..r1, c0..c1;-1]).to_owned();
    data.slice_mut(s![.., r0..r1, c0..c1]).assign(&mirrored);
}

fn shuffle_in_place(data: &mut Array3<f32>, region: Region, p: Permutation3) {
    if p == Permutation3::IDENTITY {
        return;
    }
    let (r0, r1, c0, c1) = region;
    let src = data.slice(s![.., r0..r1, c0..c1]).to_owned();
    for (c, &from) in p.mapping().iter().enumerate() {
        data.slice_mut(s![c, r0..r1, c0..c1])
            .assign(&src.slice(s![from, .., ..]));
    }
}

fn apply_in_place(data: &mut Array3<f32>, outcome: &TransformOutcome) -> Result<()> {
    let (_, h, w) = data.dim();
    let region = quadrant_bounds(outcome.quadrant, h, w)?;
    match outcome.params {
        TransformParams::Rotation(r) => rotate_in_place(data, region, r)?,
        TransformParams::Flip(true) => flip_in_place(data, region),
        TransformParams::Flip(false) => {}
        TransformParams::Shuffle(p) => shuffle_in_place(data, region, p),
    }
    Ok(())
}

/// Rotates quadrant `q` counterclockwise by `r`; label `4q + r`.
pub fn apply_lorot_e(img: &ImageTensor, q: QuadrantId, r: RotationStep) -> Result<(ImageTensor, usize)> {
    let mut out = img.0.clone();
    let region = quadrant_bounds(q, img.height(), img.width())?;
    rotate_in_place(&mut out, region, r)?;
    Ok((ImageTensor(out), lorot_label(q, r)))
}

/// Mirrors quadrant `q` left-right when `flipped`; label 1 if flipped.
pub fn apply_quadrant_flip(img: &ImageTensor, q: QuadrantId, flipped: bool) -> Result<(ImageTensor, usize)> {
    let mut out = img.0.clone();
    if flipped {
        flip_in_place(&mut out, quadrant_bounds(q, img.height(), img.width())?);
    }
    Ok((ImageTensor(out), usize::from(flipped)))
}

/// Permutes the channels of quadrant `q`; label is the permutation index.
pub fn apply_channel_shuffle(img: &ImageTensor, q: QuadrantId, p: Permutation3) -> Result<(ImageTensor, usize)> {
    let mut out = img.0.clone();
    shuffle_in_place(&mut out, quadrant_bounds(q, img.height(), img.width())?, p);
    Ok((ImageTensor(out), p.index() as usize))
}

/// Applies a single outcome.
pub fn apply_outcome(img: &ImageTensor, outcome: &TransformOutcome) -> Result<ImageTensor> {
    let mut out = img.0.clone();
    apply_in_place(&mut out, outcome)?;
    Ok(ImageTensor(out))
}

/// Draws a quadrant and parameters uniformly for `task`.
pub fn sample_outcome<R: Rng + ?Sized>(task: TaskKind, rng: &mut R) -> TransformOutcome {
    let quadrant = QuadrantId(rng.random_range(0..4u8));
    let params = match task {
        TaskKind::LorotE => TransformParams::Rotation(RotationStep(rng.random_range(0..4u8))),
        TaskKind::Flip => TransformParams::Flip(rng.random_bool(0.5)),
        TaskKind::Shuffle => TransformParams::Shuffle(Permutation3(rng.random_range(0..6u8))),
    };
    TransformOutcome::new(quadrant, params)
}

/// Applies up to one outcome per task, always in the order LoRot-E, flip,
/// shuffle. Labels are returned in the order the outcomes were given.
pub fn apply_composed(img: &ImageTensor, outcomes: &[TransformOutcome]) -> Result<(ImageTensor, Vec<usize>)> {
    let tasks: Vec<TaskKind> = outcomes.iter().map(|o| o.task).collect();
    check_unique(&tasks).map_err(|e| Error::InvalidComposition(e.to_string()))?;

    let mut ordered: Vec<&TransformOutcome> = outcomes.iter().collect();
    ordered.sort_by_key(|o| o.task.canonical_rank());

    let mut out = img.0.clone();
    for outcome in ordered {
        apply_in_place(&mut out, outcome)?;
    }
    let labels = outcomes.iter().map(|o| o.label).collect();
    Ok((ImageTensor(out), labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn distinct_image(h: usize, w: usize) -> ImageTensor {
        let n = 3 * h * w;
        ImageTensor::from_vec(h, w, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    fn q(v: u8) -> QuadrantId {
        QuadrantId::new(v).unwrap()
    }

    #[test]
    fn bounds_even_split() {
        assert_eq!(quadrant_bounds(q(0), 32, 32).unwrap(), (0, 16, 0, 16));
        assert_eq!(quadrant_bounds(q(3), 32, 32).unwrap(), (16, 32, 16, 32));
        assert_eq!(quadrant_bounds(q(1), 5, 5).unwrap(), (0, 2, 2, 5));
    }

    #[test]
    fn bounds_reject_tiny_images() {
        assert!(matches!(quadrant_bounds(q(0), 1, 8), Err(Error::InvalidDimension(_))));
        assert!(matches!(quadrant_bounds(q(0), 8, 1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn quadrants_partition_every_small_image() {
        for h in 2..=64 {
            for w in 2..=64 {
                let mut hits = vec![0u8; h * w];
                for quad in QuadrantId::ALL {
                    let (r0, r1, c0, c1) = quadrant_bounds(quad, h, w).unwrap();
                    for r in r0..r1 {
                        for c in c0..c1 {
                            hits[r * w + c] += 1;
                        }
                    }
                }
                assert!(hits.iter().all(|&n| n == 1), "{h}x{w} is not partitioned");
            }
        }
    }

    #[test]
    fn image_validation() {
        assert!(ImageTensor::new(Array3::zeros((1, 4, 4))).is_err());
        assert!(ImageTensor::new(Array3::zeros((3, 1, 4))).is_err());
        assert!(ImageTensor::new(Array3::from_elem((3, 4, 4), 1.5)).is_err());
        assert!(ImageTensor::new(Array3::from_elem((3, 4, 4), f32::NAN)).is_err());
    }

    #[test]
    fn lorot_identity_and_label() {
        let img = distinct_image(8, 8);
        let (out, label) = apply_lorot_e(&img, q(0), RotationStep(0)).unwrap();
        assert_eq!(out, img);
        assert_eq!(label, 0);

        let (out, label) = apply_lorot_e(&img, q(3), RotationStep(2)).unwrap();
        assert_eq!(label, 14);
        let a = img.as_array();
        let b = out.as_array();
        for c in 0..3 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(b[[c, 4 + i, 4 + j]], a[[c, 7 - i, 7 - j]]);
                }
            }
        }
    }

    #[test]
    fn lorot_quarter_turn_is_counterclockwise() {
        let img = distinct_image(4, 4);
        let (out, _) = apply_lorot_e(&img, q(0), RotationStep(1)).unwrap();
        // top-right pixel of the quadrant moves to its top-left
        assert_eq!(out.as_array()[[0, 0, 0]], img.as_array()[[0, 0, 1]]);
        assert_eq!(out.as_array()[[0, 1, 0]], img.as_array()[[0, 0, 0]]);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = distinct_image(6, 6);
        for quad in QuadrantId::ALL {
            let mut cur = img.clone();
            for _ in 0..4 {
                cur = apply_lorot_e(&cur, quad, RotationStep(1)).unwrap().0;
            }
            assert_eq!(cur, img);
            for r in RotationStep::ALL {
                let once = apply_lorot_e(&img, quad, r).unwrap().0;
                let back = apply_lorot_e(&once, quad, r.inverse()).unwrap().0;
                assert_eq!(back, img);
            }
        }
    }

    #[test]
    fn lorot_rejects_non_square_quarter_turn() {
        let img = distinct_image(5, 5);
        assert!(matches!(
            apply_lorot_e(&img, q(1), RotationStep(1)),
            Err(Error::Shape(_))
        ));
        assert!(apply_lorot_e(&img, q(1), RotationStep(2)).is_ok());
        assert!(apply_lorot_e(&img, q(0), RotationStep(3)).is_ok());
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = distinct_image(8, 8);
        let (same, label) = apply_quadrant_flip(&img, q(1), false).unwrap();
        assert_eq!((same.clone(), label), (img.clone(), 0));

        let (out, label) = apply_quadrant_flip(&img, q(1), true).unwrap();
        assert_eq!(label, 1);
        for c in 0..3 {
            for r in 0..4 {
                for k in 0..4 {
                    assert_eq!(out.as_array()[[c, r, 4 + k]], img.as_array()[[c, r, 7 - k]]);
                }
            }
        }
        let (twice, _) = apply_quadrant_flip(&out, q(1), true).unwrap();
        assert_eq!(twice, img);
    }

    #[test]
    fn shuffle_reverses_channels_for_index_five() {
        let img = distinct_image(4, 4);
        let p = Permutation3::new(5).unwrap();
        assert_eq!(p.mapping(), [2, 1, 0]);
        let (out, label) = apply_channel_shuffle(&img, q(2), p).unwrap();
        assert_eq!(label, 5);
        let (a, b) = (img.as_array(), out.as_array());
        assert_eq!(b[[0, 2, 0]], a[[2, 2, 0]]);
        assert_eq!(b[[1, 2, 0]], a[[1, 2, 0]]);
        assert_eq!(b[[2, 2, 0]], a[[0, 2, 0]]);
        assert_eq!(b[[0, 0, 0]], a[[0, 0, 0]]);
    }

    #[test]
    fn permutation_group_laws() {
        for p in Permutation3::all() {
            assert_eq!(p.then(p.inverse()), Permutation3::IDENTITY);
            for r in Permutation3::all() {
                let img = distinct_image(4, 4);
                let two_step = apply_channel_shuffle(&img, q(0), p).unwrap().0;
                let two_step = apply_channel_shuffle(&two_step, q(0), r).unwrap().0;
                let composed = apply_channel_shuffle(&img, q(0), p.then(r)).unwrap().0;
                assert_eq!(two_step, composed);
            }
            let img = distinct_image(6, 6);
            let there = apply_channel_shuffle(&img, q(3), p).unwrap().0;
            let back = apply_channel_shuffle(&there, q(3), p.inverse()).unwrap().0;
            assert_eq!(back, img);
        }
    }

    #[test]
    fn identity_composition() {
        let img = distinct_image(8, 8);
        let (out, labels) = apply_composed(&img, &[]).unwrap();
        assert_eq!(out, img);
        assert!(labels.is_empty());

        let outcomes = [
            TransformOutcome::new(q(0), TransformParams::Rotation(RotationStep(0))),
            TransformOutcome::new(q(2), TransformParams::Flip(false)),
            TransformOutcome::new(q(3), TransformParams::Shuffle(Permutation3::IDENTITY)),
        ];
        let (out, labels) = apply_composed(&img, &outcomes).unwrap();
        assert_eq!(out, img);
        assert_eq!(labels, vec![0, 0, 0]);
    }

    #[test]
    fn composition_rejects_duplicates() {
        let img = distinct_image(8, 8);
        let o = TransformOutcome::new(q(0), TransformParams::Flip(true));
        assert!(matches!(
            apply_composed(&img, &[o, o]),
            Err(Error::InvalidComposition(_))
        ));
    }

    #[test]
    fn composition_applies_in_canonical_order() {
        let img = distinct_image(8, 8);
        let rot = TransformOutcome::new(q(0), TransformParams::Rotation(RotationStep(1)));
        let flip = TransformOutcome::new(q(0), TransformParams::Flip(true));
        let (a, la) = apply_composed(&img, &[flip, rot]).unwrap();
        let (b, lb) = apply_composed(&img, &[rot, flip]).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, vec![1, 1]);
        assert_eq!(lb, vec![1, 1]);
        let manual = apply_outcome(&apply_outcome(&img, &rot).unwrap(), &flip).unwrap();
        assert_eq!(a, manual);
    }

    #[test]
    fn sampling_is_deterministic_and_uniform() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|_| sample_outcome(TaskKind::Shuffle, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));

        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 16];
        for _ in 0..n {
            let o = sample_outcome(TaskKind::LorotE, &mut rng);
            counts[o.label] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 16.0).abs() < 0.01);
        }
        let flips = (0..n)
            .filter(|_| sample_outcome(TaskKind::Flip, &mut rng).label == 1)
            .count();
        assert!((flips as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn task_names_parse() {
        assert_eq!(parse_task_list("lorot_e,shuffle").unwrap(), vec![TaskKind::LorotE, TaskKind::Shuffle]);
        assert_eq!(parse_task_list("LoRot-E,quad_flip").unwrap(), vec![TaskKind::LorotE, TaskKind::Flip]);
        let err = parse_task_list("lorot_e,jigsaw").unwrap_err().to_string();
        assert!(err.contains("lorot_e, flip, shuffle"), "{err}");
        assert!(parse_task_list("flip,flip").is_err());
    }

    fn arb_image() -> impl Strategy<Value = ImageTensor> {
        (1usize..6).prop_flat_map(|half| {
            let side = 2 * half;
            prop::collection::vec(0.0f32..=1.0, 3 * side * side)
                .prop_map(move |v| ImageTensor::from_vec(side, side, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn outside_quadrant_is_untouched(img in arb_image(), quad in 0u8..4, task in 0usize..3, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut outcome = sample_outcome(TaskKind::ALL[task], &mut rng);
            outcome.quadrant = q(quad);
            let out = apply_outcome(&img, &outcome).unwrap();
            let (r0, r1, c0, c1) = quadrant_bounds(q(quad), img.height(), img.width()).unwrap();
            for ((c, r, k), v) in img.as_array().indexed_iter() {
                let inside = (r0..r1).contains(&r) && (c0..c1).contains(&k);
                if !inside {
                    prop_assert_eq!(v.to_bits(), out.as_array()[[c, r, k]].to_bits());
                }
            }
        }

        #[test]
        fn spatial_transforms_preserve_pixel_multiset(img in arb_image(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let outcomes = [
                sample_outcome(TaskKind::LorotE, &mut rng),
                sample_outcome(TaskKind::Flip, &mut rng),
                TransformOutcome::new(q(rng.random_range(0..4)), TransformParams::Shuffle(Permutation3::IDENTITY)),
            ];
            let (out, _) = apply_composed(&img, &outcomes).unwrap();
            let mut a: Vec<u32> = img.as_array().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = out.as_array().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }
}
