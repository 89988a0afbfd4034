//! Tiny-ImageNet directory layout:
//!
//! ```text
//! train/<wnid>/images/*.JPEG
//! val/images/*.JPEG
//! val/val_annotations.txt    filename \t wnid \t x0 \t y0 \t x1 \t y1
//! ```
//!
//! Class ids follow the lexicographic order of the training wnids.
//! Grayscale images are replicated to three channels.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::Split;
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "jpeg" | "jpg" | "png"))
}

struct Collector {
    size: Option<(u32, u32)>,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl Collector {
    fn new() -> Self {
        Self {
            size: None,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(&mut self, path: &Path, label: usize) -> Result<()> {
        let rgb = image::open(path)?.to_rgb8();
        let dims = rgb.dimensions();
        match self.size {
            None => self.size = Some(dims),
            Some(expected) if expected != dims => {
                return Err(Error::Data(format!(
                    "{path:?} is {}x{}, expected {}x{}",
                    dims.0, dims.1, expected.0, expected.1
                )))
            }
            _ => {}
        }
        // interleaved RGB -> channel planes
        let raw = rgb.as_raw();
        for c in 0..3 {
            self.pixels.extend(raw.iter().skip(c).step_by(3));
        }
        self.labels.push(label);
        Ok(())
    }

    fn finish(self, num_classes: usize) -> Result<Split> {
        let (w, h) = self
            .size
            .ok_or_else(|| Error::Data("no images found".into()))?;
        Ok(Split::from_bytes(
            h as usize,
            w as usize,
            num_classes,
            self.pixels,
            self.labels,
        ))
    }
}

/// Loads the train and val splits from `root` (or `root/tiny-imagenet-200`).
pub fn load_tiny_imagenet(root: &Path) -> Result<(Split, Split)> {
    let root = if !root.join("train").is_dir() && root.join("tiny-imagenet-200/train").is_dir() {
        root.join("tiny-imagenet-200")
    } else {
        root.to_path_buf()
    };
    let train_dir = root.join("train");
    let wnids: Vec<String> = sorted_entries(&train_dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect();
    if wnids.is_empty() {
        return Err(Error::Data(format!("no class directories under {train_dir:?}")));
    }
    let class_of: BTreeMap<&str, usize> = wnids
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let num_classes = wnids.len();

    let mut train = Collector::new();
    for (label, wnid) in wnids.iter().enumerate() {
        let images = train_dir.join(wnid).join("images");
        for path in sorted_entries(&images)?.into_iter().filter(|p| is_image(p)) {
            train.push(&path, label)?;
        }
    }

    let val_dir = root.join("val");
    let ann_path = val_dir.join("val_annotations.txt");
    let annotations = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut val = Collector::new();
    for (line_no, line) in annotations.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(file), Some(wnid)) = (fields.next(), fields.next()) else {
            return Err(Error::Data(format!(
                "{ann_path:?} line {}: expected tab-separated filename and wnid",
                line_no + 1
            )));
        };
        let label = *class_of.get(wnid).ok_or_else(|| {
            Error::Data(format!(
                "{ann_path:?} line {}: unknown wnid '{wnid}'",
                line_no + 1
            ))
        })?;
        val.push(&val_dir.join("images").join(file), label)?;
    }

    Ok((train.finish(num_classes)?, val.finish(num_classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn write_rgb(path: &Path, color: [u8; 3]) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_pixel(8, 8, Rgb(color)).save(path).unwrap();
    }

    fn layout(dir: &Path, wnids: &[&str]) {
        for (i, w) in wnids.iter().enumerate() {
            write_rgb(
                &dir.join(format!("train/{w}/images/{w}_0.JPEG")),
                [40 * i as u8, 0, 0],
            );
        }
        write_rgb(&dir.join("val/images/val_0.JPEG"), [0, 200, 0]);
    }

    #[test]
    fn wnids_map_in_sorted_order() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["n09999999", "n01443537", "n02000000"]);
        fs::write(
            dir.path().join("val/val_annotations.txt"),
            "val_0.JPEG\tn01443537\t0\t0\t63\t63\n",
        )
        .unwrap();
        let (train, val) = load_tiny_imagenet(dir.path()).unwrap();
        assert_eq!(train.num_classes(), 3);
        assert_eq!(train.labels(), &[0, 1, 2]);
        assert_eq!(val.labels(), &[0]);
        assert_eq!((val.height(), val.width()), (8, 8));
    }

    #[test]
    fn grayscale_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["n01443537"]);
        GrayImage::from_pixel(8, 8, Luma([77]))
            .save(dir.path().join("val/images/val_0.JPEG"))
            .unwrap();
        fs::write(
            dir.path().join("val/val_annotations.txt"),
            "val_0.JPEG\tn01443537\t0\t0\t7\t7\n",
        )
        .unwrap();
        let (_, val) = load_tiny_imagenet(dir.path()).unwrap();
        let img = val.image(0);
        let a = img.as_array();
        for c in 1..3 {
            assert_eq!(a[[c, 3, 3]], a[[0, 3, 3]]);
        }
    }

    #[test]
    fn unknown_wnid_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), &["n01443537"]);
        fs::write(
            dir.path().join("val/val_annotations.txt"),
            "val_0.JPEG\tn00000000\t0\t0\t7\t7\n",
        )
        .unwrap();
        let err = load_tiny_imagenet(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("n00000000")), "{err}");
    }
}
