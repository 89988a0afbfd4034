//! CIFAR-10 and CIFAR-100 binary batch files.
//!
//! CIFAR-10 records are 3073 bytes: one label byte followed by three
//! row-major 32x32 planes (R, G, B). CIFAR-100 records add a leading coarse
//! label byte; the fine label is the class.

use std::fs;
use std::path::{Path, PathBuf};

use super::Split;
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PIXEL_BYTES: usize = 3 * SIDE * SIDE;
pub const CIFAR10_RECORD_LEN: usize = PIXEL_BYTES + 1;
pub const CIFAR100_RECORD_LEN: usize = PIXEL_BYTES + 2;

/// One parsed record, kept at byte level so it can be written back exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    /// Present only for CIFAR-100.
    pub coarse_label: Option<u8>,
    pub label: u8,
    pub pixels: Vec<u8>,
}

fn parse_records(
    bytes: &[u8],
    path: &Path,
    header: usize,
    max_label: u8,
    max_coarse: u8,
) -> Result<Vec<CifarRecord>> {
    let record_len = PIXEL_BYTES + header;
    let tail = bytes.len() % record_len;
    if tail != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - tail) as u64,
            message: format!(
                "file length {} is not a multiple of the {record_len}-byte record size",
                bytes.len()
            ),
        });
    }
    bytes
        .chunks_exact(record_len)
        .enumerate()
        .map(|(i, rec)| {
            let offset = (i * record_len) as u64;
            let label = rec[header - 1];
            if label > max_label {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: offset + header as u64 - 1,
                    message: format!("label byte {label} exceeds {max_label}"),
                });
            }
            let coarse_label = if header == 2 {
                if rec[0] > max_coarse {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        offset,
                        message: format!("coarse label byte {} exceeds {max_coarse}", rec[0]),
                    });
                }
                Some(rec[0])
            } else {
                None
            };
            Ok(CifarRecord {
                coarse_label,
                label,
                pixels: rec[header..].to_vec(),
            })
        })
        .collect()
}

/// Parses CIFAR-10 records; `path` is only used in error messages.
pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    parse_records(bytes, path, 1, 9, 0)
}

pub fn parse_cifar100(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    parse_records(bytes, path, 2, 99, 19)
}

pub fn encode_cifar10_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR10_RECORD_LEN);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

pub fn encode_cifar100_records(records: &[CifarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * CIFAR100_RECORD_LEN);
    for r in records {
        out.push(r.coarse_label.unwrap_or(0));
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

fn records_to_split(records: Vec<CifarRecord>, num_classes: usize) -> Split {
    let mut pixels = Vec::with_capacity(records.len() * PIXEL_BYTES);
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        labels.push(r.label as usize);
        pixels.extend_from_slice(&r.pixels);
    }
    Split::from_bytes(SIDE, SIDE, num_classes, pixels, labels)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Returns the first directory among `root` and `root/<sub>` holding `probe`.
fn locate(root: &Path, sub: &str, probe: &str) -> PathBuf {
    let nested = root.join(sub);
    if !root.join(probe).exists() && nested.join(probe).exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

/// Loads `data_batch_{1..5}.bin` and `test_batch.bin` from `root` (or from
/// `root/cifar-10-batches-bin`).
pub fn load_cifar10(root: &Path) -> Result<(Split, Split)> {
    let dir = locate(root, "cifar-10-batches-bin", "test_batch.bin");
    let mut train = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        train.extend(parse_cifar10(&read(&path)?, &path)?);
    }
    let test_path = dir.join("test_batch.bin");
    let test = parse_cifar10(&read(&test_path)?, &test_path)?;
    Ok((records_to_split(train, 10), records_to_split(test, 10)))
}

/// Loads `train.bin` and `test.bin` from `root` (or `root/cifar-100-binary`).
pub fn load_cifar100(root: &Path) -> Result<(Split, Split)> {
    let dir = locate(root, "cifar-100-binary", "train.bin");
    let train_path = dir.join("train.bin");
    let test_path = dir.join("test.bin");
    let train = parse_cifar100(&read(&train_path)?, &train_path)?;
    let test = parse_cifar100(&read(&test_path)?, &test_path)?;
    Ok((records_to_split(train, 100), records_to_split(test, 100)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record10(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXEL_BYTES));
        r
    }

    #[test]
    fn crafted_cifar10_record() {
        let bytes = record10(7, 255);
        let recs = parse_cifar10(&bytes, Path::new("mem")).unwrap();
        assert_eq!(recs.len(), 1);
        let split = records_to_split(recs, 10);
        let ex = split.example(0);
        assert_eq!(ex.class_label, 7);
        assert!(ex.image.as_array().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pixel_scaling_and_plane_layout() {
        let mut bytes = record10(1, 0);
        // R plane row 0 col 1, G plane row 2 col 0, B plane last pixel
        bytes[1 + 1] = 128;
        bytes[1 + 1024 + 2 * 32] = 64;
        bytes[1 + 3071] = 255;
        let split = records_to_split(parse_cifar10(&bytes, Path::new("mem")).unwrap(), 10);
        let img = split.image(0);
        let a = img.as_array();
        assert!((a[[0, 0, 1]] - 0.501_960_8).abs() < 1e-6);
        assert_eq!(a[[0, 0, 1]], 128.0 / 255.0);
        assert_eq!(a[[1, 2, 0]], 64.0 / 255.0);
        assert_eq!(a[[2, 31, 31]], 1.0);
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn crafted_cifar100_record() {
        let mut bytes = vec![3, 42];
        bytes.extend((0..PIXEL_BYTES).map(|i| (i % 256) as u8));
        let recs = parse_cifar100(&bytes, Path::new("mem")).unwrap();
        assert_eq!(recs[0].coarse_label, Some(3));
        assert_eq!(recs[0].label, 42);
        assert_eq!(encode_cifar100_records(&recs), bytes);
        let split = records_to_split(recs, 100);
        assert_eq!(split.num_classes(), 100);
        assert_eq!(split.labels(), &[42]);
    }

    #[test]
    fn bad_length_reports_offset() {
        let mut bytes = record10(0, 0);
        bytes.extend(record10(1, 0));
        bytes.extend([9u8; 10]);
        match parse_cifar10(&bytes, Path::new("batch.bin")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 2 * CIFAR10_RECORD_LEN as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_offset() {
        let mut bytes = record10(0, 0);
        bytes.extend(record10(10, 0));
        match parse_cifar10(&bytes, Path::new("batch.bin")) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, CIFAR10_RECORD_LEN as u64);
                assert!(message.contains("10"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
        let mut bytes = vec![0u8, 100];
        bytes.extend([0u8; PIXEL_BYTES]);
        assert!(matches!(
            parse_cifar100(&bytes, Path::new("x")),
            Err(Error::Format { offset: 1, .. })
        ));
    }

    #[test]
    fn loads_standard_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("cifar-10-batches-bin");
        fs::create_dir(&nested).unwrap();
        for i in 1..=5u8 {
            let mut b = record10(i, i);
            b.extend(record10(0, 0));
            fs::write(nested.join(format!("data_batch_{i}.bin")), b).unwrap();
        }
        fs::write(nested.join("test_batch.bin"), record10(9, 1)).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(test.len(), 1);
        assert_eq!(train.labels()[..4], [1, 0, 2, 0]);
        assert_eq!(test.labels(), &[9]);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar100(dir.path()), Err(Error::Io { .. })));
    }
}
