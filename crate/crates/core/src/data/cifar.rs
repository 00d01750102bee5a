//! CIFAR binary record files.
//!
//! CIFAR-10 records are 3073 bytes: one label byte, then 1024 red, 1024
//! green and 1024 blue bytes in row-major order. CIFAR-100 records are
//! 3074 bytes: coarse label, fine label, then the same pixel planes.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;
pub const PIXEL_BYTES: usize = 3 * IMAGE_SIDE * IMAGE_SIDE;
pub const CIFAR10_RECORD: usize = PIXEL_BYTES + 1;
pub const CIFAR100_RECORD: usize = PIXEL_BYTES + 2;

/// One 32×32 RGB image with its class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub label: usize,
    /// CIFAR-100 superclass; kept for re-serialization only.
    pub coarse: Option<u8>,
    /// Planar R, G, B bytes, exactly [`PIXEL_BYTES`] long.
    pub pixels: Vec<u8>,
}

impl ImageRecord {
    pub fn new(label: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != PIXEL_BYTES {
            return Err(Error::Config(format!("image has {} bytes, expected {PIXEL_BYTES}", pixels.len())));
        }
        Ok(Self { label, coarse: None, pixels })
    }
}

/// Which CIFAR flavour a file or directory holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn num_classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    pub fn record_size(self) -> usize {
        match self {
            CifarKind::Cifar10 => CIFAR10_RECORD,
            CifarKind::Cifar100 => CIFAR100_RECORD,
        }
    }
}

fn format_err(path: &Path, offset: usize, detail: String) -> Error {
    Error::Format { path: PathBuf::from(path), offset: offset as u64, detail }
}

/// Parses an in-memory record file; `path` only labels errors.
pub fn parse_cifar_bytes(bytes: &[u8], kind: CifarKind, path: &Path) -> Result<Vec<ImageRecord>> {
    let size = kind.record_size();
    let whole = bytes.len() - bytes.len() % size;
    if whole != bytes.len() {
        return Err(format_err(
            path,
            whole,
            format!("truncated record: {} trailing bytes, records are {size} bytes", bytes.len() - whole),
        ));
    }
    let classes = kind.num_classes();
    bytes
        .chunks_exact(size)
        .enumerate()
        .map(|(i, rec)| {
            let start = i * size;
            let (coarse, label_at) = match kind {
                CifarKind::Cifar10 => (None, 0),
                CifarKind::Cifar100 => (Some(rec[0]), 1),
            };
            if let Some(c) = coarse.filter(|&c| c >= 20) {
                return Err(format_err(path, start, format!("coarse label {c} out of range 0..20")));
            }
            let label = rec[label_at] as usize;
            if label >= classes {
                return Err(format_err(path, start + label_at, format!("label {label} out of range 0..{classes}")));
            }
            Ok(ImageRecord { label, coarse, pixels: rec[label_at + 1..].to_vec() })
        })
        .collect()
}

pub fn parse_cifar10_bin(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    parse_cifar_bytes(&std::fs::read(path)?, CifarKind::Cifar10, path)
}

pub fn parse_cifar100_bin(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    parse_cifar_bytes(&std::fs::read(path)?, CifarKind::Cifar100, path)
}

/// Inverse of [`parse_cifar_bytes`]. CIFAR-100 records without a coarse
/// label get 0.
pub fn serialize_cifar(records: &[ImageRecord], kind: CifarKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * kind.record_size());
    for r in records {
        if kind == CifarKind::Cifar100 {
            out.push(r.coarse.unwrap_or(0));
        }
        out.push(r.label as u8);
        out.extend_from_slice(&r.pixels);
    }
    out
}

/// Train and test splits found under `dir` (or its standard
/// `cifar-10-batches-bin` / `cifar-100-binary` subdirectory).
pub fn load_cifar_dir(dir: impl AsRef<Path>, kind: CifarKind) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let dir = dir.as_ref();
    let (sub, train, test): (&str, Vec<String>, &str) = match kind {
        CifarKind::Cifar10 => (
            "cifar-10-batches-bin",
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            "test_batch.bin",
        ),
        CifarKind::Cifar100 => ("cifar-100-binary", vec!["train.bin".into()], "test.bin"),
    };
    let root = if dir.join(test).is_file() { dir.to_path_buf() } else { dir.join(sub) };
    if !root.join(test).is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {test} under {}", dir.display()),
        )));
    }
    let read = |name: &str| -> Result<Vec<ImageRecord>> {
        let p = root.join(name);
        parse_cifar_bytes(&std::fs::read(&p)?, kind, &p)
    };
    let mut train_records = Vec::new();
    for name in &train {
        train_records.extend(read(name)?);
    }
    Ok((train_records, read(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture10(label: u8, fill: u8) -> Vec<u8> {
        let mut v = vec![label];
        v.extend(std::iter::repeat_n(fill, PIXEL_BYTES));
        v
    }

    #[test]
    fn single_record_fixture() {
        let p = Path::new("one.bin");
        let recs = parse_cifar_bytes(&fixture10(7, 128), CifarKind::Cifar10, p).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, 7);
        assert!(recs[0].pixels.iter().all(|&b| b == 128));
        assert_eq!(recs[0].pixels.len(), 3072);

        let mut c100 = vec![3u8, 42];
        c100.extend((0..PIXEL_BYTES).map(|i| (i % 251) as u8));
        let recs = parse_cifar_bytes(&c100, CifarKind::Cifar100, p).unwrap();
        assert_eq!((recs[0].label, recs[0].coarse), (42, Some(3)));
        assert_eq!(recs[0].pixels[1024], (1024 % 251) as u8);
        assert!(parse_cifar_bytes(&[], CifarKind::Cifar100, p).unwrap().is_empty());
    }

    #[test]
    fn errors_carry_offsets() {
        let p = Path::new("bad.bin");
        let mut two = fixture10(1, 0);
        two.extend(fixture10(12, 0));
        match parse_cifar_bytes(&two, CifarKind::Cifar10, p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
        match parse_cifar_bytes(&two[..3072], CifarKind::Cifar10, p) {
            Err(Error::Format { offset, detail, .. }) => {
                assert_eq!(offset, 0);
                assert!(detail.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        match parse_cifar_bytes(&two[..3073 + 100], CifarKind::Cifar10, p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
        let mut c100 = vec![0u8, 100];
        c100.extend(vec![0; PIXEL_BYTES]);
        match parse_cifar_bytes(&c100, CifarKind::Cifar100, p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cifar-100-binary");
        std::fs::create_dir(&sub).unwrap();
        let mut rec = vec![1u8, 5];
        rec.extend(vec![9; PIXEL_BYTES]);
        std::fs::write(sub.join("train.bin"), rec.repeat(3)).unwrap();
        std::fs::write(sub.join("test.bin"), &rec).unwrap();
        let (train, test) = load_cifar_dir(dir.path(), CifarKind::Cifar100).unwrap();
        assert_eq!((train.len(), test.len()), (3, 1));
        assert!(load_cifar_dir(dir.path(), CifarKind::Cifar10).is_err());
    }
}
