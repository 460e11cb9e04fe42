//! CIFAR-10 binary container: records of 1 label byte plus 3072 CHW pixel
//! bytes, 10,000 records per file.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const RECORD: usize = 3073;
const PIXELS: usize = 3072;

/// Load one `.bin` file, or every `data_batch_*.bin` inside a directory.
pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.display().to_string() });
    }
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::MissingArtifact {
                path: format!("{}/data_batch_*.bin", path.display()),
            });
        }
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for f in files {
            let part = load_file(&f)?;
            images.extend_from_slice(&part.0);
            labels.extend_from_slice(&part.1);
        }
        Dataset::new(images, labels, 3, 32, 32, 10)
    } else {
        let (images, labels) = load_file(path)?;
        Dataset::new(images, labels, 3, 32, 32, 10)
    }
}

fn load_file(path: &Path) -> Result<(Vec<f32>, Vec<u8>)> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        let offset = (bytes.len() / RECORD) * RECORD;
        return Err(Error::Parse {
            offset,
            msg: format!(
                "{}: {} bytes is not a whole number of 3073-byte records",
                path.display(),
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Parse {
                offset: i * RECORD,
                msg: format!("{}: label byte {} out of range", path.display(), label),
            });
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_records(records: &[(u8, u8)]) -> tempfile::NamedTempFile {
        // (label, fill byte) per record
        let mut bytes = Vec::new();
        for &(label, fill) in records {
            bytes.push(label);
            bytes.extend(std::iter::repeat(fill).take(PIXELS));
        }
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), bytes).unwrap();
        f
    }

    #[test]
    fn zero_record_decodes_to_zero_image() {
        let f = write_records(&[(3, 0)]);
        let ds = load_cifar10_binary(f.path()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.label(0), 3);
        assert!(ds.image(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn byte_255_scales_to_exactly_one() {
        let f = write_records(&[(0, 255)]);
        let ds = load_cifar10_binary(f.path()).unwrap();
        assert!(ds.image(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn short_file_reports_offset_zero() {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), vec![0u8; PIXELS]).unwrap(); // one record short a label
        match load_cifar10_binary(f.path()) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("expected parse error at offset 0, got {other:?}"),
        }
    }

    #[test]
    fn truncation_after_records_reports_that_offset() {
        let good = write_records(&[(1, 7), (2, 9)]);
        let mut bytes = fs::read(good.path()).unwrap();
        bytes.extend_from_slice(&[0; 10]);
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), bytes).unwrap();
        match load_cifar10_binary(f.path()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 2 * RECORD),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_label_reports_record_offset() {
        let f = write_records(&[(1, 0), (11, 0)]);
        match load_cifar10_binary(f.path()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, RECORD),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
