//! CIFAR-10 binary batches.
//!
//! Each record is 3073 bytes: one label byte, then 1024 red, 1024 green and
//! 1024 blue pixel bytes, each plane 32×32 row-major. Pixels are scaled to
//! [0, 1] and standardized per channel with [`CIFAR10_MEAN`] / [`CIFAR10_STD`].

use std::fs;
use std::path::{Path, PathBuf};

use fedhbn_core::data::Dataset;
use fedhbn_core::Tensor;

use crate::error::{Error, IoContext, Result};

pub const RECORD_BYTES: usize = 3073;
pub const SIDE: usize = 32;
pub const CLASSES: usize = 10;
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const DATA_DIR_ENV: &str = "FHBN_DATA_DIR";

/// Decodes an in-memory sequence of records.
pub fn decode_records(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let plane = SIDE * SIDE;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3 * plane);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::Format(format!("record {i}: label {label} > 9")));
        }
        labels.push(label);
        for c in 0..3 {
            let pixels = &rec[1 + c * plane..1 + (c + 1) * plane];
            data.extend(
                pixels
                    .iter()
                    .map(|&p| (p as f32 / 255.0 - CIFAR10_MEAN[c]) / CIFAR10_STD[c]),
            );
        }
    }
    Ok(Dataset::new(
        Tensor::new(&[n, 3, SIDE, SIDE], data)?,
        labels,
        CLASSES,
    )?)
}

pub fn load_cifar10_binary(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).at(path)?;
    decode_records(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `dir`, or `$FHBN_DATA_DIR`. A nested `cifar-10-batches-bin` directory is
/// used when present.
pub fn resolve_data_dir(dir: Option<&Path>) -> Result<PathBuf> {
    let base = match dir {
        Some(d) => d.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| {
                Error::Format(format!(
                    "no CIFAR-10 directory given and {DATA_DIR_ENV} is unset"
                ))
            })?,
    };
    let nested = base.join("cifar-10-batches-bin");
    Ok(if nested.is_dir() { nested } else { base })
}

/// The 50000-image training set and the 10000-image test set.
pub fn load_cifar10_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let parts = TRAIN_FILES
        .iter()
        .map(|f| load_cifar10_binary(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = parts.iter().collect();
    let train = Dataset::concat(&refs)?;
    let test = load_cifar10_binary(&dir.join(TEST_FILE))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_records_decode_to_two_images() {
        let bytes = vec![3u8; 2 * RECORD_BYTES];
        let d = decode_records(&bytes).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.images.shape(), &[2, 3, 32, 32]);
        assert_eq!(d.labels, vec![3, 3]);
    }

    #[test]
    fn zero_pixels_standardize_to_minus_mean_over_std() {
        let d = decode_records(&vec![0u8; RECORD_BYTES]).unwrap();
        for c in 0..3 {
            let v = d.images.data()[c * 1024];
            assert_eq!(v, -CIFAR10_MEAN[c] / CIFAR10_STD[c]);
        }
    }

    #[test]
    fn marked_pixel_lands_at_its_position() {
        let (c, y, x) = (2, 5, 17);
        let mut rec = vec![0u8; RECORD_BYTES];
        rec[0] = 7;
        rec[1 + c * 1024 + y * 32 + x] = 255;
        let d = decode_records(&rec).unwrap();
        assert_eq!(d.labels, vec![7]);
        let at = |c: usize, y: usize, x: usize| d.images.data()[(c * 32 + y) * 32 + x];
        assert_eq!(at(c, y, x), (1.0 - CIFAR10_MEAN[c]) / CIFAR10_STD[c]);
        assert_eq!(at(c, y, x + 1), -CIFAR10_MEAN[c] / CIFAR10_STD[c]);
        assert_eq!(at(0, y, x), -CIFAR10_MEAN[0] / CIFAR10_STD[0]);
    }

    #[test]
    fn truncated_and_bad_labels_are_format_errors() {
        assert!(matches!(
            decode_records(&[0u8; 3072]),
            Err(Error::Format(_))
        ));
        let mut rec = vec![0u8; RECORD_BYTES];
        rec[0] = 10;
        assert!(matches!(decode_records(&rec), Err(Error::Format(_))));
    }
}
