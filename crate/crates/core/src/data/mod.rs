//! Dataset ingestion, normalization, and the calibration/test split.
//!
//! Images are 28×28 grayscale, stored row-major as 784 bytes each. The set
//! keeps one flat buffer, so the per-image length invariant holds by
//! construction.

mod container;
mod idx;

pub use container::{read_container, write_container};
pub use idx::{idx_image_bytes, idx_label_bytes, load_idx};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Bytes per image (28 × 28).
pub const IMAGE_BYTES: usize = 784;
/// Number of classes.
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("unsupported image dimensions {rows}x{cols}, expected 28x28")]
    BadDimensions { rows: u32, cols: u32 },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated file: expected {expected} data bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("label {label} out of range 0..=9 at index {index}")]
    LabelOutOfRange { label: u8, index: usize },
    #[error("split requires an even count, got {0}")]
    OddCount(usize),
    #[error("empty dataset")]
    Empty,
    #[error("bad container header: {0}")]
    BadContainer(String),
}

/// Where a set's image bytes came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Plaintext,
    EncryptedFixed,
    EncryptedPerSample,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Plaintext => "plaintext",
            Provenance::EncryptedFixed => "encrypted_fixed",
            Provenance::EncryptedPerSample => "encrypted_per_sample",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Provenance::Plaintext => 0,
            Provenance::EncryptedFixed => 1,
            Provenance::EncryptedPerSample => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Provenance::Plaintext),
            1 => Some(Provenance::EncryptedFixed),
            2 => Some(Provenance::EncryptedPerSample),
            _ => None,
        }
    }
}

/// A labelled image set, raw or encrypted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSet {
    data: Vec<u8>,
    labels: Vec<u8>,
    provenance: Provenance,
}

impl ImageSet {
    /// Builds a set from a flat image buffer (`count * 784` bytes) and labels.
    pub fn new(data: Vec<u8>, labels: Vec<u8>, provenance: Provenance) -> Result<Self, DataError> {
        if data.len() % IMAGE_BYTES != 0 {
            return Err(DataError::Truncated {
                expected: (data.len() / IMAGE_BYTES + 1) * IMAGE_BYTES,
                found: data.len(),
            });
        }
        let images = data.len() / IMAGE_BYTES;
        if images != labels.len() {
            return Err(DataError::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(DataError::LabelOutOfRange { label, index });
        }
        Ok(ImageSet {
            data,
            labels,
            provenance,
        })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.data[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Flat image buffer, `count * 784` bytes.
    pub fn raw_data(&self) -> &[u8] {
        &self.data
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub(crate) fn with_data(&self, data: Vec<u8>, provenance: Provenance) -> ImageSet {
        debug_assert_eq!(data.len(), self.data.len());
        ImageSet {
            data,
            labels: self.labels.clone(),
            provenance,
        }
    }

    /// Copies the images at `indices` into a new set (labels follow).
    pub fn subset(&self, indices: &[u32]) -> ImageSet {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i as usize));
            labels.push(self.labels[i as usize]);
        }
        ImageSet {
            data,
            labels,
            provenance: self.provenance,
        }
    }

    /// Normalized pixels for the whole set, `count * 784` floats in [0, 1].
    pub fn normalized(&self) -> Vec<f32> {
        self.data.iter().map(|&b| f32::from(b) / 255.0).collect()
    }
}

/// Scales one image's bytes to floats in [0, 1] (`byte / 255`).
///
/// Applies identically to plaintext and ciphertext bytes.
pub fn normalize(image: &[u8]) -> Vec<f32> {
    debug_assert_eq!(image.len(), IMAGE_BYTES);
    image.iter().map(|&b| f32::from(b) / 255.0).collect()
}

/// The two disjoint halves of the held-out test set.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub calibration: ImageSet,
    pub cp_test: ImageSet,
    pub split_seed: u64,
    /// Original test-set indices of the calibration half.
    pub calibration_indices: Vec<u32>,
    /// Original test-set indices of the conformal-prediction test half.
    pub cp_test_indices: Vec<u32>,
}

/// Randomly partitions `test` into two equal disjoint halves.
///
/// A seeded Fisher–Yates shuffle permutes the index array; the first half
/// becomes the calibration set, the second half the conformal-prediction
/// test set. Deterministic given `split_seed`.
pub fn split_test(test: &ImageSet, split_seed: u64) -> Result<SplitPair, DataError> {
    let n = test.count();
    if n == 0 {
        return Err(DataError::Empty);
    }
    if n % 2 != 0 {
        return Err(DataError::OddCount(n));
    }
    let mut indices: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    // Fisher–Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let (cal, cp) = indices.split_at(n / 2);
    Ok(SplitPair {
        calibration: test.subset(cal),
        cp_test: test.subset(cp),
        split_seed,
        calibration_indices: cal.to_vec(),
        cp_test_indices: cp.to_vec(),
    })
}
