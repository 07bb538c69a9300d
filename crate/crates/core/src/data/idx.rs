//! IDX binary format (the MNIST container): big-endian headers, raw bytes.
//!
//! Image files carry magic `0x00000803` and dimensions `count × 28 × 28`;
//! label files carry magic `0x00000801` and a count. Files ending in `.gz`
//! are decompressed transparently.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::bufread::GzDecoder;

use super::{DataError, ImageSet, Provenance, IMAGE_BYTES};

pub(crate) const IMAGE_MAGIC: u32 = 0x0000_0803;
pub(crate) const LABEL_MAGIC: u32 = 0x0000_0801;

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32_be(r: &mut dyn Read) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn read_all_expect(r: &mut dyn Read, expected: usize) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::with_capacity(expected);
    r.read_to_end(&mut buf)?;
    if buf.len() != expected {
        return Err(DataError::Truncated {
            expected,
            found: buf.len(),
        });
    }
    Ok(buf)
}

/// Loads a matching IDX image/label file pair into an [`ImageSet`].
///
/// Pixel bytes are preserved exactly as stored; the returned set has
/// provenance [`Provenance::Plaintext`].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet, DataError> {
    let mut ir = open_maybe_gz(images_path)?;
    let magic = read_u32_be(&mut ir)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let count = read_u32_be(&mut ir)? as usize;
    let rows = read_u32_be(&mut ir)?;
    let cols = read_u32_be(&mut ir)?;
    if rows != 28 || cols != 28 {
        return Err(DataError::BadDimensions { rows, cols });
    }
    let data = read_all_expect(&mut ir, count * IMAGE_BYTES)?;

    let mut lr = open_maybe_gz(labels_path)?;
    let magic = read_u32_be(&mut lr)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let label_count = read_u32_be(&mut lr)? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels = read_all_expect(&mut lr, count)?;

    ImageSet::new(data, labels, Provenance::Plaintext)
}

/// Serializes the set's images back into IDX image-file bytes.
pub fn idx_image_bytes(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.raw_data().len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.count() as u32).to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(set.raw_data());
    out
}

/// Serializes the set's labels back into IDX label-file bytes.
pub fn idx_label_bytes(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + set.count());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(set.count() as u32).to_be_bytes());
    out.extend_from_slice(set.labels());
    out
}
