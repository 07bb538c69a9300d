//! On-disk container for encrypted (or plaintext) datasets.
//!
//! Byte layout, all header integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ENCPIMG1"
//! 8       4     u32 count
//! 12      4     u32 record_len (always 784)
//! 16      1     u8  provenance (0 plaintext, 1 encrypted_fixed, 2 encrypted_per_sample)
//! 17      3     zero padding
//! 20      …     count × record_len image bytes
//! …       …     count label bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, ImageSet, Provenance, IMAGE_BYTES};

const MAGIC: &[u8; 8] = b"ENCPIMG1";
const HEADER_LEN: usize = 20;

/// Writes the set to `path` in the container layout above.
pub fn write_container(set: &ImageSet, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(set.count() as u32).to_le_bytes())?;
    w.write_all(&(IMAGE_BYTES as u32).to_le_bytes())?;
    w.write_all(&[set.provenance().to_byte(), 0, 0, 0])?;
    w.write_all(set.raw_data())?;
    w.write_all(set.labels())?;
    w.flush()?;
    Ok(())
}

/// Reads a container written by [`write_container`].
pub fn read_container(path: &Path) -> Result<ImageSet, DataError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..8] != MAGIC {
        return Err(DataError::BadContainer(format!(
            "bad magic {:02x?}",
            &header[..8]
        )));
    }
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let record_len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if record_len != IMAGE_BYTES {
        return Err(DataError::BadContainer(format!(
            "record_len {record_len}, expected {IMAGE_BYTES}"
        )));
    }
    let provenance = Provenance::from_byte(header[16])
        .ok_or_else(|| DataError::BadContainer(format!("provenance byte {}", header[16])))?;

    let mut data = vec![0u8; count * record_len];
    r.read_exact(&mut data).map_err(|_| DataError::Truncated {
        expected: count * record_len,
        found: 0,
    })?;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels).map_err(|_| DataError::Truncated {
        expected: count,
        found: 0,
    })?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(DataError::BadContainer(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    ImageSet::new(data, labels, provenance)
}
