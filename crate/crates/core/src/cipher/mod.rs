//! Deterministic AES-128-CBC encryption of image datasets.
//!
//! Under the fixed mode one (key, IV) pair encrypts every image in every
//! partition, so identical plaintexts always map to identical ciphertexts
//! and cross-example structure survives encryption. The per-sample mode is
//! the ablation: each image gets a fresh key and IV drawn from a seeded
//! generator, which destroys any consistent mapping between examples.
//!
//! Images are 784 bytes = 49 AES blocks, so no padding is used and
//! ciphertexts keep the 784-byte feature dimension. Labels are never
//! encrypted.

mod aes128;

pub use aes128::{Aes128, BLOCK};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{ImageSet, Provenance, IMAGE_BYTES};

#[derive(Debug, Error)]
pub enum CipherError {
    #[error("plaintext length {0} is not a positive multiple of the 16-byte block (padding=none)")]
    LengthNotBlockMultiple(usize),
    #[error("dataset is already encrypted ({0})")]
    AlreadyEncrypted(&'static str),
    #[error("dataset provenance {found} does not match cipher mode {expected}")]
    ProvenanceMismatch {
        found: &'static str,
        expected: &'static str,
    },
}

/// Encryption mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CipherMode {
    /// One key/IV pair for every image across all partitions.
    Fixed,
    /// A fresh key and IV per image, derived from `seed` and the image index.
    PerSample { seed: u64 },
}

/// Padding policy. 784-byte images are an exact block multiple, so the only
/// supported policy is none; anything else would change the feature
/// dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    None,
}

/// Key, IV, and mode for dataset encryption.
#[derive(Debug, Clone)]
pub struct CipherConfig {
    pub key: [u8; 16],
    pub iv: [u8; 16],
    pub mode: CipherMode,
    pub padding: Padding,
}

impl CipherConfig {
    /// The reference fixed-key configuration (ASCII key/IV bytes).
    pub fn reference_fixed() -> Self {
        CipherConfig {
            key: *b"abs2kas126oZbdXs",
            iv: *b"1nsdjah72MdnJ12a",
            mode: CipherMode::Fixed,
            padding: Padding::None,
        }
    }

    /// Per-sample ablation configuration; key/IV fields are unused.
    pub fn per_sample(seed: u64) -> Self {
        CipherConfig {
            key: [0; 16],
            iv: [0; 16],
            mode: CipherMode::PerSample { seed },
            padding: Padding::None,
        }
    }
}

fn check_len(len: usize) -> Result<(), CipherError> {
    if len == 0 || len % BLOCK != 0 {
        return Err(CipherError::LengthNotBlockMultiple(len));
    }
    Ok(())
}

/// AES-128-CBC encryption with no padding.
pub fn aes128_cbc_encrypt(
    plaintext: &[u8],
    key: &[u8; 16],
    iv: &[u8; 16],
) -> Result<Vec<u8>, CipherError> {
    check_len(plaintext.len())?;
    let cipher = Aes128::new(key);
    let mut out = Vec::new();
    aes128::cbc_encrypt(&cipher, iv, plaintext, &mut out);
    Ok(out)
}

/// Exact inverse of [`aes128_cbc_encrypt`] under the same key/IV.
pub fn aes128_cbc_decrypt(
    ciphertext: &[u8],
    key: &[u8; 16],
    iv: &[u8; 16],
) -> Result<Vec<u8>, CipherError> {
    check_len(ciphertext.len())?;
    let cipher = Aes128::new(key);
    let mut out = Vec::new();
    aes128::cbc_decrypt(&cipher, iv, ciphertext, &mut out);
    Ok(out)
}

/// Key/IV pair for image `index` in per-sample mode.
///
/// Each index gets its own ChaCha20 stream, so the derivation is independent
/// of processing order and parallel runs agree with serial ones.
pub fn per_sample_key_iv(seed: u64, index: u64) -> ([u8; 16], [u8; 16]) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut key = [0u8; 16];
    let mut iv = [0u8; 16];
    rng.fill_bytes(&mut key);
    rng.fill_bytes(&mut iv);
    (key, iv)
}

/// Encrypts every image of a plaintext set; labels pass through unchanged.
pub fn encrypt_dataset(set: &ImageSet, cfg: &CipherConfig) -> Result<ImageSet, CipherError> {
    if set.provenance() != Provenance::Plaintext {
        return Err(CipherError::AlreadyEncrypted(set.provenance().as_str()));
    }
    let mut data = vec![0u8; set.raw_data().len()];
    match cfg.mode {
        CipherMode::Fixed => {
            let cipher = Aes128::new(&cfg.key);
            data.par_chunks_mut(IMAGE_BYTES)
                .enumerate()
                .for_each(|(i, out)| {
                    let mut buf = Vec::new();
                    aes128::cbc_encrypt(&cipher, &cfg.iv, set.image(i), &mut buf);
                    out.copy_from_slice(&buf);
                });
            Ok(set.with_data(data, Provenance::EncryptedFixed))
        }
        CipherMode::PerSample { seed } => {
            data.par_chunks_mut(IMAGE_BYTES)
                .enumerate()
                .for_each(|(i, out)| {
                    let (key, iv) = per_sample_key_iv(seed, i as u64);
                    let cipher = Aes128::new(&key);
                    let mut buf = Vec::new();
                    aes128::cbc_encrypt(&cipher, &iv, set.image(i), &mut buf);
                    out.copy_from_slice(&buf);
                });
            Ok(set.with_data(data, Provenance::EncryptedPerSample))
        }
    }
}

/// Validation-only inverse of [`encrypt_dataset`]; the learning pipeline
/// never decrypts.
pub fn decrypt_dataset(set: &ImageSet, cfg: &CipherConfig) -> Result<ImageSet, CipherError> {
    let expected = match cfg.mode {
        CipherMode::Fixed => Provenance::EncryptedFixed,
        CipherMode::PerSample { .. } => Provenance::EncryptedPerSample,
    };
    if set.provenance() != expected {
        return Err(CipherError::ProvenanceMismatch {
            found: set.provenance().as_str(),
            expected: expected.as_str(),
        });
    }
    let mut data = vec![0u8; set.raw_data().len()];
    match cfg.mode {
        CipherMode::Fixed => {
            let cipher = Aes128::new(&cfg.key);
            data.par_chunks_mut(IMAGE_BYTES)
                .enumerate()
                .for_each(|(i, out)| {
                    let mut buf = Vec::new();
                    aes128::cbc_decrypt(&cipher, &cfg.iv, set.image(i), &mut buf);
                    out.copy_from_slice(&buf);
                });
        }
        CipherMode::PerSample { seed } => {
            data.par_chunks_mut(IMAGE_BYTES)
                .enumerate()
                .for_each(|(i, out)| {
                    let (key, iv) = per_sample_key_iv(seed, i as u64);
                    let cipher = Aes128::new(&key);
                    let mut buf = Vec::new();
                    aes128::cbc_decrypt(&cipher, &iv, set.image(i), &mut buf);
                    out.copy_from_slice(&buf);
                });
        }
    }
    Ok(set.with_data(data, Provenance::Plaintext))
}
