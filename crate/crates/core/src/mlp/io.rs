//! Model persistence.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic "ENCPMLP1"
//! u32  version (1)
//! u64  train_seed
//! u16  arch_id length, then arch_id UTF-8 bytes
//! u32  layer count
//! per layer: u32 in_dim, u32 out_dim, u8 activation (0 relu, 1 softmax)
//! per layer: in_dim*out_dim f32 weights (input-major), out_dim f32 biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, Layer, MlpError, MlpModel};

const MAGIC: &[u8; 8] = b"ENCPMLP1";

pub fn write_model(model: &MlpModel, path: &Path) -> Result<(), MlpError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&model.train_seed.to_le_bytes())?;
    let id = model.arch_id.as_bytes();
    w.write_all(&(id.len() as u16).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for l in &model.layers {
        w.write_all(&(l.in_dim as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim as u32).to_le_bytes())?;
        w.write_all(&[match l.activation {
            Activation::Relu => 0u8,
            Activation::Softmax => 1,
        }])?;
    }
    for l in &model.layers {
        for &v in &l.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &l.bias {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, MlpError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_model(path: &Path) -> Result<MlpModel, MlpError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(MlpError::BadModelFile(format!("bad magic {magic:02x?}")));
    }
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(MlpError::BadModelFile(format!("unsupported version {version}")));
    }
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)?;
    let train_seed = u64::from_le_bytes(seed);
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut id)?;
    let arch_id = String::from_utf8(id)
        .map_err(|e| MlpError::BadModelFile(format!("arch_id not UTF-8: {e}")))?;
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(MlpError::BadModelFile(format!("implausible layer count {n_layers}")));
    }
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = match act[0] {
            0 => Activation::Relu,
            1 => Activation::Softmax,
            other => return Err(MlpError::BadModelFile(format!("unknown activation {other}"))),
        };
        shapes.push((in_dim, out_dim, activation));
    }
    for w in shapes.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(MlpError::BadModelFile(format!(
                "layer dims do not chain: {} -> {}",
                w[0].1, w[1].0
            )));
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (in_dim, out_dim, activation) in shapes {
        let mut weights = vec![0.0f32; in_dim * out_dim];
        let mut bias = vec![0.0f32; out_dim];
        let mut b = [0u8; 4];
        for v in weights.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        for v in bias.iter_mut() {
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        layers.push(Layer { in_dim, out_dim, weights, bias, activation });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(MlpError::BadModelFile(format!("{} trailing bytes", rest.len())));
    }
    Ok(MlpModel { layers, arch_id, train_seed })
}
