//! Figure regeneration: t-SNE embeddings, digit rasters, calibration plots.
//!
//! Outputs are CSV and binary PGM (P5); no plotting library is involved.

mod tsne;

pub use tsne::{cluster_distance_ratio, tsne, Embedding2D, TsneConfig};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::conformal::CalibrationScores;
use crate::data::IMAGE_BYTES;

#[derive(Debug, Error)]
pub enum VizError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad parameter: {0}")]
    Parameter(String),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Writes a 784-byte image as a 28×28 binary PGM (P5, maxval 255).
///
/// Byte-identical output for identical input.
pub fn render_digit(image: &[u8], path: &Path) -> Result<(), VizError> {
    if image.len() != IMAGE_BYTES {
        return Err(VizError::BadInput(format!(
            "image has {} bytes, expected {IMAGE_BYTES}",
            image.len()
        )));
    }
    let mut bytes = b"P5\n28 28\n255\n".to_vec();
    bytes.extend_from_slice(image);
    fs::write(path, bytes)?;
    Ok(())
}

/// Histogram CSV over fixed-width bins spanning `[0, max score]`.
pub fn histogram_csv(cal: &CalibrationScores, bins: usize) -> Result<String, VizError> {
    if bins == 0 {
        return Err(VizError::Parameter("bins must be positive".into()));
    }
    let scores = cal.scores();
    let max = *scores.last().unwrap();
    let mut counts = vec![0usize; bins];
    if max <= 0.0 {
        // all scores are zero: everything lands in the first bin
        counts[0] = scores.len();
    } else {
        for &s in scores {
            let k = ((s / max) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
    }
    let width = if max > 0.0 { max / bins as f64 } else { 0.0 };
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (k, &c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", k as f64 * width, (k + 1) as f64 * width, c);
    }
    Ok(out)
}

/// Sorted-curve CSV: `(rank, score)` pairs, rank 1-based ascending.
pub fn sorted_curve_csv(cal: &CalibrationScores) -> String {
    let mut out = String::from("rank,score\n");
    for (i, &s) in cal.scores().iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, s);
    }
    out
}

/// Writes both calibration-score plots (`histogram.csv`, `sorted.csv`).
pub fn loss_plots(cal: &CalibrationScores, out_dir: &Path, bins: usize) -> Result<(), VizError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("histogram.csv"), histogram_csv(cal, bins)?)?;
    fs::write(out_dir.join("sorted.csv"), sorted_curve_csv(cal))?;
    Ok(())
}

/// Embedding as CSV (`x,y,label`).
pub fn embedding_csv(e: &Embedding2D) -> String {
    let mut out = String::from("x,y,label\n");
    for (i, p) in e.points.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", p[0], p[1], e.labels[i]);
    }
    out
}
