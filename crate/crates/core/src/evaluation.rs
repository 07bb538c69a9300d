//! Coverage, set-size distributions, and report rendering.

use thiserror::Error;

use crate::conformal::{PredictionSet, Rule};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {sets} prediction sets vs {labels} labels")]
    LengthMismatch { sets: usize, labels: usize },
    #[error("empty run")]
    EmptyRun,
}

/// Per-example audit record.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExample {
    pub example_id: usize,
    pub labels: Vec<u8>,
    pub true_label: u8,
    pub hit: bool,
}

/// Aggregated outcome of one prediction pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub rule: Rule,
    pub threshold: f64,
    pub coverage_count: usize,
    pub total: usize,
    /// `size_histogram[k]` = number of sets with exactly `k` labels.
    pub size_histogram: [usize; 11],
    pub per_example: Option<Vec<PerExample>>,
}

/// Counts how often the true label falls inside its prediction set.
pub fn coverage(sets: &[PredictionSet], labels: &[u8]) -> Result<(usize, f64), EvalError> {
    if sets.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            sets: sets.len(),
            labels: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok((hits, hits as f64 / sets.len() as f64))
}

/// Distribution of set sizes 0..=10.
pub fn size_histogram(sets: &[PredictionSet]) -> [usize; 11] {
    let mut hist = [0usize; 11];
    for s in sets {
        hist[s.size().min(10)] += 1;
    }
    hist
}

/// Builds the full report for one rule's prediction pass.
pub fn report(
    rule: Rule,
    threshold: f64,
    sets: &[PredictionSet],
    labels: &[u8],
    keep_per_example: bool,
) -> Result<PredictionReport, EvalError> {
    let (coverage_count, _) = coverage(sets, labels)?;
    let per_example = keep_per_example.then(|| {
        sets.iter()
            .zip(labels)
            .map(|(s, &y)| PerExample {
                example_id: s.example_id,
                labels: s.labels.clone(),
                true_label: y,
                hit: s.contains(y),
            })
            .collect()
    });
    Ok(PredictionReport {
        rule,
        threshold,
        coverage_count,
        total: sets.len(),
        size_histogram: size_histogram(sets),
        per_example,
    })
}

impl PredictionReport {
    pub fn coverage_fraction(&self) -> f64 {
        self.coverage_count as f64 / self.total as f64
    }

    /// Most frequent set size (smallest mode if tied).
    pub fn mode_size(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.size_histogram.iter().enumerate() {
            if c > self.size_histogram[best] {
                best = k;
            }
        }
        best
    }

    /// Aligned text table in the label-set-size layout.
    pub fn table_text(&self) -> String {
        let mut widths = [0usize; 11];
        for (k, w) in widths.iter_mut().enumerate() {
            *w = k.to_string().len().max(self.size_histogram[k].to_string().len());
        }
        let head: Vec<String> = (0..=10).map(|k| format!("{:>w$}", k, w = widths[k])).collect();
        let row: Vec<String> = (0..=10)
            .map(|k| format!("{:>w$}", self.size_histogram[k], w = widths[k]))
            .collect();
        format!(
            "Label set size distribution ({}-test, level {:.3}, threshold {:.5})\n\
             Size of label set  | {}\n\
             Number of examples | {}\n\
             Coverage: {}/{} = {:.4}\n",
            self.rule.name(),
            self.rule.level(),
            self.threshold,
            head.join(" | "),
            row.join(" | "),
            self.coverage_count,
            self.total,
            self.coverage_fraction()
        )
    }

    /// Histogram as CSV (`size,count`).
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("size,count\n");
        for (k, &c) in self.size_histogram.iter().enumerate() {
            out.push_str(&format!("{k},{c}\n"));
        }
        out
    }

    /// Per-example records as CSV (`example_id,true_label,hit,set_size,labels`).
    /// Labels are `+`-joined. Empty if the report was built summary-only.
    pub fn per_example_csv(&self) -> String {
        let mut out = String::from("example_id,true_label,hit,set_size,labels\n");
        if let Some(rows) = &self.per_example {
            for r in rows {
                let labels = r
                    .labels
                    .iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join("+");
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.example_id,
                    r.true_label,
                    r.hit as u8,
                    r.labels.len(),
                    labels
                ));
            }
        }
        out
    }
}
