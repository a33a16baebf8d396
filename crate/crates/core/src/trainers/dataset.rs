//! Small in-memory classification datasets.

use super::TrainerError;

const BUNDLED_BLOBS: &str = include_str!("../../data/blobs.csv");

/// Row-major features with integer labels `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    /// Parses `x0,..,xk,label` CSV with a header row.
    pub fn parse(text: &str) -> Result<Self, TrainerError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TrainerError::Dataset {
            line: 1,
            message: "empty file".into(),
        })?;
        let features = header.split(',').count().saturating_sub(1);
        if features == 0 {
            return Err(TrainerError::Dataset {
                line: 1,
                message: "need at least one feature column and a label".into(),
            });
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| TrainerError::Dataset {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != features + 1 {
                return Err(err(format!(
                    "expected {} fields, got {}",
                    features + 1,
                    fields.len()
                )));
            }
            for f in &fields[..features] {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad feature `{f}`")))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite feature `{f}`")));
                }
                x.push(v);
            }
            let label = fields[features].trim();
            y.push(
                label
                    .parse()
                    .map_err(|_| err(format!("bad label `{label}`")))?,
            );
        }
        if y.is_empty() {
            return Err(TrainerError::Dataset {
                line: 2,
                message: "no rows".into(),
            });
        }
        let classes = y.iter().max().unwrap() + 1;
        Ok(Self {
            features,
            classes,
            x,
            y,
        })
    }

    /// Four 4-D Gaussian clusters, 3000 rows, classes interleaved.
    pub fn bundled_blobs() -> Self {
        Self::parse(BUNDLED_BLOBS).expect("bundled dataset is well-formed")
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    /// Keeps only the listed classes, relabelled to `0..keep.len()`.
    pub fn with_classes(&self, keep: &[usize]) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..self.len() {
            if let Some(new) = keep.iter().position(|&c| c == self.y[i]) {
                x.extend_from_slice(self.row(i));
                y.push(new);
            }
        }
        Self {
            features: self.features,
            classes: keep.len(),
            x,
            y,
        }
    }

    /// Splits in file order: the first `fraction` of rows train, the rest
    /// evaluate. The bundled file is interleaved so both halves stay balanced.
    pub fn split(&self, fraction: f64) -> (Self, Self) {
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let part = |range: std::ops::Range<usize>| Self {
            features: self.features,
            classes: self.classes,
            x: self.x[range.start * self.features..range.end * self.features].to_vec(),
            y: self.y[range].to_vec(),
        };
        (part(0..cut), part(cut..self.len()))
    }
}
