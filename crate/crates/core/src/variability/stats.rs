use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient of variation with the moments it was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Percentage; `None` when the mean is zero but the values are not.
    pub value: Option<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CvResult {
    pub fn is_undefined(&self) -> bool {
        self.value.is_none()
    }
}

/// Population standard deviation over |mean|, in percent.
pub fn coefficient_of_variation(values: &[f64]) -> Result<CvResult> {
    if values.len() < 2 {
        return Err(Error::TooFewValues {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // A constant series has exactly zero spread even when the mean rounds.
    let std = if values.iter().all(|&v| v == values[0]) {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let value = if std == 0.0 {
        Some(0.0)
    } else if mean == 0.0 {
        None
    } else {
        Some(100.0 * std / mean.abs())
    };
    Ok(CvResult { value, mean, std })
}

/// What an absent output contributes to the squared error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MissingOutputPenalty {
    /// Treat the missing output as zero: `expected²`.
    #[default]
    AsZero,
    Fixed(f64),
}

impl MissingOutputPenalty {
    pub fn squared_error(self, output: Option<f64>, expected: f64) -> f64 {
        match (output, self) {
            (Some(o), _) => (o - expected).powi(2),
            (None, MissingOutputPenalty::AsZero) => expected * expected,
            (None, MissingOutputPenalty::Fixed(p)) => p,
        }
    }
}

pub fn mse(outputs: &[Option<f64>], expected: f64, penalty: MissingOutputPenalty) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    let total: f64 = outputs
        .iter()
        .map(|&o| penalty.squared_error(o, expected))
        .sum();
    Ok(total / outputs.len() as f64)
}
