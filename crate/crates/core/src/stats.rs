use serde::{Deserialize, Serialize};

/// Mean with its analytic standard error (sample sd / sqrt(n)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl MeanSem {
    /// `None` for an empty slice. A single value has SEM 0.
    pub fn of(values: &[f64]) -> Option<MeanSem> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = mean(values);
        let sem = if n < 2 {
            0.0
        } else {
            sample_sd(values, mean) / (n as f64).sqrt()
        };
        Some(MeanSem { mean, sem, n })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.sem
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.sem
    }

    /// Whether the two `mean ± sem` intervals share any point.
    pub fn overlaps(&self, other: &MeanSem) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_sd(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
