//! Single-pass running mean/variance.

use crate::error::{Error, Result};

/// Numerically stable streaming mean and variance accumulator.
#[derive(Debug, Clone, Default)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Welford::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn push_slice(&mut self, values: &[f64]) {
        for &v in values {
            self.push(v);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Running mean and sample standard deviation; needs at least two
    /// samples.
    pub fn finalize(&self) -> Result<(f64, f64)> {
        if self.count < 2 {
            return Err(Error::TooFewSamples(self.count as usize));
        }
        let var = self.m2 / (self.count - 1) as f64;
        Ok((self.mean, var.sqrt()))
    }
}
