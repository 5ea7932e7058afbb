use rand::Rng;

use crate::error::{Error, Result};

/// Poisson(λ) restricted to `[k_min, k_max]`, sampled by inverse CDF over
/// the renormalized pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPoisson {
    k_min: u32,
    cdf: Vec<f64>,
    pmf: Vec<f64>,
}

impl TruncatedPoisson {
    pub fn new(lambda: f64, k_min: u32, k_max: u32) -> Result<Self> {
        if k_min > k_max {
            return Err(Error::InvalidRange { k_min, k_max });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
        }
        // log-space keeps large k from overflowing k!
        let log_terms: Vec<f64> = (k_min..=k_max)
            .map(|k| f64::from(k) * lambda.ln() - lambda - ln_factorial(k))
            .collect();
        let peak = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_terms.iter().map(|t| (t - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(Self { k_min, cdf, pmf })
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn k_max(&self) -> u32 {
        self.k_min + self.pmf.len() as u32 - 1
    }

    /// Normalized probabilities for `k_min..=k_max`.
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.k_min + idx.min(self.cdf.len() - 1) as u32
    }
}

fn ln_factorial(k: u32) -> f64 {
    (2..=k).map(|i| f64::from(i).ln()).sum()
}

pub fn sample_truncated_poisson<R: Rng + ?Sized>(
    lambda: f64,
    k_min: u32,
    k_max: u32,
    rng: &mut R,
) -> Result<u32> {
    Ok(TruncatedPoisson::new(lambda, k_min, k_max)?.sample(rng))
}
