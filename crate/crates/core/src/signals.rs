//! Test signals: random low-pass and random Gaussian models.
//!
//! Low-pass signals are drawn in the spectral domain,
//! `x[t] = Σ_j (X_j + i Y_j) exp(2πi j t / n)` over the `M = n/8` lowest
//! frequencies `j ∈ {-⌊M/2⌋, …, M - ⌊M/2⌋ - 1}`, so each entry has
//! expected power `E|x[t]|² = 2M`. Gaussian signals are drawn directly in
//! the time domain with `E|x[t]|² = 2`. Both use unit-variance real and
//! imaginary parts.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalModel {
    LowPass,
    Gaussian,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    pub entries: Vec<Complex64>,
    pub model: SignalModel,
    pub seed: u64,
}

impl SignalVector {
    /// Wrap user-provided entries. Requires `n ≥ 2` finite entries.
    pub fn custom(entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::invalid("signal length must be at least 2"));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("signal entries must be finite"));
        }
        Ok(Self {
            entries,
            model: SignalModel::Custom,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.entries)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.entries
    }

    /// Multiply every entry by a real factor.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            entries: self.entries.iter().map(|z| z * c).collect(),
            model: self.model,
            seed: self.seed,
        }
    }
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn complex_normal(rng: &mut Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im)
}

/// Frequencies (as signed integers) occupied by a low-pass signal of length `n`.
pub fn lowpass_band(n: usize) -> Vec<i64> {
    let m = (n / 8) as i64;
    let lo = -(m / 2);
    (lo..lo + m).collect()
}

pub fn generate_lowpass(n: usize, seed: u64) -> Result<SignalVector> {
    if n == 0 || n % 8 != 0 {
        return Err(Error::invalid(format!(
            "low-pass signals need n divisible by 8, got {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let band = lowpass_band(n);
    let coeffs: Vec<Complex64> = band.iter().map(|_| complex_normal(&mut rng)).collect();
    let entries = (0..n)
        .map(|t| {
            band.iter()
                .zip(&coeffs)
                .map(|(&j, &c)| {
                    let phase = 2.0 * std::f64::consts::PI * ((j * t as i64).rem_euclid(n as i64)) as f64
                        / n as f64;
                    c * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect();
    Ok(SignalVector {
        entries,
        model: SignalModel::LowPass,
        seed,
    })
}

pub fn generate_gaussian(n: usize, seed: u64) -> Result<SignalVector> {
    if n < 2 {
        return Err(Error::invalid("signal length must be at least 2"));
    }
    let mut rng = rng_from_seed(seed);
    let entries = (0..n).map(|_| complex_normal(&mut rng)).collect();
    Ok(SignalVector {
        entries,
        model: SignalModel::Gaussian,
        seed,
    })
}

pub fn generate(model: SignalModel, n: usize, seed: u64) -> Result<SignalVector> {
    match model {
        SignalModel::LowPass => generate_lowpass(n, seed),
        SignalModel::Gaussian => generate_gaussian(n, seed),
        SignalModel::Custom => Err(Error::invalid("custom signals cannot be generated")),
    }
}

/// Scale to unit Euclidean norm.
pub fn normalize(x: &SignalVector) -> Result<SignalVector> {
    let nrm = x.norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::invalid("cannot normalize a zero signal"));
    }
    Ok(x.scaled(1.0 / nrm))
}
