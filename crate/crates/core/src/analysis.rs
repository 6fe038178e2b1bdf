//! Recovery and noise metrics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::measurement::MeasurementMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub rel_err_x: f64,
    pub rel_mse_x: f64,
    pub rel_mse_db: f64,
    pub phase_err_x: f64,
    /// `+∞` for noiseless data.
    pub snr_db: f64,
}

fn lifted_residual(x_hat: &HermitianMatrix, x: &[Complex64]) -> f64 {
    (x_hat - &HermitianMatrix::outer(x)).frobenius_norm()
}

/// `‖X̂ − xx*‖_F / ‖xx*‖_F`.
pub fn rel_error_lifted(x_hat: &HermitianMatrix, x: &[Complex64]) -> Result<f64> {
    let nx2: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    if nx2 == 0.0 {
        return Err(Error::invalid("reference signal is zero"));
    }
    Ok(lifted_residual(x_hat, x) / nx2)
}

/// `‖X̂ − xx*‖²_F / ‖X̂‖²_F`.
pub fn rel_mse_lifted(x_hat: &HermitianMatrix, x: &[Complex64]) -> Result<f64> {
    let den = x_hat.frobenius_norm();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("relative MSE of a zero estimate".into()));
    }
    Ok((lifted_residual(x_hat, x) / den).powi(2))
}

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// `min_φ ‖x̂ − e^{iφ} x‖₂`, attained at `φ = arg⟨x, x̂⟩`.
pub fn phase_aligned_distance(x_hat: &[Complex64], x: &[Complex64]) -> f64 {
    let inner: Complex64 = x.iter().zip(x_hat).map(|(a, b)| a.conj() * b).sum();
    let n_hat: f64 = x_hat.iter().map(|z| z.norm_sqr()).sum();
    let n_x: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    // ‖x̂ − e^{iφ}x‖² = ‖x̂‖² + ‖x‖² − 2|⟨x, x̂⟩| at the optimal φ
    let phase = if inner.norm() > 0.0 { inner / inner.norm() } else { Complex64::new(1.0, 0.0) };
    let direct: f64 = x_hat
        .iter()
        .zip(x)
        .map(|(h, v)| (h - phase * v).norm_sqr())
        .sum::<f64>();
    direct.min((n_hat + n_x - 2.0 * inner.norm()).max(0.0)).sqrt()
}

/// `20 log10(‖clean‖ / ‖noisy − clean‖)`, `+∞` when the two coincide.
pub fn snr_db_values(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal = clean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let noise = clean.iter().zip(noisy).map(|(c, b)| (b - c).powi(2)).sum::<f64>().sqrt();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    20.0 * (signal / noise).log10()
}

/// SNR of data `b` against the noiseless `A(xx*)`.
pub fn snr_db(b_noisy: &[f64], x: &[Complex64], op: &dyn MeasurementMap) -> Result<f64> {
    if b_noisy.len() != op.num_measurements() {
        return Err(Error::DimensionMismatch {
            expected: op.num_measurements(),
            got: b_noisy.len(),
        });
    }
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: x.len(),
        });
    }
    Ok(snr_db_values(&op.apply_rank_one(x), b_noisy))
}

/// Collect the metrics of one trial. `rel_mse` is NaN when the estimate is zero.
pub fn trial_metrics(
    x_hat: &HermitianMatrix,
    x_hat_vec: &[Complex64],
    x: &[Complex64],
    snr_db: f64,
) -> Result<TrialMetrics> {
    let rel_err_x = rel_error_lifted(x_hat, x)?;
    let rel_mse_x = rel_mse_lifted(x_hat, x).unwrap_or(f64::NAN);
    Ok(TrialMetrics {
        rel_err_x,
        rel_mse_x,
        rel_mse_db: to_db(rel_mse_x),
        phase_err_x: phase_aligned_distance(x_hat_vec, x),
        snr_db,
    })
}
