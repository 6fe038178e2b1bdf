//! Trace-regularised PhaseLift solvers.
//!
//! Both problems have the form
//!
//! ```text
//! minimize  ℓ(A(X)) + λ tr(X)   subject to  X ⪰ 0
//! ```
//!
//! with `ℓ(μ) = ½‖b − μ‖²` or the Poisson negative log-likelihood
//! `Σ_k [μ_k − b_k log μ_k]`. They are solved by an accelerated proximal
//! gradient method whose prox is eigenvalue soft-thresholding followed by
//! clamping at zero. Momentum is reset whenever the objective would
//! increase, so the accepted iterates are monotone.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::measurement::MeasurementMap;
use crate::signals::{SignalModel, SignalVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SquaredL2,
    PoissonLikelihood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1 / ‖A*A‖` from a power-method estimate.
    FixedFromOperatorNorm,
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// `A*(b) / m` with `m` the number of measurements.
    ScaledAdjoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub loss: Loss,
    pub max_iters: usize,
    pub rel_obj_tol: f64,
    pub step_rule: StepRule,
    pub x0: Init,
    /// `μ_floor = mu_floor_rel · max(max_k b_k, 1)` inside the Poisson log.
    pub mu_floor_rel: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            loss: Loss::SquaredL2,
            max_iters: 50_000,
            rel_obj_tol: 1e-10,
            step_rule: StepRule::FixedFromOperatorNorm,
            x0: Init::Zero,
            mu_floor_rel: 1e-12,
        }
    }
}

impl SolverConfig {
    /// Least squares with `λ = 10⁻³`.
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Poisson likelihood with `λ = 1/SNR` (SNR as an amplitude ratio).
    pub fn poisson(snr_db: f64) -> Self {
        Self {
            lambda: 10f64.powf(-snr_db / 20.0),
            loss: Loss::PoissonLikelihood,
            step_rule: StepRule::Backtracking,
            x0: Init::ScaledAdjoint,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_obj_tol > 0.0) {
            return Err(Error::invalid("rel_obj_tol must be positive"));
        }
        if !(self.mu_floor_rel > 0.0) {
            return Err(Error::invalid("mu_floor_rel must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverReport {
    pub x_hat: HermitianMatrix,
    pub iterations: usize,
    /// Objective of the accepted iterate after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub final_rel_change: f64,
    pub restarts: usize,
    pub lipschitz: f64,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Copy with the objective trace thinned to at most `max_points` entries
    /// (always keeping the last one).
    pub fn downsampled(&self, max_points: usize) -> Self {
        let mut out = self.clone();
        let len = self.objective_trace.len();
        if max_points >= 2 && len > max_points {
            let stride = len.div_ceil(max_points - 1);
            let mut trace: Vec<f64> = self.objective_trace.iter().step_by(stride).copied().collect();
            if (len - 1) % stride != 0 {
                trace.push(self.objective_trace[len - 1]);
            }
            out.objective_trace = trace;
        }
        out
    }
}

/// Prox of `t·tr(X)` plus the PSD indicator: `U max(Λ − t, 0) U*`.
pub fn prox_psd_trace(x: &HermitianMatrix, t: f64) -> Result<HermitianMatrix> {
    if !(t >= 0.0) {
        return Err(Error::invalid("prox threshold must be nonnegative"));
    }
    let eig = x.eigh_above(t)?;
    if eig.values.is_empty() {
        return Ok(HermitianMatrix::zeros(x.dim()));
    }
    let shrunk: Vec<f64> = eig.values.iter().map(|v| v - t).collect();
    Ok(HermitianMatrix::from_eigen_parts(&shrunk, &eig.vectors))
}

/// Power-method estimate of `‖A*A‖`, inflated by 1% to stay an upper bound
/// in practice.
pub fn estimate_normal_operator_norm(op: &dyn MeasurementMap) -> f64 {
    let n = op.dim();
    let probe: Vec<Complex64> = (0..n)
        .map(|t| Complex64::from_polar(1.0, 0.7 * (t * t) as f64 + 0.3 * t as f64))
        .collect();
    let mut x = HermitianMatrix::identity(n).add_scaled(0.1, &HermitianMatrix::outer(&probe));
    x = x.scale(1.0 / x.frobenius_norm());
    let mut est = 0.0;
    for _ in 0..200 {
        let y = op.normal(&x);
        let nrm = y.frobenius_norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let converged = (nrm - est).abs() <= 1e-9 * nrm;
        est = nrm;
        x = y.scale(1.0 / nrm);
        if converged {
            break;
        }
    }
    est * 1.01
}

struct Problem<'a> {
    op: &'a dyn MeasurementMap,
    b: &'a [f64],
    loss: Loss,
    lambda: f64,
    mu_floor: f64,
}

impl Problem<'_> {
    fn new<'a>(op: &'a dyn MeasurementMap, b: &'a [f64], cfg: &SolverConfig) -> Result<Problem<'a>> {
        cfg.validate()?;
        if b.len() != op.num_measurements() {
            return Err(Error::DimensionMismatch {
                expected: op.num_measurements(),
                got: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data must be finite"));
        }
        let bmax = b.iter().copied().fold(0.0, f64::max);
        Ok(Problem {
            op,
            b,
            loss: cfg.loss,
            lambda: cfg.lambda,
            mu_floor: cfg.mu_floor_rel * bmax.max(1.0),
        })
    }

    /// Smooth part as a function of `μ = A(X)`. The Poisson loss carries the
    /// constant `Σ (b log b − b)` so that it vanishes at `μ = b`.
    fn smooth(&self, mu: &[f64]) -> f64 {
        match self.loss {
            Loss::SquaredL2 => 0.5 * mu.iter().zip(self.b).map(|(m, b)| (m - b).powi(2)).sum::<f64>(),
            Loss::PoissonLikelihood => mu
                .iter()
                .zip(self.b)
                .map(|(&m, &b)| {
                    if b > 0.0 {
                        m - b - b * (m.max(self.mu_floor) / b).ln()
                    } else {
                        m
                    }
                })
                .sum(),
        }
    }

    fn in_domain(&self, mu: &[f64]) -> bool {
        mu.iter().zip(self.b).all(|(&m, &b)| b <= 0.0 || m > self.mu_floor)
    }

    fn smooth_grad_mu(&self, mu: &[f64]) -> Vec<f64> {
        match self.loss {
            Loss::SquaredL2 => mu.iter().zip(self.b).map(|(m, b)| m - b).collect(),
            Loss::PoissonLikelihood => mu
                .iter()
                .zip(self.b)
                .map(|(&m, &b)| 1.0 - b / m.max(self.mu_floor))
                .collect(),
        }
    }
}

/// Objective value `ℓ(A(X)) + λ tr(X)` used by the solvers.
pub fn objective(op: &dyn MeasurementMap, b: &[f64], cfg: &SolverConfig, x: &HermitianMatrix) -> Result<f64> {
    let p = Problem::new(op, b, cfg)?;
    Ok(p.smooth(&op.apply(x)) + p.lambda * x.trace())
}

/// Gradient of the smooth part, `A*(∂ℓ/∂μ)`.
pub fn smooth_gradient(op: &dyn MeasurementMap, b: &[f64], cfg: &SolverConfig, x: &HermitianMatrix) -> Result<HermitianMatrix> {
    let p = Problem::new(op, b, cfg)?;
    Ok(op.adjoint(&p.smooth_grad_mu(&op.apply(x))))
}

fn initial_point(op: &dyn MeasurementMap, b: &[f64], init: Init) -> HermitianMatrix {
    match init {
        Init::Zero => HermitianMatrix::zeros(op.dim()),
        Init::ScaledAdjoint => {
            let pos: Vec<f64> = b.iter().map(|v| v.max(0.0)).collect();
            op.adjoint(&pos).scale(1.0 / op.num_measurements() as f64)
        }
    }
}

const MAX_LIPSCHITZ: f64 = 1e300;
const BACKTRACK_SHRINK: f64 = 0.9;

fn run(
    p: &Problem<'_>,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(usize, &HermitianMatrix),
) -> Result<SolverReport> {
    let op = p.op;
    let mut lip = estimate_normal_operator_norm(op);
    if lip == 0.0 {
        return Err(Error::IllPosed("measurement operator is zero".into()));
    }
    let backtracking = cfg.step_rule == StepRule::Backtracking || p.loss == Loss::PoissonLikelihood;
    if p.loss == Loss::PoissonLikelihood {
        // Curvature of the likelihood scales like 1/μ; start from the data scale.
        let mean_b = p.b.iter().sum::<f64>() / p.b.len() as f64;
        if mean_b > 0.0 {
            lip /= mean_b;
        }
    }

    let mut x = initial_point(op, p.b, cfg.x0);
    let mut ax = op.apply(&x);
    let mut fx = p.smooth(&ax) + p.lambda * x.trace();
    if !fx.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut theta = 1.0_f64;
    let mut trace = Vec::new();
    let mut restarts = 0;
    let mut last_was_restart = false;
    let mut converged = false;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let gy = op.adjoint(&p.smooth_grad_mu(&ay));
        let fy = p.smooth(&ay);
        let (z, az, fz) = loop {
            let step = 1.0 / lip;
            let z = prox_psd_trace(&y.add_scaled(-step, &gy), p.lambda * step)?;
            let az = op.apply(&z);
            let fz = p.smooth(&az);
            if !backtracking {
                break (z, az, fz);
            }
            let d = &z - &y;
            let model = fy + gy.inner(&d) + 0.5 * lip * d.inner(&d);
            if fz.is_finite() && fz <= model + 1e-12 * fy.abs().max(1e-300) {
                break (z, az, fz);
            }
            lip *= 2.0;
            if lip > MAX_LIPSCHITZ {
                return Err(Error::Diverged { iteration: it });
            }
        };
        let fz_total = fz + p.lambda * z.trace();
        if !fz_total.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        observer(it, &z);

        if fz_total > fx {
            // Momentum overshoot: restart from the last accepted iterate.
            restarts += 1;
            if last_was_restart {
                lip *= 2.0;
            }
            last_was_restart = true;
            theta = 1.0;
            y = x.clone();
            ay = ax.clone();
            trace.push(fx);
            continue;
        }
        last_was_restart = false;

        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        y = z.add_scaled(beta, &(&z - &x));
        ay = az.iter().zip(&ax).map(|(a, b)| a + beta * (a - b)).collect();
        if p.loss == Loss::PoissonLikelihood && !p.in_domain(&ay) {
            // Extrapolated point left the likelihood's domain; take a plain step instead.
            y = z.clone();
            ay = az.clone();
        }
        rel_change = if fx == fz_total { 0.0 } else { (fx - fz_total).abs() / fx.abs().max(f64::MIN_POSITIVE) };
        x = z;
        ax = az;
        fx = fz_total;
        theta = theta_next;
        trace.push(fx);
        if backtracking {
            lip *= BACKTRACK_SHRINK;
        }
        if rel_change < cfg.rel_obj_tol {
            converged = true;
            break;
        }
    }

    Ok(SolverReport {
        x_hat: x,
        iterations,
        objective_trace: trace,
        converged,
        final_rel_change: rel_change,
        restarts,
        lipschitz: lip,
    })
}

/// Minimize `½‖b − A(X)‖² + λ tr(X)` over `X ⪰ 0`.
pub fn solve_trace_ls(op: &dyn MeasurementMap, b: &[f64], cfg: &SolverConfig) -> Result<SolverReport> {
    solve_trace_ls_observed(op, b, cfg, &mut |_, _| {})
}

/// As [`solve_trace_ls`], calling `observer(iteration, candidate)` on every
/// prox output.
pub fn solve_trace_ls_observed(
    op: &dyn MeasurementMap,
    b: &[f64],
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(usize, &HermitianMatrix),
) -> Result<SolverReport> {
    if cfg.loss != Loss::SquaredL2 {
        return Err(Error::invalid("solve_trace_ls needs loss = squared_l2"));
    }
    let p = Problem::new(op, b, cfg)?;
    run(&p, cfg, observer)
}

/// Minimize `Σ_k [μ_k − b_k log μ_k] + λ tr(X)` with `μ = A(X)`, `X ⪰ 0`.
pub fn solve_poisson(op: &dyn MeasurementMap, b: &[f64], cfg: &SolverConfig) -> Result<SolverReport> {
    solve_poisson_observed(op, b, cfg, &mut |_, _| {})
}

pub fn solve_poisson_observed(
    op: &dyn MeasurementMap,
    b: &[f64],
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(usize, &HermitianMatrix),
) -> Result<SolverReport> {
    if cfg.loss != Loss::PoissonLikelihood {
        return Err(Error::invalid("solve_poisson needs loss = poisson_likelihood"));
    }
    if b.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("Poisson data must be nonnegative"));
    }
    if cfg.lambda == 0.0 && b.iter().all(|&v| v == 0.0) {
        return Err(Error::IllPosed("all-zero data with λ = 0".into()));
    }
    let p = Problem::new(op, b, cfg)?;
    run(&p, cfg, observer)
}

/// Dispatch on `cfg.loss`.
pub fn solve(op: &dyn MeasurementMap, b: &[f64], cfg: &SolverConfig) -> Result<SolverReport> {
    match cfg.loss {
        Loss::SquaredL2 => solve_trace_ls(op, b, cfg),
        Loss::PoissonLikelihood => solve_poisson(op, b, cfg),
    }
}

/// Top eigenpair factor `x̂ = √λ₁ u₁` and `‖X − x̂x̂*‖_F / ‖X‖_F`.
pub fn extract_rank1(x: &HermitianMatrix) -> Result<(SignalVector, f64)> {
    let n = x.dim();
    let zero = || SignalVector {
        entries: vec![Complex64::new(0.0, 0.0); n],
        model: SignalModel::Custom,
        seed: 0,
    };
    let fro = x.frobenius_norm();
    if fro == 0.0 {
        return Ok((zero(), 0.0));
    }
    let eig = x.eigh()?;
    let top = eig.values[0].max(0.0);
    let scale = top.sqrt();
    let entries: Vec<Complex64> = eig.vectors.column(0).iter().map(|z| z * scale).collect();
    let residual = (x - &HermitianMatrix::outer(&entries)).frobenius_norm() / fro;
    Ok((
        SignalVector {
            entries,
            model: SignalModel::Custom,
            seed: 0,
        },
        residual,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use crate::analysis::{phase_aligned_distance, rel_error_lifted};
    use crate::masks::{sample_ensemble, MaskDistribution, MaskEnsemble};
    use crate::measurement::{forward_cdp, DenseOperator, LiftedOperator};
    use crate::signals::generate_gaussian;
    use std::sync::Arc;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let a = generate_gaussian(n * n, seed).unwrap().entries;
        HermitianMatrix::symmetrized(DMatrix::from_column_slice(n, n, &a))
    }

    #[test]
    fn prox_diagonal_example() {
        let x = HermitianMatrix::from_diagonal(&[3.0, -1.0]);
        let p = prox_psd_trace(&x, 1.0).unwrap();
        assert!((&p - &HermitianMatrix::from_diagonal(&[2.0, 0.0])).frobenius_norm() < 1e-14);
    }

    #[test]
    fn prox_shift_of_dominant_matrix() {
        let t = 0.7;
        let r = random_hermitian(5, 3);
        let shift = r.min_eigenvalue().unwrap().abs() + t + 0.1;
        let x = r.add_scaled(shift, &HermitianMatrix::identity(5));
        let p = prox_psd_trace(&x, t).unwrap();
        let expect = x.add_scaled(-t, &HermitianMatrix::identity(5));
        assert!((&p - &expect).frobenius_norm() < 1e-12);
    }

    #[test]
    fn prox_zero_threshold_is_nearest_psd() {
        let x = random_hermitian(6, 9);
        let p = prox_psd_trace(&x, 0.0).unwrap();
        assert!(p.min_eigenvalue().unwrap() > -1e-12);
        // Any other PSD matrix is no closer.
        for seed in 0..20 {
            let v = generate_gaussian(6, 100 + seed).unwrap().entries;
            let q = &p + &HermitianMatrix::outer(&v).scale(0.01);
            assert!((&x - &q).frobenius_norm() >= (&x - &p).frobenius_norm() - 1e-12);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), 8, 4, false, 1).unwrap());
        let op = LiftedOperator::new(e);
        let r = solve_trace_ls(&op, &[0.0; 32], &SolverConfig::noiseless()).unwrap();
        assert_eq!(r.x_hat.frobenius_norm(), 0.0);
        assert!(r.converged);

        let cfg = SolverConfig {
            lambda: 0.1,
            ..SolverConfig::poisson(20.0)
        };
        let r = solve_poisson(&op, &[0.0; 32], &cfg).unwrap();
        assert!(r.x_hat.frobenius_norm() < 1e-12);

        let ill = SolverConfig { lambda: 0.0, ..cfg };
        assert!(matches!(solve_poisson(&op, &[0.0; 32], &ill), Err(Error::IllPosed(_))));
    }

    #[test]
    fn ls_objective_not_worse_than_truth_small_dense() {
        // n = 2, plain pattern plus two ternary patterns, dense operator.
        let e = sample_ensemble(&MaskDistribution::ternary(), 2, 3, true, 4).unwrap();
        let op = DenseOperator::from_ensemble(&e).unwrap();
        let x = generate_gaussian(2, 5).unwrap();
        let b = op.apply_rank_one(x.as_slice());
        let cfg = SolverConfig::noiseless();
        let r = solve_trace_ls(&op, &b, &cfg).unwrap();
        let at_truth = objective(&op, &b, &cfg, &HermitianMatrix::outer(x.as_slice())).unwrap();
        assert!(r.final_objective() <= at_truth + 1e-8, "{} vs {}", r.final_objective(), at_truth);
    }

    #[test]
    fn monotone_objective_and_psd_iterates() {
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), 16, 6, false, 2).unwrap());
        let op = LiftedOperator::new(e.clone());
        let x = generate_gaussian(16, 3).unwrap();
        let b = forward_cdp(&x, &e).unwrap().values;
        let mut min_eig = f64::INFINITY;
        let cfg = SolverConfig {
            max_iters: 400,
            ..SolverConfig::noiseless()
        };
        let r = solve_trace_ls_observed(&op, &b, &cfg, &mut |_, z| {
            min_eig = min_eig.min(z.min_eigenvalue().unwrap());
        })
        .unwrap();
        assert!(min_eig >= -1e-9);
        assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn recovers_signal_n16() {
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), 16, 6, false, 12).unwrap());
        let op = LiftedOperator::new(e.clone());
        let x = generate_gaussian(16, 13).unwrap();
        let b = forward_cdp(&x, &e).unwrap().values;
        let r = solve_trace_ls(&op, &b, &SolverConfig::noiseless()).unwrap();
        assert!(r.converged);
        let err = rel_error_lifted(&r.x_hat, x.as_slice()).unwrap();
        assert!(err < 1e-5, "rel err {err}, iters {}", r.iterations);
        let (xh, _) = extract_rank1(&r.x_hat).unwrap();
        assert!(phase_aligned_distance(xh.as_slice(), x.as_slice()) / x.norm() < 1e-4);
    }

    #[test]
    fn scale_consistency() {
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), 8, 6, false, 21).unwrap());
        let op = LiftedOperator::new(e.clone());
        let x = generate_gaussian(8, 22).unwrap();
        let cfg = SolverConfig::noiseless();
        let c2 = 3.0f64;
        let r1 = solve_trace_ls(&op, &forward_cdp(&x, &e).unwrap().values, &cfg).unwrap();
        let r2 = solve_trace_ls(&op, &forward_cdp(&x.scaled(c2.sqrt()), &e).unwrap().values, &cfg).unwrap();
        let scaled = r1.x_hat.scale(c2);
        assert!((&scaled - &r2.x_hat).frobenius_norm() / r2.x_hat.frobenius_norm() < 1e-5);
    }

    #[test]
    fn poisson_noiseless_self_consistency() {
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), 16, 8, false, 31).unwrap());
        let op = LiftedOperator::new(e.clone());
        let x = generate_gaussian(16, 32).unwrap();
        let b = forward_cdp(&x, &e).unwrap().values;
        let cfg = SolverConfig {
            lambda: 1e-8,
            ..SolverConfig::poisson(40.0)
        };
        let r = solve_poisson(&op, &b, &cfg).unwrap();
        let err = rel_error_lifted(&r.x_hat, x.as_slice()).unwrap();
        assert!(err < 1e-3, "rel err {err}, iters {}", r.iterations);
    }

    #[test]
    fn poisson_gradient_matches_central_differences() {
        let n = 4;
        let e = Arc::new(sample_ensemble(&MaskDistribution::octanary(), n, 3, false, 41).unwrap());
        let op = LiftedOperator::new(e.clone());
        let x = generate_gaussian(n, 42).unwrap();
        let clean = forward_cdp(&x, &e).unwrap();
        let b = crate::measurement::add_poisson_noise(&clean, 20.0, 43).unwrap().values;
        let cfg = SolverConfig::poisson(20.0);
        // Interior point X ≻ 0.
        let v = generate_gaussian(n, 44).unwrap().entries;
        let xp = HermitianMatrix::outer(&v).add_scaled(0.5, &HermitianMatrix::identity(n));
        let g = smooth_gradient(&op, &b, &cfg, &xp).unwrap();
        let smooth = |m: &HermitianMatrix| objective(&op, &b, &SolverConfig { lambda: 0.0, ..cfg.clone() }, m).unwrap();
        for seed in 0..5 {
            let dir = random_hermitian(n, 50 + seed);
            let dir = dir.scale(1.0 / dir.frobenius_norm());
            let h = 1e-5;
            let fd = (smooth(&xp.add_scaled(h, &dir)) - smooth(&xp.add_scaled(-h, &dir))) / (2.0 * h);
            let an = g.inner(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn extract_rank1_cases() {
        let x = generate_gaussian(5, 60).unwrap();
        let (xh, res) = extract_rank1(&HermitianMatrix::outer(x.as_slice())).unwrap();
        assert!(res < 1e-10);
        assert!(phase_aligned_distance(xh.as_slice(), x.as_slice()) < 1e-10);

        let (_, res) = extract_rank1(&HermitianMatrix::identity(2)).unwrap();
        assert!((res - 0.5f64.sqrt()).abs() < 1e-12);

        let (z, res) = extract_rank1(&HermitianMatrix::zeros(3)).unwrap();
        assert_eq!(res, 0.0);
        assert!(z.entries.iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn operator_norm_estimate_is_upper_bound_for_samples() {
        let e = MaskEnsemble::from_patterns(MaskDistribution::uniform(), vec![vec![c(1.0, 0.0); 4]]).unwrap();
        let op = LiftedOperator::new(Arc::new(e));
        // Plain DFT: A*A(I) = n² I on the identity direction, ‖A*A‖ = n².
        let est = estimate_normal_operator_norm(&op);
        assert!((16.0..16.0 * 1.02).contains(&est), "{est}");
    }

    #[test]
    fn config_validation_and_report_downsampling() {
        assert!(SolverConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        let r = SolverReport {
            x_hat: HermitianMatrix::zeros(2),
            iterations: 10,
            objective_trace: (0..10).map(f64::from).collect(),
            converged: true,
            final_rel_change: 0.0,
            restarts: 0,
            lipschitz: 1.0,
        };
        let d = r.downsampled(4);
        assert!(d.objective_trace.len() <= 5);
        assert_eq!(d.objective_trace.last(), Some(&9.0));
        assert!((SolverConfig::poisson(20.0).lambda - 0.1).abs() < 1e-15);
    }
}
