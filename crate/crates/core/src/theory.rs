//! Numerical checks of the recovery theory.
//!
//! Everything here is constructive: the tangent space at `xx*` and its
//! projectors, exact and Monte Carlo evaluation of the two expectation
//! identities for one random mask, concentration of `A*(1)`, the ℓ1 upper
//! bound, the spectrum of the averaged injectivity matrix `⟨W⟩`, and the
//! golfing construction of an approximate dual certificate `Z = A*(λ)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::masks::{sample_ensemble, MaskDistribution, MaskEnsemble};
use crate::measurement::{LiftedOperator, MeasurementMap};
use crate::rng::{derive_seed, substream};
use crate::signals::norm;

/// Largest number of joint mask outcomes enumerated exactly.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

pub const DEFAULT_BETA: f64 = 3.0;

const UNIT_TOL: f64 = 1e-12;
const MC_CHUNK: usize = 4096;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn check_unit(x: &[Complex64], what: &str) -> Result<()> {
    let r = norm(x);
    if (r - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("{what} must have unit norm, got {r}")));
    }
    Ok(())
}

fn check_normalized(dist: &MaskDistribution) -> Result<()> {
    let abs2 = dist.moments().abs2;
    if (abs2 - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "mask distribution must satisfy E|d|² = 1, got {abs2}"
        )));
    }
    Ok(())
}

/// `T_n = sqrt(2 β ln n)`.
pub fn truncation_threshold(n: usize, beta: f64) -> f64 {
    (2.0 * beta * (n as f64).ln()).sqrt()
}

/// Tangent space `T = {xy* + yx*}` of the rank-one manifold at `xx*`.
#[derive(Clone, Debug)]
pub struct TangentSpace {
    x: Vec<Complex64>,
    /// `I − xx*`
    perp: DMatrix<Complex64>,
}

impl TangentSpace {
    pub fn new(x: &[Complex64]) -> Result<Self> {
        check_unit(x, "tangent point")?;
        let n = x.len();
        let perp = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            Complex64::new(id, 0.0) - x[i] * x[j].conj()
        });
        Ok(Self { x: x.to_vec(), perp })
    }

    pub fn x(&self) -> &[Complex64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `(I − xx*) Y (I − xx*)`.
    pub fn project_tperp(&self, y: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrized(&self.perp * y.as_matrix() * &self.perp)
    }

    pub fn project_t(&self, y: &HermitianMatrix) -> HermitianMatrix {
        y - &self.project_tperp(y)
    }

    /// Largest eigenvalue of `Y_{T⊥}` as an operator on `x⊥`.
    pub fn tperp_max_eigenvalue(&self, y: &HermitianMatrix) -> Result<f64> {
        let p = self.project_tperp(y);
        // push the x direction (eigenvalue 0 of P Y P) below everything else
        let c = p.frobenius_norm() + 1.0;
        p.add_scaled(-c, &HermitianMatrix::outer(&self.x)).max_eigenvalue()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationLemma {
    /// `E (1/n) Σ_k |f_k* D* x|² D f_k f_k* D* = xx* + ‖x‖² I`
    First,
    /// `E (1/n) Σ_k (f_k* D* x)² D f_k f_kᵀ D = 2 x xᵀ`
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VerifyMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationReport {
    pub lemma: ExpectationLemma,
    pub n: usize,
    pub mode: VerifyMode,
    /// Joint outcomes enumerated, or samples drawn.
    pub outcomes: usize,
    /// Spectral norm of the difference to the closed form.
    pub deviation: f64,
    /// Frobenius standard error of the empirical mean (Monte Carlo only).
    pub std_error: Option<f64>,
}

/// FFT helpers for one mask at a time.
struct PatternKernel {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl PatternKernel {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// `c_k = f_k* D* x`
    fn coefficients(&self, d: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = d.iter().zip(x).map(|(d, x)| d.conj() * x).collect();
        self.forward.process(&mut c);
        c
    }

    /// Write `(1/n) Σ_k w_k D f_k f_k* D*` (`First`) or
    /// `(1/n) Σ_k w_k D f_k f_kᵀ D` (`Second`) into `out`.
    fn block(&self, lemma: ExpectationLemma, d: &[Complex64], w: &mut [Complex64], out: &mut DMatrix<Complex64>) {
        let n = self.n;
        self.inverse.process(w);
        let inv_n = 1.0 / n as f64;
        for t in 0..n {
            for s in 0..n {
                out[(s, t)] = match lemma {
                    ExpectationLemma::First => d[s] * d[t].conj() * w[(s + n - t) % n],
                    ExpectationLemma::Second => d[s] * d[t] * w[(s + t) % n],
                } * inv_n;
            }
        }
    }

    fn sample_matrix(&self, lemma: ExpectationLemma, d: &[Complex64], x: &[Complex64], out: &mut DMatrix<Complex64>) {
        let mut w = self.coefficients(d, x);
        for z in w.iter_mut() {
            *z = match lemma {
                ExpectationLemma::First => Complex64::new(z.norm_sqr(), 0.0),
                ExpectationLemma::Second => *z * *z,
            };
        }
        self.block(lemma, d, &mut w, out);
    }
}

fn closed_form(lemma: ExpectationLemma, x: &[Complex64]) -> DMatrix<Complex64> {
    let n = x.len();
    let nx2: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    match lemma {
        ExpectationLemma::First => DMatrix::from_fn(n, n, |i, j| {
            x[i] * x[j].conj() + if i == j { Complex64::new(nx2, 0.0) } else { zero() }
        }),
        ExpectationLemma::Second => DMatrix::from_fn(n, n, |i, j| x[i] * x[j] * 2.0),
    }
}

fn spectral_norm_general(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0, |a, &b| a.max(b))
}

/// Exact or sampled `E` of the matrix in `lemma` for a single random mask.
pub fn expectation_matrix(
    lemma: ExpectationLemma,
    dist: &MaskDistribution,
    x: &[Complex64],
    mode: VerifyMode,
) -> Result<(DMatrix<Complex64>, usize, Option<f64>)> {
    let n = x.len();
    if n == 0 {
        return Err(Error::invalid("signal must be non-empty"));
    }
    let kernel = PatternKernel::new(n);
    let mut mean = DMatrix::zeros(n, n);
    let mut scratch = DMatrix::zeros(n, n);
    match mode {
        VerifyMode::Exact => {
            let atoms = dist.atoms.len();
            let outcomes = (atoms as f64).powi(n as i32);
            if outcomes > ENUMERATION_LIMIT as f64 {
                return Err(Error::EnumerationTooLarge {
                    outcomes,
                    limit: ENUMERATION_LIMIT,
                });
            }
            let mut digits = vec![0usize; n];
            let mut d = vec![zero(); n];
            for _ in 0..outcomes as usize {
                let mut p = 1.0;
                for (slot, &i) in d.iter_mut().zip(&digits) {
                    *slot = dist.atoms[i].value;
                    p *= dist.atoms[i].prob;
                }
                kernel.sample_matrix(lemma, &d, x, &mut scratch);
                mean += &scratch * Complex64::new(p, 0.0);
                for digit in digits.iter_mut() {
                    *digit += 1;
                    if *digit < atoms {
                        break;
                    }
                    *digit = 0;
                }
            }
            Ok((mean, outcomes as usize, None))
        }
        VerifyMode::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("Monte Carlo needs at least 2 samples"));
            }
            let mut sumsq = 0.0;
            let mut drawn = 0;
            let mut chunk_idx = 0;
            while drawn < samples {
                let m = MC_CHUNK.min(samples - drawn);
                let ens = sample_ensemble(dist, n, m, false, substream(seed, chunk_idx))?;
                for d in &ens.patterns {
                    kernel.sample_matrix(lemma, d, x, &mut scratch);
                    mean += &scratch;
                    sumsq += scratch.norm_squared();
                }
                drawn += m;
                chunk_idx += 1;
            }
            let s = samples as f64;
            mean /= Complex64::new(s, 0.0);
            let var = ((sumsq / s - mean.norm_squared()) * s / (s - 1.0)).max(0.0);
            Ok((mean, samples, Some((var / s).sqrt())))
        }
    }
}

fn verify_expectation(
    lemma: ExpectationLemma,
    dist: &MaskDistribution,
    n: usize,
    mode: VerifyMode,
    x: &[Complex64],
) -> Result<ExpectationReport> {
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    check_normalized(dist)?;
    let (mean, outcomes, std_error) = expectation_matrix(lemma, dist, x, mode)?;
    let deviation = spectral_norm_general(&(mean - closed_form(lemma, x)));
    Ok(ExpectationReport {
        lemma,
        n,
        mode,
        outcomes,
        deviation,
        std_error,
    })
}

pub fn verify_expectation_lemma1(
    dist: &MaskDistribution,
    n: usize,
    mode: VerifyMode,
    x: &[Complex64],
) -> Result<ExpectationReport> {
    verify_expectation(ExpectationLemma::First, dist, n, mode, x)
}

pub fn verify_expectation_lemma2(
    dist: &MaskDistribution,
    n: usize,
    mode: VerifyMode,
    x: &[Complex64],
) -> Result<ExpectationReport> {
    verify_expectation(ExpectationLemma::Second, dist, n, mode, x)
}

/// `‖(1/nL) A*(1) − I‖`, computed from the diagonal `(1/L) Σ_ℓ |d_ℓ|²`.
pub fn a1_deviation(ens: &MaskEnsemble) -> f64 {
    let l = ens.num_patterns() as f64;
    (0..ens.n())
        .map(|t| {
            let s: f64 = ens.patterns.iter().map(|p| p[t].norm_sqr()).sum();
            (s / l - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    #[serde(rename = "L")]
    pub l: usize,
    pub trials: usize,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub deviations: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

pub fn verify_a1_concentration(
    dist: &MaskDistribution,
    n: usize,
    l_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<ConcentrationRow>> {
    check_normalized(dist)?;
    if trials == 0 || l_list.is_empty() {
        return Err(Error::invalid("need at least one trial and one L"));
    }
    l_list
        .iter()
        .enumerate()
        .map(|(gi, &l)| {
            let deviations = (0..trials)
                .map(|t| {
                    let ens = sample_ensemble(dist, n, l, false, derive_seed(seed, gi as u64, t as u64))?;
                    Ok(a1_deviation(&ens))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(ConcentrationRow {
                l,
                trials,
                max: deviations.iter().copied().fold(0.0, f64::max),
                mean: deviations.iter().sum::<f64>() / trials as f64,
                median: median(&deviations),
                deviations,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1BoundReport {
    /// `(1/nL) ‖A(X)‖₁`
    pub lhs: f64,
    /// `M² tr X`
    pub rhs: f64,
    pub ok: bool,
}

/// Check `(1/nL) ‖A(X)‖₁ ≤ M² tr X` for PSD `X`, with `M` the ensemble bound.
pub fn check_l1_bound(op: &LiftedOperator, x: &HermitianMatrix) -> Result<L1BoundReport> {
    if x.dim() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: x.dim(),
        });
    }
    x.check_psd(1e-10 * x.frobenius_norm().max(1.0))?;
    let m = op.ensemble().bound();
    let lhs = op.apply(x).iter().map(|v| v.abs()).sum::<f64>() / op.num_measurements() as f64;
    let rhs = m * m * x.trace();
    Ok(L1BoundReport {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-9,
    })
}

/// `⟨W⟩ = (1/nL) Σ_{ℓ,k} 1(|c| ≤ T) w w*` with `w = [c D f_k; c̄ D̄ f̄_k]`,
/// `c = f_k* D_ℓ* x`. Returned as a `2n × 2n` Hermitian matrix.
pub fn injectivity_matrix(x: &[Complex64], ens: &Arc<MaskEnsemble>, truncation: Option<f64>) -> Result<HermitianMatrix> {
    let n = ens.n();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let op = LiftedOperator::new(ens.clone());
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    let mut cols: Vec<Complex64> = Vec::new();
    let mut kept = 0;
    for (ell, d) in ens.patterns.iter().enumerate() {
        let c = op.modulated_dft(ell, x);
        for (k, &ck) in c.iter().enumerate() {
            if truncation.is_some_and(|t| ck.norm() > t) {
                continue;
            }
            kept += 1;
            // (D f_k)[t] = d[t] exp(2πi k t / n)
            let a: Vec<Complex64> = (0..n)
                .map(|t| d[t] * Complex64::from_polar(1.0, tau * ((k * t) % n) as f64))
                .collect();
            cols.extend(a.iter().map(|v| ck * v));
            cols.extend(a.iter().map(|v| (ck * v).conj()));
        }
    }
    let v = DMatrix::from_column_slice(2 * n, kept, &cols);
    let scale = 1.0 / op.num_measurements() as f64;
    Ok(HermitianMatrix::symmetrized(&v * v.adjoint() * Complex64::new(scale, 0.0)))
}

/// `[y; ȳ]* W [y; ȳ]`.
pub fn injectivity_quadratic_form(w: &HermitianMatrix, y: &[Complex64]) -> f64 {
    let stacked: Vec<Complex64> = y.iter().copied().chain(y.iter().map(|z| z.conj())).collect();
    w.quadratic_form(&stacked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// Eigenvalues of `⟨W⟩`, descending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue on the complement of `[x; −x̄]`.
    pub restricted_min: f64,
    pub truncation: Option<f64>,
}

pub fn injectivity_spectrum(
    x: &[Complex64],
    ens: &Arc<MaskEnsemble>,
    truncation: Option<f64>,
) -> Result<InjectivityReport> {
    check_unit(x, "signal")?;
    let w = injectivity_matrix(x, ens, truncation)?;
    let eigenvalues = w.eigenvalues()?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let u: Vec<Complex64> = x.iter().map(|z| z * s).chain(x.iter().map(|z| -z.conj() * s)).collect();
    let uu = HermitianMatrix::outer(&u);
    let p = &HermitianMatrix::identity(2 * x.len()) - &uu;
    let pwp = HermitianMatrix::symmetrized(p.as_matrix() * w.as_matrix() * p.as_matrix());
    // lift the excluded direction above the rest of the spectrum
    let lifted = pwp.add_scaled(w.trace() + 1.0, &uu);
    Ok(InjectivityReport {
        eigenvalues,
        restricted_min: lifted.min_eigenvalue()?,
        truncation,
    })
}

/// `Ỹ(v)` together with weights `w` such that `Ỹ = A*(w) / (nL)`.
#[derive(Clone, Debug)]
pub struct YTilde {
    pub matrix: HermitianMatrix,
    pub weights: Vec<f64>,
    pub threshold: f64,
}

fn y_tilde_weights(op: &LiftedOperator, v: &[Complex64], threshold: f64) -> Vec<f64> {
    let t2 = threshold * threshold;
    op.apply_rank_one(v)
        .into_iter()
        .map(|c2| if c2 <= t2 { c2 } else { 0.0 })
        .collect()
}

/// `Ỹ(v) = (1/L) Σ_ℓ (1/n) Σ_k |c|² 1(|c| ≤ T_n) D_ℓ f_k f_k* D_ℓ*`, `c = f_k* D_ℓ* v`.
pub fn build_y_tilde(v: &[Complex64], ens: &Arc<MaskEnsemble>, beta: f64) -> Result<YTilde> {
    check_unit(v, "direction")?;
    if v.len() != ens.n() {
        return Err(Error::DimensionMismatch {
            expected: ens.n(),
            got: v.len(),
        });
    }
    let op = LiftedOperator::new(ens.clone());
    let threshold = truncation_threshold(ens.n(), beta);
    let weights = y_tilde_weights(&op, v, threshold);
    let matrix = op.adjoint(&weights).scale(1.0 / op.num_measurements() as f64);
    Ok(YTilde {
        matrix,
        weights,
        threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateValidation {
    /// `Z_{T⊥} ⪯ −I_{T⊥}` up to `1e-8`.
    pub cond1: bool,
    /// `−λ_max(Z_{T⊥} + I)` on `x⊥`.
    pub cond1_margin: f64,
    /// `‖Z_T‖_F ≤ (1−δ) / (2 M² sqrt(nL))`
    pub cond2: bool,
    pub cond2_bound: f64,
    pub z_t_frob: f64,
    /// `4 / 5^B`
    pub decay_bound: f64,
    pub decay_ok: bool,
    /// `4 / 2^B`, the rate used at small scale.
    pub relaxed_decay_bound: f64,
    pub relaxed_decay_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub z: HermitianMatrix,
    /// `Z = A*(λ)` over the concatenated batches.
    #[serde(skip)]
    pub lambda: Vec<f64>,
    pub lambda_len: usize,
    /// `[L₀, L₁, …, L_B]`
    pub batch_sizes: Vec<usize>,
    /// `‖X^(b)‖_F` for `b = 0..=B`.
    pub x_frob: Vec<f64>,
    /// The final residual `X^(B)` in `T`.
    pub x_final: HermitianMatrix,
    pub z_t_frob: f64,
    pub max_eig_tperp_shifted: f64,
    pub beta: f64,
    pub delta: f64,
    pub threshold: f64,
    pub validation: CertificateValidation,
}

impl CertificateReport {
    /// `‖X^(b)‖_F / ‖X^(b−1)‖_F` for `b = 1..=B`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.x_frob.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn num_refinements(&self) -> usize {
        self.batch_sizes.len().saturating_sub(1)
    }
}

/// Draw one ensemble and split it into batches of the given sizes.
pub fn sample_batches(dist: &MaskDistribution, n: usize, sizes: &[usize], seed: u64) -> Result<Vec<MaskEnsemble>> {
    let total = sizes.iter().sum();
    sample_ensemble(dist, n, total, false, seed)?.split(sizes)
}

/// Golfing scheme: `X⁰ = (2/nL₀) P_T(A₀*(1))`, then for each further batch
/// `Y^b = λ₁Ỹ(u₁) + λ₂Ỹ(u₂) − (λ₁+λ₂)(1/nL_b) A_b*(1)` from the eigenpairs of
/// `X^{b−1}` and `X^b = X^{b−1} − P_T(Y^b)`. Finally `Z = Σ_b Y^b − (2/nL₀) A₀*(1)`.
pub fn build_golfing_certificate(
    x: &[Complex64],
    batches: &[MaskEnsemble],
    beta: f64,
    delta: f64,
) -> Result<CertificateReport> {
    if batches.len() < 2 {
        return Err(Error::invalid("golfing needs at least two batches"));
    }
    let ts = TangentSpace::new(x)?;
    let n = x.len();
    if let Some(b) = batches.iter().find(|b| b.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.n(),
        });
    }
    let threshold = truncation_threshold(n, beta);

    let op0 = LiftedOperator::new(Arc::new(batches[0].clone()));
    let m0 = op0.num_measurements();
    let lambda0 = vec![-2.0 / m0 as f64; m0];
    let a0 = op0.adjoint(&lambda0);
    let mut z = a0.clone();
    let mut xb = ts.project_t(&a0.scale(-1.0));
    let mut x_frob = vec![xb.frobenius_norm()];
    let mut lambda = lambda0;

    for batch in &batches[1..] {
        let op = LiftedOperator::new(Arc::new(batch.clone()));
        let m = op.num_measurements() as f64;
        let eig = xb.eigh()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.values[b].abs().total_cmp(&eig.values[a].abs()));
        let mut w = vec![0.0; op.num_measurements()];
        for &j in order.iter().take(2) {
            let lam = eig.values[j];
            let u: Vec<Complex64> = eig.vectors.column(j).iter().copied().collect();
            for (wi, yi) in w.iter_mut().zip(y_tilde_weights(&op, &u, threshold)) {
                *wi += lam * (yi - 1.0);
            }
        }
        w.iter_mut().for_each(|v| *v /= m);
        let y = op.adjoint(&w);
        xb = &xb - &ts.project_t(&y);
        x_frob.push(xb.frobenius_norm());
        z += &y;
        lambda.extend(w);
    }

    let z_t_frob = ts.project_t(&z).frobenius_norm();
    let l_total: usize = batches.iter().map(|b| b.num_patterns()).sum();
    let m_bound = batches.iter().map(|b| b.bound()).fold(0.0, f64::max);
    let validation = validate_dual(&z, &ts, delta, m_bound, n, l_total, batches.len() - 1)?;
    Ok(CertificateReport {
        max_eig_tperp_shifted: -validation.cond1_margin,
        z,
        lambda_len: lambda.len(),
        lambda,
        batch_sizes: batches.iter().map(|b| b.num_patterns()).collect(),
        x_frob,
        x_final: xb,
        z_t_frob,
        beta,
        delta,
        threshold,
        validation,
    })
}

/// Check both certificate conditions and the geometric decay targets for a
/// candidate `Z` built from `num_refinements` batches after the first.
pub fn validate_dual(
    z: &HermitianMatrix,
    ts: &TangentSpace,
    delta: f64,
    m: f64,
    n: usize,
    l: usize,
    num_refinements: usize,
) -> Result<CertificateValidation> {
    let shifted = z + &HermitianMatrix::identity(z.dim());
    let max_eig = ts.tperp_max_eigenvalue(&shifted)?;
    let z_t_frob = ts.project_t(z).frobenius_norm();
    let cond2_bound = (1.0 - delta) / (2.0 * m * m * ((n * l) as f64).sqrt());
    let b = num_refinements as i32;
    let decay_bound = 4.0 / 5f64.powi(b);
    let relaxed_decay_bound = 4.0 / 2f64.powi(b);
    Ok(CertificateValidation {
        cond1: max_eig <= 1e-8,
        cond1_margin: -max_eig,
        cond2: z_t_frob <= cond2_bound,
        cond2_bound,
        z_t_frob,
        decay_bound,
        decay_ok: z_t_frob <= decay_bound,
        relaxed_decay_bound,
        relaxed_decay_ok: z_t_frob <= relaxed_decay_bound,
    })
}

pub fn validate_certificate(
    report: &CertificateReport,
    x: &[Complex64],
    delta: f64,
    m: f64,
    n: usize,
    l: usize,
) -> Result<CertificateValidation> {
    let ts = TangentSpace::new(x)?;
    validate_dual(&report.z, &ts, delta, m, n, l, report.num_refinements())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::normalize_distribution;
    use crate::measurement::DenseOperator;
    use crate::rng::rng_from_seed;
    use crate::signals::{generate_gaussian, normalize};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit(n: usize, seed: u64) -> Vec<Complex64> {
        normalize(&generate_gaussian(n, seed).unwrap()).unwrap().entries
    }

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let mut rng = rng_from_seed(seed);
        let m = DMatrix::from_fn(n, n, |_, _| {
            c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
        });
        HermitianMatrix::symmetrized(m)
    }

    fn random_psd(n: usize, rank: usize, seed: u64) -> HermitianMatrix {
        let mut out = HermitianMatrix::zeros(n);
        for r in 0..rank {
            out += &HermitianMatrix::outer(&generate_gaussian(n, seed * 31 + r as u64).unwrap().entries);
        }
        out
    }

    fn oct() -> MaskDistribution {
        normalize_distribution(&MaskDistribution::octanary()).unwrap()
    }

    fn e(n: usize, i: usize) -> Vec<Complex64> {
        (0..n).map(|j| c(if i == j { 1.0 } else { 0.0 }, 0.0)).collect()
    }

    #[test]
    fn tangent_projector_examples() {
        let x = unit(5, 1);
        let ts = TangentSpace::new(&x).unwrap();
        let xx = HermitianMatrix::outer(&x);
        assert!((&ts.project_t(&xx) - &xx).frobenius_norm() < 1e-12);

        let ts0 = TangentSpace::new(&e(3, 0)).unwrap();
        assert!(ts0.project_t(&HermitianMatrix::outer(&e(3, 1))).frobenius_norm() < 1e-15);

        let y = random_hermitian(5, 2);
        let sum = &ts.project_t(&y) + &ts.project_tperp(&y);
        assert!((&sum - &y).frobenius_norm() < 1e-12);
        assert!(TangentSpace::new(&[c(1.0, 0.0), c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn lemma1_exact_n2() {
        for seed in 0..5 {
            let x = generate_gaussian(2, seed).unwrap().entries;
            let r = verify_expectation_lemma1(&oct(), 2, VerifyMode::Exact, &x).unwrap();
            assert_eq!(r.outcomes, 64);
            assert!(r.deviation < 1e-12, "{}", r.deviation);
        }
    }

    #[test]
    fn lemma2_exact_n2() {
        for seed in 0..5 {
            let x = generate_gaussian(2, seed + 10).unwrap().entries;
            let r = verify_expectation_lemma2(&oct(), 2, VerifyMode::Exact, &x).unwrap();
            assert!(r.deviation < 1e-12, "{}", r.deviation);
        }
        let (m, _, _) = expectation_matrix(ExpectationLemma::Second, &oct(), &e(2, 0), VerifyMode::Exact).unwrap();
        assert!((m[(0, 0)] - c(2.0, 0.0)).norm() < 1e-12);
        assert!(m[(0, 1)].norm() < 1e-12 && m[(1, 1)].norm() < 1e-12);
    }

    #[test]
    fn lemmas_vanish_at_zero_signal() {
        let x = vec![zero(); 3];
        for mode in [VerifyMode::Exact, VerifyMode::MonteCarlo { samples: 100, seed: 1 }] {
            assert_eq!(verify_expectation_lemma1(&oct(), 3, mode, &x).unwrap().deviation, 0.0);
            assert_eq!(verify_expectation_lemma2(&oct(), 3, mode, &x).unwrap().deviation, 0.0);
        }
    }

    #[test]
    fn exact_enumeration_on_n3() {
        let x = generate_gaussian(3, 4).unwrap().entries;
        assert!(verify_expectation_lemma1(&oct(), 3, VerifyMode::Exact, &x).unwrap().deviation < 1e-12);
        assert!(verify_expectation_lemma2(&oct(), 3, VerifyMode::Exact, &x).unwrap().deviation < 1e-12);
    }

    #[test]
    fn enumeration_limit_and_preconditions() {
        let x = unit(7, 1);
        assert!(matches!(
            verify_expectation_lemma1(&oct(), 7, VerifyMode::Exact, &x),
            Err(Error::EnumerationTooLarge { .. })
        ));
        let raw = MaskDistribution::octanary();
        assert!(verify_expectation_lemma1(&raw, 7, VerifyMode::Exact, &x).is_err());
        assert!(verify_expectation_lemma1(&oct(), 3, VerifyMode::Exact, &x).is_err());
    }

    #[test]
    fn ternary_breaks_lemma2() {
        // E d² ≠ 0 for ternary masks, so the second identity does not hold.
        let t = normalize_distribution(&MaskDistribution::ternary()).unwrap();
        let x = unit(2, 3);
        assert!(verify_expectation_lemma2(&t, 2, VerifyMode::Exact, &x).unwrap().deviation > 1e-3);
    }

    #[test]
    fn monte_carlo_lemmas_n16() {
        let x = unit(16, 5);
        let mode = VerifyMode::MonteCarlo { samples: 20_000, seed: 9 };
        for r in [
            verify_expectation_lemma1(&oct(), 16, mode, &x).unwrap(),
            verify_expectation_lemma2(&oct(), 16, mode, &x).unwrap(),
        ] {
            let se = r.std_error.unwrap();
            assert!(r.deviation < 5.0 * se.max(1e-3), "{r:?}");
            assert!(r.deviation < 0.2);
        }
    }

    #[test]
    fn kernel_matches_lifted_adjoint() {
        let ens = Arc::new(sample_ensemble(&oct(), 8, 1, false, 2).unwrap());
        let op = LiftedOperator::new(ens.clone());
        let x = unit(8, 6);
        let k = PatternKernel::new(8);
        let mut m = DMatrix::zeros(8, 8);
        k.sample_matrix(ExpectationLemma::First, &ens.patterns[0], &x, &mut m);
        let oracle = op.adjoint(&op.apply_rank_one(&x)).scale(1.0 / 8.0);
        assert!((m - oracle.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn a1_identity_and_concentration() {
        let ens = sample_ensemble(&oct(), 8, 5, false, 3).unwrap();
        let op = LiftedOperator::new(Arc::new(ens.clone()));
        let a1 = op.adjoint(&vec![1.0; 40]).scale(1.0 / 40.0);
        let diff = &a1 - &HermitianMatrix::identity(8);
        assert!((diff.spectral_norm().unwrap() - a1_deviation(&ens)).abs() < 1e-12);

        let uni = verify_a1_concentration(&MaskDistribution::uniform(), 8, &[1, 4], 3, 0).unwrap();
        assert!(uni.iter().all(|r| r.max == 0.0));

        let rows = verify_a1_concentration(&oct(), 16, &[64, 256, 1024], 100, 7).unwrap();
        let big = &rows[2];
        assert!(big.deviations.iter().filter(|&&d| d < 0.2).count() >= 95);
        assert!(rows[1].median < rows[0].median && rows[2].median < rows[1].median);
    }

    #[test]
    fn l1_bound_cases() {
        let uni = Arc::new(sample_ensemble(&MaskDistribution::uniform(), 6, 1, false, 0).unwrap());
        let op = LiftedOperator::new(uni);
        let v = unit(6, 2);
        let r = check_l1_bound(&op, &HermitianMatrix::outer(&v)).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 1.0).abs() < 1e-12 && r.ok);

        let r0 = check_l1_bound(&op, &HermitianMatrix::zeros(6)).unwrap();
        assert_eq!((r0.lhs, r0.rhs, r0.ok), (0.0, 0.0, true));

        let neg = HermitianMatrix::from_diagonal(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(check_l1_bound(&op, &neg), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn l1_bound_fuzz_with_dense_oracle() {
        for seed in 0..50u64 {
            let ens = sample_ensemble(&MaskDistribution::octanary(), 6, 3, seed % 2 == 0, seed).unwrap();
            let dense = DenseOperator::from_ensemble(&ens).unwrap();
            let op = LiftedOperator::new(Arc::new(ens));
            let x = random_psd(6, 1 + (seed % 3) as usize, seed);
            let r = check_l1_bound(&op, &x).unwrap();
            let oracle: f64 = dense.apply(&x).iter().map(|v| v.abs()).sum::<f64>() / 18.0;
            assert!((r.lhs - oracle).abs() < 1e-9 * oracle.max(1.0));
            assert!(r.ok);
        }
    }

    #[test]
    fn injectivity_quadratic_form_identity() {
        for seed in 0..10u64 {
            let x = unit(2, seed);
            let ens = Arc::new(sample_ensemble(&oct(), 2, 3, false, seed).unwrap());
            let op = LiftedOperator::new(ens.clone());
            let w = injectivity_matrix(&x, &ens, None).unwrap();
            let mut y = generate_gaussian(2, seed + 100).unwrap().entries;
            // make x*y real
            let ip: Complex64 = x.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
            y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi -= xi * c(0.0, ip.im));
            let lhs = injectivity_quadratic_form(&w, &y);
            let a = op.apply(&HermitianMatrix::symmetric_outer(&x, &y));
            let rhs = a.iter().map(|v| v * v).sum::<f64>() / op.num_measurements() as f64;
            assert!((lhs - rhs).abs() < 1e-10 * rhs.max(1.0), "{lhs} vs {rhs}");

            let ix: Vec<Complex64> = x.iter().map(|z| z * c(0.0, 1.0)).collect();
            assert!(injectivity_quadratic_form(&w, &ix).abs() < 1e-10);
        }
    }

    #[test]
    fn injectivity_restricted_min_baseline() {
        let n = 16;
        let t = truncation_threshold(n, DEFAULT_BETA);
        let good = (0..50u64)
            .filter(|&s| {
                let ens = Arc::new(sample_ensemble(&oct(), n, 64, false, 1000 + s).unwrap());
                injectivity_spectrum(&unit(n, s), &ens, Some(t)).unwrap().restricted_min >= 0.25
            })
            .count();
        assert!(good >= 45, "{good}/50");
    }

    #[test]
    fn injectivity_restricted_min_excludes_null_direction() {
        let x = unit(4, 1);
        let ens = Arc::new(sample_ensemble(&oct(), 4, 32, false, 5).unwrap());
        let r = injectivity_spectrum(&x, &ens, None).unwrap();
        assert!(r.eigenvalues.last().unwrap().abs() < 1e-10);
        assert!(r.restricted_min > 1e-6);
    }

    #[test]
    fn y_tilde_weights_and_uniform_oracle() {
        let n = 8;
        let v = unit(n, 3);
        let ens = Arc::new(sample_ensemble(&oct(), n, 16, false, 4).unwrap());
        let yt = build_y_tilde(&v, &ens, DEFAULT_BETA).unwrap();
        let t2 = yt.threshold * yt.threshold;
        assert!(yt.weights.iter().all(|&w| (0.0..=t2).contains(&w)));

        // d ≡ 1: Ỹ = (1/n) Σ_k |f_k* v|² 1(·) f_k f_k*, built densely here
        let uni = Arc::new(sample_ensemble(&MaskDistribution::uniform(), n, 1, false, 0).unwrap());
        let y1 = build_y_tilde(&v, &uni, DEFAULT_BETA).unwrap();
        let mut oracle = DMatrix::zeros(n, n);
        for k in 0..n {
            let f: Vec<Complex64> = (0..n)
                .map(|t| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64))
                .collect();
            let ck: Complex64 = f.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            let wk = if ck.norm() <= y1.threshold { ck.norm_sqr() } else { 0.0 };
            let ff = HermitianMatrix::outer(&f);
            oracle += ff.as_matrix() * Complex64::new(wk / n as f64, 0.0);
        }
        assert!((y1.matrix.as_matrix() - oracle).norm() < 1e-12);
    }

    #[test]
    fn y_tilde_concentrates() {
        let n = 16;
        let good = (0..20u64)
            .filter(|&s| {
                let v = unit(n, s);
                let ens = Arc::new(sample_ensemble(&oct(), n, 2048, false, 500 + s).unwrap());
                let yt = build_y_tilde(&v, &ens, DEFAULT_BETA).unwrap();
                let target = &HermitianMatrix::outer(&v) + &HermitianMatrix::identity(n);
                (&yt.matrix - &target).spectral_norm().unwrap() < 0.5
            })
            .count();
        assert!(good >= 18, "{good}/20");
    }

    #[test]
    fn golfing_identities() {
        let n = 16;
        let x = unit(n, 2);
        let batches = sample_batches(&oct(), n, &[512; 4], 77).unwrap();
        let r = build_golfing_certificate(&x, &batches, DEFAULT_BETA, 0.1).unwrap();
        assert_eq!(r.lambda_len, n * 2048);
        assert!((r.z_t_frob - r.x_frob[3]).abs() < 1e-8);
        let ts = TangentSpace::new(&x).unwrap();
        assert!((&ts.project_t(&r.z) + &r.x_final).frobenius_norm() < 1e-8);

        let all = Arc::new(sample_ensemble(&oct(), n, 2048, false, 77).unwrap());
        let op = LiftedOperator::new(all);
        assert!((&op.adjoint(&r.lambda) - &r.z).frobenius_norm() < 1e-8);
        assert!(build_golfing_certificate(&x, &batches[..1], 3.0, 0.1).is_err());
    }

    #[test]
    fn golfing_baseline() {
        let n = 16;
        let mut good = 0;
        for s in 0..20u64 {
            let x = unit(n, s);
            let batches = sample_batches(&oct(), n, &[2048; 7], 900 + s).unwrap();
            let r = build_golfing_certificate(&x, &batches, DEFAULT_BETA, 0.1).unwrap();
            let v = validate_certificate(&r, &x, 0.1, 3f64.sqrt(), n, 7 * 2048).unwrap();
            assert_eq!(v.cond1, r.validation.cond1);
            assert!((v.cond2_bound - r.validation.cond2_bound).abs() < 1e-15);
            if r.contraction_ratios().iter().all(|&q| q <= 0.5) && v.cond1 && v.relaxed_decay_ok {
                good += 1;
            }
        }
        assert!(good >= 16, "{good}/20");
    }

    #[test]
    fn validate_synthetic_certificates() {
        let n = 5;
        let x = unit(n, 8);
        let ts = TangentSpace::new(&x).unwrap();
        let perp = &HermitianMatrix::identity(n) - &HermitianMatrix::outer(&x);
        let v = validate_dual(&perp.scale(-2.0), &ts, 0.1, 1.0, n, 4, 1).unwrap();
        assert!(v.cond1 && (v.cond1_margin - 1.0).abs() < 1e-12);
        assert!(v.z_t_frob < 1e-12 && v.cond2);
        let v0 = validate_dual(&HermitianMatrix::zeros(n), &ts, 0.1, 1.0, n, 4, 1).unwrap();
        assert!(!v0.cond1);
    }

    proptest! {
        #[test]
        fn projector_properties(seed in 0u64..10_000) {
            let n = 5;
            let ts = TangentSpace::new(&unit(n, seed)).unwrap();
            let y = random_hermitian(n, seed + 1);
            let w = random_hermitian(n, seed + 2);
            let pt = ts.project_t(&y);
            let pp = ts.project_tperp(&y);
            prop_assert!((&ts.project_t(&pt) - &pt).frobenius_norm() < 1e-12 * y.frobenius_norm().max(1.0));
            prop_assert!((&ts.project_tperp(&pp) - &pp).frobenius_norm() < 1e-12 * y.frobenius_norm().max(1.0));
            prop_assert!((ts.project_t(&y).inner(&w) - y.inner(&ts.project_t(&w))).abs() < 1e-11);
            prop_assert!(ts.project_t(&pp).frobenius_norm() < 1e-12 * y.frobenius_norm().max(1.0));
            let ny = y.spectral_norm().unwrap();
            prop_assert!(pp.spectral_norm().unwrap() <= ny + 1e-12);
            prop_assert!(pt.spectral_norm().unwrap() <= 2.0 * ny + 1e-12);
        }

        #[test]
        fn tangent_elements_have_rank_two(seed in 0u64..10_000) {
            let n = 6;
            let x = unit(n, seed);
            let y = generate_gaussian(n, seed + 3).unwrap().entries;
            let m = HermitianMatrix::symmetric_outer(&x, &y);
            let mut ev: Vec<f64> = m.eigenvalues().unwrap().iter().map(|v| v.abs()).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            prop_assert!(ev[2] < 1e-10 * ev[0].max(1e-300));
            prop_assert!(m.frobenius_norm() <= 2.0 * norm(&y) * (1.0 + 1e-12));
        }
    }
}
