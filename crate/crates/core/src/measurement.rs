//! Coded diffraction measurements and the lifted linear map.
//!
//! For masks `d_ℓ` and DFT rows `f_k* = [exp(-2πi k t / n)]_t` the data are
//! `y_{ℓ,k} = |f_k* D_ℓ* x|²`, and the lifted map on Hermitian matrices is
//! `A(X)_{ℓ,k} = f_k* D_ℓ* X D_ℓ f_k`.
//!
//! [`LiftedOperator`] evaluates `A` without forming `f_k f_k*`: for each
//! mask it sums the cyclic diagonals of `D_ℓ* X D_ℓ` and takes one FFT,
//! and the adjoint assembles `Σ_k λ_{ℓ,k} f_k f_k*` as a circulant from one
//! inverse FFT. [`DenseOperator`] stores the sampling vectors explicitly
//! and is used for the Gaussian baseline and as an oracle.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::analysis::snr_db_values;
use crate::error::{Error, Result};
use crate::hermitian::HermitianMatrix;
use crate::masks::MaskEnsemble;
use crate::rng::{rng_from_seed, Rng};
use crate::signals::SignalVector;

/// Imaginary residue (relative to `‖X‖_F`) above which the input to
/// [`MeasurementMap::apply_checked`] is rejected as non-Hermitian.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Largest `n` for which [`DenseOperator::from_ensemble`] builds explicit vectors.
pub const DENSE_MAX_N: usize = 64;

/// A linear map from `n × n` Hermitian matrices to `R^m` together with its adjoint.
pub trait MeasurementMap: Send + Sync {
    fn dim(&self) -> usize;

    fn num_measurements(&self) -> usize;

    /// Complex values `A(X)`; imaginary parts vanish for Hermitian input.
    fn apply_complex(&self, x: &DMatrix<Complex64>) -> Vec<Complex64>;

    fn adjoint(&self, lambda: &[f64]) -> HermitianMatrix;

    fn apply(&self, x: &HermitianMatrix) -> Vec<f64> {
        self.apply_complex(x.as_matrix()).iter().map(|z| z.re).collect()
    }

    /// Apply to a general square matrix, rejecting it when the imaginary
    /// residue of the output exceeds `1e-9 · ‖X‖_F`.
    fn apply_checked(&self, x: &DMatrix<Complex64>) -> Result<Vec<f64>> {
        if x.nrows() != self.dim() || x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.nrows(),
            });
        }
        let vals = self.apply_complex(x);
        let residue = vals.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let tolerance = IMAG_RESIDUE_TOL * x.norm();
        if residue > tolerance {
            return Err(Error::NotHermitian { residue, tolerance });
        }
        Ok(vals.iter().map(|z| z.re).collect())
    }

    /// `A(v v*)`, i.e. `|a_j* v|²`.
    fn apply_rank_one(&self, v: &[Complex64]) -> Vec<f64> {
        self.apply(&HermitianMatrix::outer(v))
    }

    /// `A*(A(X))`.
    fn normal(&self, x: &HermitianMatrix) -> HermitianMatrix {
        self.adjoint(&self.apply(x))
    }
}

/// Matrix-free CDP operator for a fixed mask ensemble.
#[derive(Clone)]
pub struct LiftedOperator {
    ensemble: Arc<MaskEnsemble>,
    conj_patterns: Vec<Vec<Complex64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LiftedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiftedOperator")
            .field("n", &self.dim())
            .field("L", &self.ensemble.num_patterns())
            .finish()
    }
}

impl LiftedOperator {
    pub fn new(ensemble: Arc<MaskEnsemble>) -> Self {
        let n = ensemble.n();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let conj_patterns = ensemble
            .patterns
            .iter()
            .map(|p| p.iter().map(|d| d.conj()).collect())
            .collect();
        Self {
            ensemble,
            conj_patterns,
            forward,
            inverse,
        }
    }

    pub fn ensemble(&self) -> &Arc<MaskEnsemble> {
        &self.ensemble
    }

    pub fn num_patterns(&self) -> usize {
        self.ensemble.num_patterns()
    }

    /// `f_k* D_ℓ* v` for all `k` of one pattern.
    pub fn modulated_dft(&self, ell: usize, v: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = self.conj_patterns[ell].iter().zip(v).map(|(d, x)| d * x).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// `Σ_k w_k D_ℓ f_k f_k* D_ℓ*` accumulated into `out` (not symmetrized).
    pub(crate) fn accumulate_adjoint_block(&self, ell: usize, weights: &[Complex64], out: &mut DMatrix<Complex64>) {
        let n = self.dim();
        // g[δ] = Σ_k w_k exp(2πi k δ / n)
        let mut g = weights.to_vec();
        self.inverse.process(&mut g);
        let d = &self.ensemble.patterns[ell];
        let dc = &self.conj_patterns[ell];
        for t in 0..n {
            let mut col = out.column_mut(t);
            for s in 0..n {
                let delta = if s >= t { s - t } else { s + n - t };
                col[s] += d[s] * dc[t] * g[delta];
            }
        }
    }

    /// Adjoint for complex weights; Hermitian only when the weights are real.
    pub(crate) fn adjoint_complex(&self, weights: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.dim();
        assert_eq!(weights.len(), self.num_measurements(), "adjoint weight length");
        let mut out = DMatrix::zeros(n, n);
        for ell in 0..self.num_patterns() {
            self.accumulate_adjoint_block(ell, &weights[ell * n..(ell + 1) * n], &mut out);
        }
        out
    }
}

impl MeasurementMap for LiftedOperator {
    fn dim(&self) -> usize {
        self.ensemble.n()
    }

    fn num_measurements(&self) -> usize {
        self.ensemble.n() * self.ensemble.num_patterns()
    }

    fn apply_complex(&self, x: &DMatrix<Complex64>) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(x.nrows(), n, "operator dimension");
        let mut out = Vec::with_capacity(self.num_measurements());
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        for (d, dc) in self.ensemble.patterns.iter().zip(&self.conj_patterns) {
            c.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            // c[δ] = Σ_t conj(d[t+δ]) X[t+δ, t] d[t]
            for t in 0..n {
                let col = x.column(t);
                let dt = d[t];
                for s in 0..n {
                    let delta = if s >= t { s - t } else { s + n - t };
                    c[delta] += dc[s] * col[s] * dt;
                }
            }
            self.forward.process(&mut c);
            out.extend_from_slice(&c);
        }
        out
    }

    fn adjoint(&self, lambda: &[f64]) -> HermitianMatrix {
        let w: Vec<Complex64> = lambda.iter().map(|&l| Complex64::new(l, 0.0)).collect();
        HermitianMatrix::symmetrized(self.adjoint_complex(&w))
    }

    fn apply_rank_one(&self, v: &[Complex64]) -> Vec<f64> {
        (0..self.num_patterns())
            .flat_map(|ell| self.modulated_dft(ell, v).into_iter().map(|z| z.norm_sqr()))
            .collect()
    }
}

/// Operator stored as explicit sampling vectors `a_j`:
/// `A(X)_j = a_j* X a_j`, `A*(λ) = Σ_j λ_j a_j a_j*`.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    n: usize,
    vectors: Vec<Vec<Complex64>>,
}

impl DenseOperator {
    pub fn new(vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        let n = vectors.first().map(Vec::len).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid("dense operator needs non-empty sampling vectors"));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        Ok(Self { n, vectors })
    }

    /// Explicit vectors `a_{ℓ,k} = D_ℓ f_k` in `(ℓ, k)` order.
    pub fn from_ensemble(ens: &MaskEnsemble) -> Result<Self> {
        let n = ens.n();
        if n > DENSE_MAX_N {
            return Err(Error::invalid(format!(
                "dense CDP operator limited to n ≤ {DENSE_MAX_N}, got {n}"
            )));
        }
        let mut vectors = Vec::with_capacity(n * ens.num_patterns());
        for d in &ens.patterns {
            for k in 0..n {
                vectors.push(
                    (0..n)
                        .map(|t| {
                            let phase = 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                            d[t] * Complex64::from_polar(1.0, phase)
                        })
                        .collect(),
                );
            }
        }
        Self::new(vectors)
    }

    /// `m` i.i.d. complex Gaussian vectors with standard normal real and imaginary parts.
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("need at least one Gaussian measurement"));
        }
        let mut rng = rng_from_seed(seed);
        let vectors = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(re, im)
                    })
                    .collect()
            })
            .collect();
        Self::new(vectors)
    }

    pub fn vectors(&self) -> &[Vec<Complex64>] {
        &self.vectors
    }
}

impl MeasurementMap for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn num_measurements(&self) -> usize {
        self.vectors.len()
    }

    fn apply_complex(&self, x: &DMatrix<Complex64>) -> Vec<Complex64> {
        self.vectors
            .iter()
            .map(|a| {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..self.n {
                    let col = x.column(j);
                    let xa: Complex64 = (0..self.n).map(|i| a[i].conj() * col[i]).sum();
                    acc += xa * a[j];
                }
                acc
            })
            .collect()
    }

    fn adjoint(&self, lambda: &[f64]) -> HermitianMatrix {
        assert_eq!(lambda.len(), self.vectors.len(), "adjoint weight length");
        let mut out = DMatrix::zeros(self.n, self.n);
        for (a, &l) in self.vectors.iter().zip(lambda) {
            for j in 0..self.n {
                let aj = a[j].conj() * l;
                let mut col = out.column_mut(j);
                for i in 0..self.n {
                    col[i] += a[i] * aj;
                }
            }
        }
        HermitianMatrix::symmetrized(out)
    }

    fn apply_rank_one(&self, v: &[Complex64]) -> Vec<f64> {
        self.vectors
            .iter()
            .map(|a| a.iter().zip(v).map(|(ai, vi)| ai.conj() * vi).sum::<Complex64>().norm_sqr())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Counts drawn as `Poisson(scale · μ)` and divided by `scale`.
    Poisson { scale: f64 },
}

/// `L` rows of `n` nonnegative intensities, indexed by `(ℓ, k)`.
#[derive(Clone, Debug)]
pub struct MeasurementSet {
    pub n: usize,
    pub rows: usize,
    pub values: Vec<f64>,
    pub noise: NoiseModel,
    pub seed: Option<u64>,
    pub realized_snr_db: Option<f64>,
    pub ensemble: Option<Arc<MaskEnsemble>>,
}

/// Header record written ahead of the `(ell, k, value)` CSV rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementHeader {
    pub n: usize,
    #[serde(rename = "L")]
    pub rows: usize,
    pub noise: NoiseModel,
    pub seed: Option<u64>,
    pub realized_snr_db: Option<f64>,
}

impl MeasurementSet {
    pub fn new(n: usize, rows: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * rows {
            return Err(Error::DimensionMismatch {
                expected: n * rows,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("measurements must be finite and nonnegative"));
        }
        Ok(Self {
            n,
            rows,
            values,
            noise: NoiseModel::None,
            seed: None,
            realized_snr_db: None,
            ensemble: None,
        })
    }

    pub fn get(&self, ell: usize, k: usize) -> f64 {
        self.values[ell * self.n + k]
    }

    pub fn row(&self, ell: usize) -> &[f64] {
        &self.values[ell * self.n..(ell + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn header(&self) -> MeasurementHeader {
        MeasurementHeader {
            n: self.n,
            rows: self.rows,
            noise: self.noise,
            seed: self.seed,
            realized_snr_db: self.realized_snr_db,
        }
    }

    /// CSV with a `# {json header}` first line and `ell,k,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", serde_json::to_string(&self.header())?)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["ell", "k", "value"])?;
        for ell in 0..self.rows {
            for k in 0..self.n {
                csv.write_record([ell.to_string(), k.to_string(), format!("{:e}", self.get(ell, k))])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(File::create(path)?))
    }

    pub fn read_csv<R: BufRead>(mut r: R) -> Result<Self> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let json = first
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::invalid("measurement CSV must start with a '# {json}' header"))?;
        let header: MeasurementHeader = serde_json::from_str(json.trim())?;
        let mut values = vec![f64::NAN; header.n * header.rows];
        let mut rdr = csv::Reader::from_reader(r);
        for rec in rdr.deserialize::<(usize, usize, f64)>() {
            let (ell, k, v) = rec?;
            if ell >= header.rows || k >= header.n {
                return Err(Error::invalid(format!("index ({ell}, {k}) out of range")));
            }
            values[ell * header.n + k] = v;
        }
        let mut set = MeasurementSet::new(header.n, header.rows, values)?;
        set.noise = header.noise;
        set.seed = header.seed;
        set.realized_snr_db = header.realized_snr_db;
        Ok(set)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

/// Noiseless CDP intensities `|DFT_k(conj(d_ℓ) ⊙ x)|²`.
pub fn forward_cdp(x: &SignalVector, ens: &Arc<MaskEnsemble>) -> Result<MeasurementSet> {
    if x.len() != ens.n() {
        return Err(Error::DimensionMismatch {
            expected: ens.n(),
            got: x.len(),
        });
    }
    let op = LiftedOperator::new(ens.clone());
    let mut set = MeasurementSet::new(ens.n(), ens.num_patterns(), op.apply_rank_one(x.as_slice()))?;
    set.ensemble = Some(ens.clone());
    Ok(set)
}

/// Gaussian baseline: `m` measurements `|a_j* x|²` and the dense operator that produced them.
pub fn forward_gaussian(x: &SignalVector, m: usize, seed: u64) -> Result<(MeasurementSet, DenseOperator)> {
    let op = DenseOperator::gaussian(x.len(), m, seed)?;
    let mut set = MeasurementSet::new(m, 1, op.apply_rank_one(x.as_slice()))?;
    set.seed = Some(seed);
    Ok((set, op))
}

/// Draw `Poisson(scale · μ_j) / scale` for every entry.
pub fn poisson_sample(mu: &[f64], scale: f64, rng: &mut Rng) -> Vec<f64> {
    mu.iter()
        .map(|&m| {
            let rate = scale * m;
            if rate <= 0.0 {
                0.0
            } else if rate < 1e12 {
                Poisson::new(rate).expect("positive finite rate").sample(rng) / scale
            } else {
                // Normal limit; rand_distr's Poisson is not meant for such rates.
                let z: f64 = Normal::new(rate, rate.sqrt()).expect("valid normal").sample(rng);
                z.max(0.0) / scale
            }
        })
        .collect()
}

const SNR_TOL_DB: f64 = 0.5;
const SNR_MAX_ATTEMPTS: usize = 200;

/// Replace noiseless data `y` by Poisson counts rescaled to the data units,
/// with the count scale chosen so the realized SNR
/// `20 log10(‖μ‖ / ‖b − μ‖)` is within 0.5 dB of `target_snr_db`.
///
/// The initial scale comes from `E‖b − μ‖² = Σ μ / s`; each rejected draw
/// corrects it by the squared ratio of target to realized SNR.
pub fn add_poisson_noise(y: &MeasurementSet, target_snr_db: f64, seed: u64) -> Result<MeasurementSet> {
    if y.noise != NoiseModel::None {
        return Err(Error::invalid("Poisson noise must be added to noiseless data"));
    }
    if !target_snr_db.is_finite() {
        return Err(Error::invalid("target SNR must be finite"));
    }
    let mu = &y.values;
    let total: f64 = mu.iter().sum();
    let norm_sq: f64 = mu.iter().map(|m| m * m).sum();
    if !(total > 0.0) {
        return Err(Error::UnreachableSnr("all noiseless intensities are zero".into()));
    }
    let target_ratio = 10f64.powf(target_snr_db / 20.0);
    let mut scale = target_ratio * target_ratio * total / norm_sq;
    let mut rng = rng_from_seed(seed);
    for _ in 0..SNR_MAX_ATTEMPTS {
        let b = poisson_sample(mu, scale, &mut rng);
        let realized = snr_db_values(mu, &b);
        if (realized - target_snr_db).abs() <= SNR_TOL_DB {
            let mut out = MeasurementSet::new(y.n, y.rows, b)?;
            out.noise = NoiseModel::Poisson { scale };
            out.seed = Some(seed);
            out.realized_snr_db = Some(realized);
            out.ensemble = y.ensemble.clone();
            return Ok(out);
        }
        if realized.is_finite() {
            scale *= 10f64.powf((target_snr_db - realized) / 10.0);
        } else {
            scale *= 0.5;
        }
        if !(scale.is_finite() && scale > 0.0) {
            break;
        }
    }
    Err(Error::UnreachableSnr(format!(
        "could not reach {target_snr_db} dB within {SNR_TOL_DB} dB"
    )))
}
