//! Phase-transition and noise-sweep experiments.
//!
//! An [`ExperimentSpec`] (read from JSON) fixes every parameter and a master
//! seed; the seed of each trial is derived from `(master_seed, grid index,
//! trial)` and split into independent signal, mask and noise streams.
//! Trials run on a rayon pool whose size is taken from `PHASELIFT_WORKERS`
//! (default: all cores) and are collected in grid order, so output files do
//! not depend on scheduling.
//!
//! Output files, written into `ExperimentSpec::output`:
//!
//! * `trials.csv`: `trial,seed,param,rel_err,rel_mse_db,iters,ms`, one row
//!   per trial. `param` is `L` or the target SNR in dB; `ms` is empty unless
//!   `record_wall_time` is set.
//! * `aggregate.csv`: `param,trials,successes,success_rate,mean_rel_mse_db,mean_iters`.
//! * `summary.json`: the `ExperimentSpec`, the aggregates and, for noise sweeps, the
//!   least-squares line through `(param, rel_mse_db)`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{rel_error_lifted, rel_mse_lifted, to_db};
use crate::error::{Error, Result};
use crate::masks::{sample_ensemble, MaskDistribution};
use crate::measurement::{add_poisson_noise, forward_cdp, DenseOperator, LiftedOperator, MeasurementMap};
use crate::rng::{derive_seed, substream};
use crate::signals::{generate, SignalModel};
use crate::solver::{solve, SolverConfig};

/// Recovery counts as exact below this relative error.
pub const SUCCESS_THRESHOLD: f64 = 1e-5;

pub const WORKERS_ENV: &str = "PHASELIFT_WORKERS";

const SIGNAL_STREAM: u64 = 0;
const MASK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PhaseTransition,
    NoiseSweep,
    VerifyTheory,
    SingleSolve,
}

/// How the `L` measurement blocks of a trial are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementModel {
    /// `L` octanary masks.
    Octanary,
    /// The plain pattern plus `L − 1` ternary masks.
    TernaryPlain,
    /// The plain pattern plus `L − 1` binary masks.
    BinaryPlain,
    /// `L · n` complex Gaussian sampling vectors.
    Gaussian,
}

impl MeasurementModel {
    fn cdp(self) -> Option<(MaskDistribution, bool)> {
        match self {
            MeasurementModel::Octanary => Some((MaskDistribution::octanary(), false)),
            MeasurementModel::TernaryPlain => Some((MaskDistribution::ternary(), true)),
            MeasurementModel::BinaryPlain => Some((MaskDistribution::binary(), true)),
            MeasurementModel::Gaussian => None,
        }
    }
}

fn default_signal() -> SignalModel {
    SignalModel::Gaussian
}

fn default_measurement() -> MeasurementModel {
    MeasurementModel::Octanary
}

fn default_noise_patterns() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n: usize,
    #[serde(default, rename = "L_list")]
    pub l_list: Vec<usize>,
    /// Target SNRs in dB.
    #[serde(default)]
    pub snr_list: Vec<f64>,
    #[serde(default = "default_signal")]
    pub signal: SignalModel,
    #[serde(default = "default_measurement")]
    pub measurement: MeasurementModel,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Solver settings. Phase transitions default to least squares with
    /// `λ = 10⁻³`; noise sweeps use these settings as a base and always set
    /// `λ = 1/SNR`.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    /// Number of masks per noise-sweep trial.
    #[serde(default = "default_noise_patterns")]
    pub noise_patterns: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fill the `ms` column. Off by default so repeated runs are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::invalid("n must be at least 2"));
        }
        if self.signal == SignalModel::Custom {
            return Err(Error::invalid("experiments need a generated signal model"));
        }
        if self.signal == SignalModel::LowPass && self.n % 8 != 0 {
            return Err(Error::invalid("low-pass signals need n divisible by 8"));
        }
        match self.kind {
            ExperimentKind::PhaseTransition | ExperimentKind::SingleSolve => {
                if self.l_list.is_empty() || self.l_list.contains(&0) {
                    return Err(Error::invalid("L_list must be non-empty with positive entries"));
                }
                if !strictly_increasing(&self.l_list) {
                    return Err(Error::invalid("L_list must be sorted increasing"));
                }
            }
            ExperimentKind::NoiseSweep => {
                if self.snr_list.is_empty() || self.snr_list.iter().any(|s| !s.is_finite()) {
                    return Err(Error::invalid("snr_list must be non-empty and finite"));
                }
                if !strictly_increasing(&self.snr_list) {
                    return Err(Error::invalid("snr_list must be sorted increasing"));
                }
                if self.measurement == MeasurementModel::Gaussian {
                    return Err(Error::invalid("noise sweeps use coded diffraction patterns"));
                }
                if self.noise_patterns == 0 {
                    return Err(Error::invalid("noise_patterns must be at least 1"));
                }
            }
            ExperimentKind::VerifyTheory => {}
        }
        if let Some(cfg) = &self.solver {
            cfg.validate()?;
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        match self.kind {
            ExperimentKind::NoiseSweep => self.snr_list.clone(),
            _ => self.l_list.iter().map(|&l| l as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub param: f64,
    pub rel_err: f64,
    pub rel_mse_db: f64,
    pub iters: usize,
    pub ms: Option<f64>,
    pub converged: bool,
    pub realized_snr_db: Option<f64>,
}

impl TrialRecord {
    pub fn success(&self) -> bool {
        self.rel_err < SUCCESS_THRESHOLD
    }
}

#[derive(Serialize)]
struct CsvRow {
    trial: usize,
    seed: u64,
    param: f64,
    rel_err: f64,
    rel_mse_db: f64,
    iters: usize,
    ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub param: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_rel_mse_db: f64,
    pub mean_iters: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub spec: ExperimentSpec,
    pub trials: Vec<TrialRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub fit: Option<LineFit>,
}

impl ExperimentRecord {
    pub fn success_rates(&self) -> Vec<f64> {
        self.aggregates.iter().map(|a| a.success_rate).collect()
    }
}

/// Ordinary least squares `y ≈ slope · x + intercept`.
pub fn fit_line_db(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("fit points must be finite"));
    }
    let m = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("x values must not all coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LineFit { slope, intercept, r2 })
}

pub fn aggregate(grid: &[f64], trials: &[TrialRecord]) -> Vec<AggregateRow> {
    grid.iter()
        .enumerate()
        .map(|(gi, &param)| {
            let rows: Vec<&TrialRecord> = trials.iter().filter(|t| t.grid_index == gi).collect();
            let count = rows.len();
            let successes = rows.iter().filter(|t| t.success()).count();
            let finite: Vec<f64> = rows.iter().map(|t| t.rel_mse_db).filter(|v| v.is_finite()).collect();
            AggregateRow {
                param,
                trials: count,
                successes,
                success_rate: successes as f64 / count.max(1) as f64,
                mean_rel_mse_db: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
                mean_iters: rows.iter().map(|t| t.iters as f64).sum::<f64>() / count.max(1) as f64,
            }
        })
        .collect()
}

/// Worker count from `PHASELIFT_WORKERS`, falling back to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn run_grid<F>(spec: &ExperimentSpec, job: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(usize, usize, u64) -> Result<TrialRecord> + Sync,
{
    let grid_len = spec.grid().len();
    let jobs: Vec<(usize, usize)> = (0..grid_len)
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(g, t)| job(g, t, derive_seed(spec.master_seed, g as u64, t as u64)))
            .collect()
    })
}

fn metrics(x_hat: &crate::HermitianMatrix, x: &[crate::Complex64]) -> Result<(f64, f64)> {
    let rel_err = rel_error_lifted(x_hat, x)?;
    let rel_mse_db = rel_mse_lifted(x_hat, x).map(to_db).unwrap_or(f64::NAN);
    Ok((rel_err, rel_mse_db))
}

fn phase_transition_trial(spec: &ExperimentSpec, cfg: &SolverConfig, g: usize, t: usize, seed: u64) -> Result<TrialRecord> {
    let start = Instant::now();
    let l = spec.l_list[g];
    let x = generate(spec.signal, spec.n, substream(seed, SIGNAL_STREAM))?;
    let op: Box<dyn MeasurementMap> = match spec.measurement.cdp() {
        Some((dist, plain)) => Box::new(LiftedOperator::new(Arc::new(sample_ensemble(
            &dist,
            spec.n,
            l,
            plain,
            substream(seed, MASK_STREAM),
        )?))),
        None => Box::new(DenseOperator::gaussian(spec.n, l * spec.n, substream(seed, MASK_STREAM))?),
    };
    let b = op.apply_rank_one(x.as_slice());
    let report = solve(op.as_ref(), &b, cfg)?;
    let (rel_err, rel_mse_db) = metrics(&report.x_hat, x.as_slice())?;
    Ok(TrialRecord {
        grid_index: g,
        trial: t,
        seed,
        param: l as f64,
        rel_err,
        rel_mse_db,
        iters: report.iterations,
        ms: spec.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
        converged: report.converged,
        realized_snr_db: None,
    })
}

/// Noiseless recovery over the `L` grid.
pub fn run_phase_transition(spec: &ExperimentSpec) -> Result<ExperimentRecord> {
    if !matches!(spec.kind, ExperimentKind::PhaseTransition | ExperimentKind::SingleSolve) {
        return Err(Error::invalid("spec kind is not phase_transition"));
    }
    spec.validate()?;
    let cfg = spec.solver.clone().unwrap_or_else(SolverConfig::noiseless);
    let trials = run_grid(spec, |g, t, seed| phase_transition_trial(spec, &cfg, g, t, seed))?;
    Ok(ExperimentRecord {
        aggregates: aggregate(&spec.grid(), &trials),
        spec: spec.clone(),
        trials,
        fit: None,
    })
}

fn noise_trial(spec: &ExperimentSpec, g: usize, t: usize, seed: u64) -> Result<TrialRecord> {
    let start = Instant::now();
    let snr = spec.snr_list[g];
    let (dist, plain) = spec
        .measurement
        .cdp()
        .ok_or_else(|| Error::invalid("noise sweeps use coded diffraction patterns"))?;
    let x = generate(spec.signal, spec.n, substream(seed, SIGNAL_STREAM))?;
    let ens = Arc::new(sample_ensemble(&dist, spec.n, spec.noise_patterns, plain, substream(seed, MASK_STREAM))?);
    let clean = forward_cdp(&x, &ens)?;
    let noisy = add_poisson_noise(&clean, snr, substream(seed, NOISE_STREAM))?;
    let base = spec.solver.clone().unwrap_or_else(|| SolverConfig::poisson(snr));
    let cfg = SolverConfig {
        lambda: SolverConfig::poisson(snr).lambda,
        ..base
    };
    let op = LiftedOperator::new(ens);
    let report = solve(&op, &noisy.values, &cfg)?;
    let (rel_err, rel_mse_db) = metrics(&report.x_hat, x.as_slice())?;
    Ok(TrialRecord {
        grid_index: g,
        trial: t,
        seed,
        param: snr,
        rel_err,
        rel_mse_db,
        iters: report.iterations,
        ms: spec.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
        converged: report.converged,
        realized_snr_db: noisy.realized_snr_db,
    })
}

/// Poisson-noise recovery over the SNR grid, with a line fitted to
/// relative MSE (dB) against SNR (dB).
pub fn run_noise_sweep(spec: &ExperimentSpec) -> Result<ExperimentRecord> {
    if spec.kind != ExperimentKind::NoiseSweep {
        return Err(Error::invalid("spec kind is not noise_sweep"));
    }
    spec.validate()?;
    let trials = run_grid(spec, |g, t, seed| noise_trial(spec, g, t, seed))?;
    let points: Vec<(f64, f64)> = trials
        .iter()
        .filter(|t| t.rel_mse_db.is_finite())
        .map(|t| (t.param, t.rel_mse_db))
        .collect();
    let fit = fit_line_db(&points).ok();
    Ok(ExperimentRecord {
        aggregates: aggregate(&spec.grid(), &trials),
        spec: spec.clone(),
        trials,
        fit,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentRecord> {
    match spec.kind {
        ExperimentKind::PhaseTransition | ExperimentKind::SingleSolve => run_phase_transition(spec),
        ExperimentKind::NoiseSweep => run_noise_sweep(spec),
        ExperimentKind::VerifyTheory => Err(Error::invalid("theory checks run through verify-theory")),
    }
}

pub fn write_trials_csv<W: Write>(record: &ExperimentRecord, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for t in &record.trials {
        wtr.serialize(CsvRow {
            trial: t.trial,
            seed: t.seed,
            param: t.param,
            rel_err: t.rel_err,
            rel_mse_db: t.rel_mse_db,
            iters: t.iters,
            ms: t.ms,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(record: &ExperimentRecord, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for a in &record.aggregates {
        wtr.serialize(a)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    spec: &'a ExperimentSpec,
    aggregates: &'a [AggregateRow],
    fit: Option<LineFit>,
}

/// Write `trials.csv`, `aggregate.csv` and `summary.json` into `dir`.
pub fn write_outputs(record: &ExperimentRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let trials = dir.join("trials.csv");
    let agg = dir.join("aggregate.csv");
    let summary = dir.join("summary.json");
    write_trials_csv(record, fs::File::create(&trials)?)?;
    write_aggregate_csv(record, fs::File::create(&agg)?)?;
    let s = Summary {
        spec: &record.spec,
        aggregates: &record.aggregates,
        fit: record.fit,
    };
    fs::write(&summary, serde_json::to_string_pretty(&s)? + "\n")?;
    Ok(vec![trials, agg, summary])
}
