use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use phaselift::analysis::{rel_error_lifted, rel_mse_lifted, to_db};
use phaselift::harness::{run_noise_sweep, run_phase_transition, write_outputs, ExperimentKind, ExperimentSpec};
use phaselift::masks::{normalize_distribution, sample_ensemble, MaskDistribution, MaskEnsemble};
use phaselift::measurement::{add_poisson_noise, forward_cdp, LiftedOperator, MeasurementSet};
use phaselift::rng::{derive_seed, rng_from_seed, substream};
use phaselift::signals::{generate, normalize, SignalModel, SignalVector};
use phaselift::solver::{extract_rank1, solve, Loss, SolverConfig};
use phaselift::theory::{
    build_golfing_certificate, check_l1_bound, injectivity_spectrum, sample_batches, truncation_threshold, TangentSpace,
    verify_a1_concentration, verify_expectation_lemma1, verify_expectation_lemma2, VerifyMode, DEFAULT_BETA,
};
use phaselift::{Complex64, Error, HermitianMatrix};

#[derive(Parser)]
#[command(name = "phaselift", version, about = "Phase retrieval from coded diffraction patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Octanary,
    TernaryPlain,
    BinaryPlain,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Gaussian,
    LowPass,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ls,
    Poisson,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LemmaArg {
    Expectation1,
    Expectation2,
    A1Concentration,
    L1Bound,
    Injectivity,
    Golfing,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Mc,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a signal and masks and write the (optionally noisy) intensities.
    Simulate {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long = "L", default_value_t = 8)]
        l: usize,
        #[arg(long, value_enum, default_value = "octanary")]
        mask: MaskArg,
        #[arg(long, value_enum, default_value = "gaussian")]
        signal: SignalArg,
        /// Target SNR in dB for Poisson noise; noiseless when omitted.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Recover the lifted signal from written intensities.
    Solve {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// Solver settings as JSON (fields of the solver config).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Ground-truth signal JSON for error reporting.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
    },
    /// Success rate of noiseless recovery over a grid of L.
    PhaseTransition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative MSE under Poisson noise over a grid of SNR.
    NoiseSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the numerical theory checks and print a JSON report.
    VerifyTheory {
        #[arg(long, value_enum)]
        lemma: LemmaArg,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum, default_value = "exact")]
        mode: ModeArg,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        trials: Option<usize>,
        /// Patterns per ensemble (per batch for golfing).
        #[arg(long = "L")]
        l: Option<usize>,
        #[arg(long, default_value_t = 6)]
        batches: usize,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config_err(e: impl std::fmt::Display, path: &Path) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load_spec(path: &Path, kind: ExperimentKind, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| config_err(e, path))?;
    let mut spec = ExperimentSpec::from_json(&text).map_err(|e| config_err(e, path))?;
    if spec.kind != kind {
        return Err(config_err(format!("expected kind {kind:?}, found {:?}", spec.kind), path));
    }
    if let Some(s) = seed {
        spec.master_seed = s;
    }
    if out.is_some() {
        spec.output = out;
    }
    Ok(spec)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(Error::from)?;
            }
            fs::write(p, text).map_err(Error::from)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn mask_distribution(mask: MaskArg) -> (MaskDistribution, bool) {
    match mask {
        MaskArg::Octanary => (MaskDistribution::octanary(), false),
        MaskArg::TernaryPlain => (MaskDistribution::ternary(), true),
        MaskArg::BinaryPlain => (MaskDistribution::binary(), true),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(n: usize, l: usize, mask: MaskArg, signal: SignalArg, snr: Option<f64>, seed: u64, out: &Path) -> CliResult<()> {
    let model = match signal {
        SignalArg::Gaussian => SignalModel::Gaussian,
        SignalArg::LowPass => SignalModel::LowPass,
    };
    let x = generate(model, n, substream(seed, 0))?;
    let (dist, plain) = mask_distribution(mask);
    let ens = Arc::new(sample_ensemble(&dist, n, l, plain, substream(seed, 1))?);
    let mut y = forward_cdp(&x, &ens)?;
    if let Some(snr) = snr {
        y = add_poisson_noise(&y, snr, substream(seed, 2))?;
    }
    fs::create_dir_all(out).map_err(Error::from)?;
    y.save_csv(&out.join("measurements.csv"))?;
    write_json(&x, Some(&out.join("signal.json")))?;
    write_json(ens.as_ref(), Some(&out.join("masks.json")))?;
    eprintln!("wrote {} measurements to {}", y.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn solve_cmd(
    measurements: &Path,
    masks: &Path,
    config: Option<&Path>,
    loss: Option<LossArg>,
    lambda: Option<f64>,
    truth: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let y = MeasurementSet::load_csv(measurements).map_err(|e| config_err(e, measurements))?;
    let ens_text = fs::read_to_string(masks).map_err(|e| config_err(e, masks))?;
    let ens: MaskEnsemble = serde_json::from_str(&ens_text).map_err(|e| config_err(e, masks))?;
    if ens.n() != y.n || ens.num_patterns() != y.rows {
        return Err(Failure::Config("measurements and masks disagree in shape".into()));
    }
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_err(e, p))?;
            serde_json::from_str::<SolverConfig>(&text).map_err(|e| config_err(e, p))?
        }
        None => match (loss, y.realized_snr_db) {
            (Some(LossArg::Poisson), Some(snr)) | (None, Some(snr)) => SolverConfig::poisson(snr),
            (Some(LossArg::Poisson), None) => SolverConfig::poisson(40.0),
            _ => SolverConfig::noiseless(),
        },
    };
    if let Some(LossArg::Ls) = loss {
        cfg.loss = Loss::SquaredL2;
    }
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    cfg.validate()?;
    let op = LiftedOperator::new(Arc::new(ens));
    let report = solve(&op, &y.values, &cfg)?;
    let (x_vec, rank1_residual) = extract_rank1(&report.x_hat)?;
    let mut result = json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "final_objective": report.final_objective(),
        "rank1_residual": rank1_residual,
        "x_hat": report.x_hat,
        "x": x_vec.entries,
        "objective_trace": report.downsampled(200).objective_trace,
    });
    if let Some(p) = truth {
        let text = fs::read_to_string(p).map_err(|e| config_err(e, p))?;
        let x: SignalVector = serde_json::from_str(&text).map_err(|e| config_err(e, p))?;
        result["rel_err"] = json!(rel_error_lifted(&report.x_hat, x.as_slice())?);
        result["rel_mse_db"] = json!(rel_mse_lifted(&report.x_hat, x.as_slice()).map(to_db).ok());
    }
    write_json(&result, Some(out))?;
    eprintln!("{} iterations, converged: {}", report.iterations, report.converged);
    Ok(())
}

fn run_experiment_cmd(path: &Path, kind: ExperimentKind, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let spec = load_spec(path, kind, seed, out)?;
    let record = match kind {
        ExperimentKind::NoiseSweep => run_noise_sweep(&spec)?,
        _ => run_phase_transition(&spec)?,
    };
    let dir = spec.output.clone().unwrap_or_else(|| PathBuf::from("results"));
    for f in write_outputs(&record, &dir)? {
        eprintln!("wrote {}", f.display());
    }
    for a in &record.aggregates {
        eprintln!(
            "param {:>6}: success {:.2}, mean rel-MSE {:.2} dB",
            a.param, a.success_rate, a.mean_rel_mse_db
        );
    }
    if let Some(fit) = record.fit {
        eprintln!("slope {:.3}, intercept {:.3}, r² {:.3}", fit.slope, fit.intercept, fit.r2);
    }
    Ok(())
}

fn unit_signal(n: usize, seed: u64) -> CliResult<Vec<Complex64>> {
    Ok(normalize(&generate(SignalModel::Gaussian, n, seed)?)?.entries)
}

fn random_psd(n: usize, rng: &mut phaselift::rng::Rng) -> HermitianMatrix {
    use rand::Rng as _;
    let rank = rng.random_range(1..=n);
    let mut x = HermitianMatrix::zeros(n);
    for _ in 0..rank {
        let seed: u64 = rng.random();
        if let Ok(v) = generate(SignalModel::Gaussian, n, seed) {
            x += &HermitianMatrix::outer(v.as_slice()).scale(rng.random::<f64>());
        }
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn verify_theory(
    lemma: LemmaArg,
    n: Option<usize>,
    mode: ModeArg,
    samples: usize,
    trials: Option<usize>,
    l: Option<usize>,
    batches: usize,
    beta: f64,
    delta: f64,
    seed: u64,
) -> CliResult<serde_json::Value> {
    let oct = normalize_distribution(&MaskDistribution::octanary())?;
    let report = match lemma {
        LemmaArg::Expectation1 | LemmaArg::Expectation2 => {
            let n = n.unwrap_or(2);
            let x = unit_signal(n, seed)?;
            let (mode, tolerance) = match mode {
                ModeArg::Exact => (VerifyMode::Exact, 1e-12),
                ModeArg::Mc => (VerifyMode::MonteCarlo { samples, seed }, 0.1),
            };
            let r = if lemma == LemmaArg::Expectation1 {
                verify_expectation_lemma1(&oct, n, mode, &x)?
            } else {
                verify_expectation_lemma2(&oct, n, mode, &x)?
            };
            json!({ "report": r, "tolerance": tolerance, "passed": r.deviation < tolerance })
        }
        LemmaArg::A1Concentration => {
            let n = n.unwrap_or(16);
            let base = l.unwrap_or(64);
            let l_list = [base, 4 * base, 16 * base];
            let rows = verify_a1_concentration(&oct, n, &l_list, trials.unwrap_or(100), seed)?;
            let decreasing = rows.windows(2).all(|w| w[1].median < w[0].median);
            let summary: Vec<_> = rows
                .iter()
                .map(|r| json!({ "L": r.l, "trials": r.trials, "max": r.max, "mean": r.mean, "median": r.median }))
                .collect();
            json!({ "n": n, "rows": summary, "passed": decreasing })
        }
        LemmaArg::L1Bound => {
            let n = n.unwrap_or(8);
            let trials = trials.unwrap_or(1000);
            let l = l.unwrap_or(4);
            let models = [
                (MaskDistribution::octanary(), false),
                (MaskDistribution::ternary(), true),
                (MaskDistribution::binary(), true),
                (MaskDistribution::uniform(), false),
            ];
            let mut rng = rng_from_seed(seed);
            let mut violations = 0;
            let mut worst_ratio: f64 = 0.0;
            for t in 0..trials {
                let (dist, plain) = &models[t % models.len()];
                let ens = sample_ensemble(dist, n, l, *plain, derive_seed(seed, 0, t as u64))?;
                let op = LiftedOperator::new(Arc::new(ens));
                let r = check_l1_bound(&op, &random_psd(n, &mut rng))?;
                if !r.ok {
                    violations += 1;
                }
                if r.rhs > 0.0 {
                    worst_ratio = worst_ratio.max(r.lhs / r.rhs);
                }
            }
            json!({ "n": n, "trials": trials, "violations": violations, "max_lhs_over_rhs": worst_ratio, "passed": violations == 0 })
        }
        LemmaArg::Injectivity => {
            let n = n.unwrap_or(16);
            let l = l.unwrap_or(64);
            let trials = trials.unwrap_or(50);
            let t = truncation_threshold(n, beta);
            let mut mins = Vec::with_capacity(trials);
            for i in 0..trials {
                let x = unit_signal(n, derive_seed(seed, 0, i as u64))?;
                let ens = Arc::new(sample_ensemble(&oct, n, l, false, derive_seed(seed, 1, i as u64))?);
                mins.push(injectivity_spectrum(&x, &ens, Some(t))?.restricted_min);
            }
            let frac = mins.iter().filter(|&&m| m >= 0.25).count() as f64 / trials as f64;
            json!({ "n": n, "L": l, "threshold": t, "restricted_min": mins, "fraction_at_least_0.25": frac, "passed": frac >= 0.9 })
        }
        LemmaArg::Golfing => {
            let n = n.unwrap_or(16);
            let lb = l.unwrap_or(2048);
            let runs = trials.unwrap_or(20);
            let mut out = Vec::with_capacity(runs);
            let mut good = 0;
            let mut identity_ok = true;
            for i in 0..runs {
                let x = unit_signal(n, derive_seed(seed, 0, i as u64))?;
                let bs = sample_batches(&oct, n, &vec![lb; batches + 1], derive_seed(seed, 1, i as u64))?;
                let r = build_golfing_certificate(&x, &bs, beta, delta)?;
                let ratios = r.contraction_ratios();
                let contracted = ratios.iter().all(|&q| q <= 0.5);
                if contracted && r.validation.cond1 {
                    good += 1;
                }
                let ts = TangentSpace::new(&x)?;
                identity_ok &= (&ts.project_t(&r.z) + &r.x_final).frobenius_norm() <= 1e-8;
                out.push(json!({
                    "x_frob": r.x_frob,
                    "contraction": ratios,
                    "validation": r.validation,
                }));
            }
            let frac = good as f64 / runs as f64;
            json!({
                "n": n, "L_b": lb, "B": batches, "beta": beta, "delta": delta,
                "runs": out, "fraction_passing": frac, "identity_ok": identity_ok,
                "passed": frac >= 0.8 && identity_ok,
            })
        }
    };
    Ok(report)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { n, l, mask, signal, snr, seed, out } => simulate(n, l, mask, signal, snr, seed, &out),
        Command::Solve { measurements, masks, config, loss, lambda, truth, out } => {
            solve_cmd(&measurements, &masks, config.as_deref(), loss, lambda, truth.as_deref(), &out)
        }
        Command::PhaseTransition { config, seed, out } => {
            run_experiment_cmd(&config, ExperimentKind::PhaseTransition, seed, out)
        }
        Command::NoiseSweep { config, seed, out } => run_experiment_cmd(&config, ExperimentKind::NoiseSweep, seed, out),
        Command::VerifyTheory { lemma, n, mode, samples, trials, l, batches, beta, delta, seed, out } => {
            let report = verify_theory(lemma, n, mode, samples, trials, l, batches, beta, delta, seed)?;
            write_json(&report, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
