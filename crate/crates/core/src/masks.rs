//! Random modulation patterns `d_ℓ[t]` and their distributions.
//!
//! A mask entry distribution is a finite list of complex atoms with
//! probabilities. Admissibility asks for a bounded symmetric law with
//! `E d = 0`, `E d² = 0` and `E|d|⁴ = 2 (E|d|²)²`; the fourth-moment
//! condition is checked in this scale-invariant form.

use std::fmt;

use num_complex::Complex64;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Octanary,
    Ternary,
    Binary,
    /// `d ≡ 1`, the plain diffraction pattern.
    Uniform,
    Custom,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaskKind::Octanary => "octanary",
            MaskKind::Ternary => "ternary",
            MaskKind::Binary => "binary",
            MaskKind::Uniform => "uniform",
            MaskKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: Complex64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskDistribution {
    pub kind: MaskKind,
    pub atoms: Vec<Atom>,
    pub bound_m: f64,
    pub normalized: bool,
}

impl MaskDistribution {
    /// Validate atoms and compute the bound `M = max |value|`.
    pub fn custom(atoms: Vec<(Complex64, f64)>) -> Result<Self> {
        Self::build(MaskKind::Custom, atoms)
    }

    fn build(kind: MaskKind, atoms: Vec<(Complex64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("mask distribution needs at least one atom"));
        }
        if atoms.iter().any(|(v, p)| !(*p >= 0.0) || !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("atoms need finite values and nonnegative probabilities"));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!("atom probabilities sum to {total}, not 1")));
        }
        let bound_m = atoms.iter().map(|(v, _)| v.norm()).fold(0.0, f64::max);
        let atoms: Vec<Atom> = atoms.into_iter().map(|(value, prob)| Atom { value, prob }).collect();
        let second = atoms.iter().map(|a| a.prob * a.value.norm_sqr()).sum::<f64>();
        Ok(Self {
            kind,
            atoms,
            bound_m,
            normalized: (second - 1.0).abs() <= PROB_TOL,
        })
    }

    /// `d = b₁ b₂` with `b₁` uniform on `{1, -1, -i, i}` and `b₂ ∈ {1, √6}`
    /// with probabilities `4/5, 1/5`.
    pub fn octanary() -> Self {
        let units = [
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
        ];
        let mut atoms = Vec::with_capacity(8);
        for (mag, p) in [(1.0, 0.8), (6f64.sqrt(), 0.2)] {
            for u in units {
                atoms.push((u * mag, 0.25 * p));
            }
        }
        Self::build(MaskKind::Octanary, atoms).expect("octanary atoms are valid")
    }

    /// `d ∈ {1, 0, -1}` with probabilities `1/4, 1/2, 1/4`.
    pub fn ternary() -> Self {
        let atoms = vec![
            (Complex64::new(1.0, 0.0), 0.25),
            (Complex64::new(0.0, 0.0), 0.5),
            (Complex64::new(-1.0, 0.0), 0.25),
        ];
        Self::build(MaskKind::Ternary, atoms).expect("ternary atoms are valid")
    }

    /// `d ∈ {1, 0}` with probability `1/2` each.
    pub fn binary() -> Self {
        let atoms = vec![(Complex64::new(1.0, 0.0), 0.5), (Complex64::new(0.0, 0.0), 0.5)];
        Self::build(MaskKind::Binary, atoms).expect("binary atoms are valid")
    }

    pub fn uniform() -> Self {
        Self::build(MaskKind::Uniform, vec![(Complex64::new(1.0, 0.0), 1.0)])
            .expect("uniform atom is valid")
    }

    pub fn by_kind(kind: MaskKind) -> Result<Self> {
        match kind {
            MaskKind::Octanary => Ok(Self::octanary()),
            MaskKind::Ternary => Ok(Self::ternary()),
            MaskKind::Binary => Ok(Self::binary()),
            MaskKind::Uniform => Ok(Self::uniform()),
            MaskKind::Custom => Err(Error::invalid("custom distributions need explicit atoms")),
        }
    }

    pub fn moments(&self) -> Moments {
        let mut m = Moments::default();
        for a in &self.atoms {
            let v = a.value;
            m.mean += v * a.prob;
            m.second += v * v * a.prob;
            m.abs2 += v.norm_sqr() * a.prob;
            m.abs4 += v.norm_sqr().powi(2) * a.prob;
        }
        m
    }

    /// `(value, prob)` pairs with `prob > 0`.
    pub fn support(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| a.prob > 0.0)
    }

    /// Every atom `(v, p)` has a partner `(-v, p)`, with probabilities of
    /// coincident values merged.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let mass_at = |v: Complex64| -> f64 {
            self.atoms
                .iter()
                .filter(|a| (a.value - v).norm() <= tol)
                .map(|a| a.prob)
                .sum()
        };
        self.support().all(|a| (mass_at(a.value) - mass_at(-a.value)).abs() <= tol)
    }

    fn sample(&self, rng: &mut crate::rng::Rng, cumulative: &[f64]) -> Complex64 {
        let u: f64 = rng.random();
        let idx = cumulative.partition_point(|&c| c <= u).min(self.atoms.len() - 1);
        self.atoms[idx].value
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `E d`
    pub mean: Complex64,
    /// `E d²`
    pub second: Complex64,
    /// `E|d|²`
    pub abs2: f64,
    /// `E|d|⁴`
    pub abs4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub moments: Moments,
    /// `E d = 0`, `E d² = 0` and `E|d|⁴ = 2 (E|d|²)²`.
    pub strict: bool,
    /// As `strict` but allowing `E d² ≠ 0`.
    pub relaxed: bool,
    pub symmetric: bool,
    pub bound_m: f64,
}

pub fn check_admissibility(dist: &MaskDistribution, tol: f64) -> AdmissibilityReport {
    let moments = dist.moments();
    let scale = moments.abs2.max(f64::MIN_POSITIVE);
    let mean_zero = moments.mean.norm() <= tol * scale.sqrt().max(1.0);
    let second_zero = moments.second.norm() <= tol * scale.max(1.0);
    let kurtosis_ok =
        moments.abs2 > 0.0 && (moments.abs4 - 2.0 * moments.abs2 * moments.abs2).abs() <= tol * (scale * scale).max(1.0);
    AdmissibilityReport {
        moments,
        strict: mean_zero && second_zero && kurtosis_ok,
        relaxed: mean_zero && kurtosis_ok,
        symmetric: dist.is_symmetric(tol),
        bound_m: dist.bound_m,
    }
}

/// Rescale atoms so that `E|d|² = 1`.
pub fn normalize_distribution(dist: &MaskDistribution) -> Result<MaskDistribution> {
    let abs2 = dist.moments().abs2;
    if !(abs2 > 0.0) {
        return Err(Error::invalid("cannot normalize a degenerate distribution d ≡ 0"));
    }
    if (abs2 - 1.0).abs() <= PROB_TOL {
        return Ok(MaskDistribution {
            normalized: true,
            ..dist.clone()
        });
    }
    let s = 1.0 / abs2.sqrt();
    Ok(MaskDistribution {
        kind: dist.kind,
        atoms: dist
            .atoms
            .iter()
            .map(|a| Atom {
                value: a.value * s,
                prob: a.prob,
            })
            .collect(),
        bound_m: dist.bound_m * s,
        normalized: true,
    })
}

/// `L` modulation patterns of length `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEnsemble {
    pub distribution: MaskDistribution,
    pub include_plain_pattern: bool,
    pub seed: u64,
    pub patterns: Vec<Vec<Complex64>>,
}

impl MaskEnsemble {
    /// Ensemble from explicit patterns; entries are not checked against atoms.
    pub fn from_patterns(distribution: MaskDistribution, patterns: Vec<Vec<Complex64>>) -> Result<Self> {
        let n = patterns.first().map(Vec::len).unwrap_or(0);
        if patterns.is_empty() || n == 0 {
            return Err(Error::invalid("ensemble needs at least one non-empty pattern"));
        }
        if let Some(p) = patterns.iter().find(|p| p.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: p.len(),
            });
        }
        Ok(Self {
            distribution,
            include_plain_pattern: false,
            seed: 0,
            patterns,
        })
    }

    pub fn n(&self) -> usize {
        self.patterns[0].len()
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    /// Largest entry modulus over all patterns (≥ the bound of the
    /// distribution when a plain pattern is present).
    pub fn bound(&self) -> f64 {
        let plain = if self.include_plain_pattern { 1.0 } else { 0.0 };
        self.distribution.bound_m.max(plain)
    }

    /// Split consecutive patterns into sub-ensembles of the given sizes.
    pub fn split(&self, sizes: &[usize]) -> Result<Vec<MaskEnsemble>> {
        if sizes.iter().sum::<usize>() != self.num_patterns() || sizes.contains(&0) {
            return Err(Error::invalid("batch sizes must be positive and sum to L"));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(MaskEnsemble {
                distribution: self.distribution.clone(),
                include_plain_pattern: self.include_plain_pattern && start == 0,
                seed: self.seed,
                patterns: self.patterns[start..start + s].to_vec(),
            });
            start += s;
        }
        Ok(out)
    }

    /// JSON audit record without the explicit pattern values.
    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            distribution: self.distribution.kind.to_string(),
            normalized: self.distribution.normalized,
            include_plain_pattern: self.include_plain_pattern,
            seed: self.seed,
            l: self.num_patterns(),
            n: self.n(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub distribution: String,
    pub normalized: bool,
    pub include_plain_pattern: bool,
    pub seed: u64,
    #[serde(rename = "L")]
    pub l: usize,
    pub n: usize,
}

/// Draw `L` patterns of length `n`; with `include_plain` pattern 0 is all ones
/// and the remaining `L − 1` are i.i.d. from `dist`.
pub fn sample_ensemble(
    dist: &MaskDistribution,
    n: usize,
    l: usize,
    include_plain: bool,
    seed: u64,
) -> Result<MaskEnsemble> {
    if dist.atoms.is_empty() {
        return Err(Error::invalid("mask distribution needs at least one atom"));
    }
    if l == 0 || n == 0 {
        return Err(Error::invalid("need L ≥ 1 patterns of positive length"));
    }
    let mut cumulative = Vec::with_capacity(dist.atoms.len());
    let mut acc = 0.0;
    for a in &dist.atoms {
        acc += a.prob;
        cumulative.push(acc);
    }
    let mut rng = rng_from_seed(seed);
    let patterns = (0..l)
        .map(|idx| {
            if include_plain && idx == 0 {
                vec![Complex64::new(1.0, 0.0); n]
            } else {
                (0..n).map(|_| dist.sample(&mut rng, &cumulative)).collect()
            }
        })
        .collect();
    Ok(MaskEnsemble {
        distribution: dist.clone(),
        include_plain_pattern: include_plain,
        seed,
        patterns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn octanary_moments() {
        let r = check_admissibility(&MaskDistribution::octanary(), 1e-12);
        assert!(r.moments.mean.norm() < 1e-12);
        assert!(r.moments.second.norm() < 1e-12);
        assert!((r.moments.abs2 - 2.0).abs() < 1e-12);
        assert!((r.moments.abs4 - 8.0).abs() < 1e-12);
        assert!(r.strict && r.relaxed && r.symmetric);
        assert!((r.bound_m - 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ternary_is_relaxed_only() {
        let r = check_admissibility(&MaskDistribution::ternary(), 1e-12);
        assert!((r.moments.second.re - 0.5).abs() < 1e-12);
        assert!((r.moments.abs2 - 0.5).abs() < 1e-12);
        assert!((r.moments.abs4 - 0.5).abs() < 1e-12);
        assert!(!r.strict);
        assert!(r.relaxed);
        assert!(r.symmetric);
    }

    #[test]
    fn binary_fails() {
        let r = check_admissibility(&MaskDistribution::binary(), 1e-12);
        assert!((r.moments.mean.re - 0.5).abs() < 1e-12);
        assert!(!r.strict && !r.relaxed && !r.symmetric);
    }

    #[test]
    fn normalize_octanary() {
        let d = normalize_distribution(&MaskDistribution::octanary()).unwrap();
        let m = d.moments();
        assert!((m.abs2 - 1.0).abs() < 1e-12);
        assert!((m.abs4 - 2.0).abs() < 1e-12);
        assert!(d.normalized);
        assert!((d.bound_m - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(normalize_distribution(&d).unwrap(), d);
    }

    #[test]
    fn normalize_degenerate_errors() {
        let zero = MaskDistribution::custom(vec![(c(0.0, 0.0), 1.0)]).unwrap();
        assert!(matches!(normalize_distribution(&zero), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn custom_validation() {
        assert!(MaskDistribution::custom(vec![]).is_err());
        assert!(MaskDistribution::custom(vec![(c(1.0, 0.0), 0.4)]).is_err());
    }

    #[test]
    fn uniform_single_pattern() {
        let e = sample_ensemble(&MaskDistribution::uniform(), 6, 1, false, 3).unwrap();
        assert_eq!(e.patterns, vec![vec![c(1.0, 0.0); 6]]);
    }

    #[test]
    fn binary_with_plain_pattern() {
        let e = sample_ensemble(&MaskDistribution::binary(), 32, 4, true, 11).unwrap();
        assert_eq!(e.num_patterns(), 4);
        assert!(e.patterns[0].iter().all(|&z| z == c(1.0, 0.0)));
        for p in &e.patterns[1..] {
            assert!(p.iter().all(|&z| z == c(1.0, 0.0) || z == c(0.0, 0.0)));
        }
    }

    #[test]
    fn octanary_support() {
        let b = 1.0;
        let s6 = 6f64.sqrt();
        let allowed = [
            c(b, 0.0),
            c(-b, 0.0),
            c(0.0, b),
            c(0.0, -b),
            c(s6, 0.0),
            c(-s6, 0.0),
            c(0.0, s6),
            c(0.0, -s6),
        ];
        let e = sample_ensemble(&MaskDistribution::octanary(), 8, 2, false, 5).unwrap();
        for z in e.patterns.iter().flatten() {
            assert!(allowed.iter().any(|a| (a - z).norm() < 1e-15), "{z}");
        }
        assert_eq!(e, sample_ensemble(&MaskDistribution::octanary(), 8, 2, false, 5).unwrap());
    }

    #[test]
    fn empirical_frequencies_follow_atoms() {
        let d = MaskDistribution::octanary();
        let e = sample_ensemble(&d, 1000, 50, false, 1).unwrap();
        let big = e.patterns.iter().flatten().filter(|z| z.norm() > 2.0).count() as f64 / 50_000.0;
        assert!((big - 0.2).abs() < 0.01, "P(|d| = √6) ≈ {big}");
    }

    #[test]
    fn split_into_batches() {
        let e = sample_ensemble(&MaskDistribution::ternary(), 4, 6, true, 2).unwrap();
        let parts = e.split(&[2, 4]).unwrap();
        assert_eq!(parts[0].num_patterns(), 2);
        assert!(parts[0].include_plain_pattern && !parts[1].include_plain_pattern);
        assert!(e.split(&[2, 3]).is_err());
    }

    #[test]
    fn summary_json() {
        let e = sample_ensemble(&MaskDistribution::octanary(), 8, 3, false, 42).unwrap();
        let v = serde_json::to_value(e.summary()).unwrap();
        assert_eq!(v["distribution"], "octanary");
        assert_eq!(v["L"], 3);
        assert_eq!(v["seed"], 42);
        let full = serde_json::to_string(&e).unwrap();
        let back: MaskEnsemble = serde_json::from_str(&full).unwrap();
        assert_eq!(back, e);
    }

    proptest! {
        #[test]
        fn normalization_preserves_classification(scale in 0.05f64..20.0, which in 0usize..3) {
            let base = [MaskDistribution::octanary(), MaskDistribution::ternary(), MaskDistribution::binary()][which].clone();
            let scaled = MaskDistribution::custom(
                base.atoms.iter().map(|a| (a.value * scale, a.prob)).collect()
            ).unwrap();
            let before = check_admissibility(&scaled, 1e-10);
            let after = check_admissibility(&normalize_distribution(&scaled).unwrap(), 1e-10);
            prop_assert_eq!(before.strict, after.strict);
            prop_assert_eq!(before.relaxed, after.relaxed);
            prop_assert_eq!(before.symmetric, after.symmetric);
        }

        #[test]
        fn sampled_entries_respect_bound(seed in any::<u64>(), which in 0usize..4) {
            let d = [MaskDistribution::octanary(), MaskDistribution::ternary(),
                     MaskDistribution::binary(), normalize_distribution(&MaskDistribution::octanary()).unwrap()][which].clone();
            let e = sample_ensemble(&d, 16, 4, false, seed).unwrap();
            for z in e.patterns.iter().flatten() {
                prop_assert!(z.norm() <= d.bound_m);
                prop_assert!(d.atoms.iter().any(|a| a.value == *z));
            }
        }
    }
}
