//! Phase retrieval from coded diffraction patterns via the PhaseLift
//! convex relaxation.
//!
//! The crate is organised bottom-up:
//!
//! * [`signals`] draws the random test signals (low-pass and Gaussian).
//! * [`masks`] samples modulation patterns and checks admissibility.
//! * [`measurement`] implements the coded diffraction map, the lifted
//!   linear operator `A` with its adjoint, the Gaussian baseline and
//!   Poisson noise.
//! * [`solver`] solves the trace-regularised lifted problems by
//!   accelerated proximal gradient over the PSD cone.
//! * [`analysis`] holds the error and SNR metrics.
//! * [`theory`] contains numerical verifiers for the expectation
//!   identities, concentration and injectivity checks, and the golfing
//!   construction of an approximate dual certificate.
//! * [`harness`] runs phase-transition and noise-sweep experiments and
//!   writes CSV/JSON output.
//!
//! All DFTs are unnormalized with kernel `exp(-2πi k t / n)` and 0-based
//! indices.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod hermitian;
pub mod masks;
pub mod measurement;
pub mod rng;
pub mod signals;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use hermitian::HermitianMatrix;
pub use masks::{MaskDistribution, MaskEnsemble, MaskKind};
pub use measurement::{DenseOperator, LiftedOperator, MeasurementMap, MeasurementSet};
pub use signals::{SignalModel, SignalVector};
pub use solver::{SolverConfig, SolverReport};

pub use num_complex::Complex64;
