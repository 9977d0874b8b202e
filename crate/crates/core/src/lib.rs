//! Evaluation of time-series training datasets for deep state-space models
//! through the K-spectral metric: the sum of the K largest DFT magnitudes of
//! each normalized signal that enters an SSM channel, averaged over channels
//! and training sequences.
//!
//! The crate also carries the classical system-identification machinery the
//! metric is validated against: SISO state-space simulation and its transfer
//! function / FIR representations, persistence of excitation, least-squares
//! FIR estimation, Fisher information with A-optimality, and the Wiener and
//! Hammerstein benchmark plants.

pub mod deep_ssm;
pub mod error;
pub mod excitation;
pub mod harness;
pub mod kspectral;
pub mod plants;
pub mod signals;
pub mod ssm;

pub use deep_ssm::{CapturedSignals, DeepSsm, DeepSsmConfig, TrainConfig, TrainingSet};
pub use error::{Error, Result};
pub use excitation::{CovarianceSequence, Fim, MultisineSpec, PeMatrix};
pub use kspectral::KSpectralReport;
pub use plants::{NoiseConfig, NoiseLevel, PlantKind};
pub use signals::{Signal, Spectrum};
pub use ssm::{FirCoefficients, StateSpaceParams, TransferFunction};

pub(crate) fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
