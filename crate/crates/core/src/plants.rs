//! Ground-truth nonlinear plants for the identification experiments.
//!
//! * Wiener: control-valve linear block followed by `v/√(0.10 + 0.90 v²)`.
//! * Hammerstein: cubic polynomial `u + 3u² + 2u³` followed by an 8-tap FIR.
//!
//! Both start from rest and add Gaussian noise to the observed output only.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{l2_norm, Signal};
use crate::ssm::{convolve_causal, filter_difference, TransferFunction};

pub const WIENER_NUM: [f64; 3] = [0.0, 0.1044, 0.0883];
pub const WIENER_DEN: [f64; 3] = [1.0, -1.4138, 0.6065];
pub const HAMMERSTEIN_POLY: [f64; 3] = [1.0, 3.0, 2.0];
pub const HAMMERSTEIN_FIR: [f64; 8] = [1.0, 2.0, 0.3, 4.0, 1.0, 1.0, 1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Wiener,
    Hammerstein,
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PlantKind::Wiener => write!(f, "wiener"),
            PlantKind::Hammerstein => write!(f, "hammerstein"),
        }
    }
}

impl std::str::FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiener" => Ok(PlantKind::Wiener),
            "hammerstein" => Ok(PlantKind::Hammerstein),
            other => Err(Error::InvalidArgument(format!("unknown plant {other:?}"))),
        }
    }
}

/// Standard deviation of the observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Absolute(f64),
    /// Fraction of the RMS of the noiseless output.
    RelativeRms(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            level: NoiseLevel::Absolute(0.0),
            seed: 0,
        }
    }

    pub fn absolute(sigma: f64, seed: u64) -> Self {
        NoiseConfig {
            level: NoiseLevel::Absolute(sigma),
            seed,
        }
    }

    /// The default level: 1% of the noiseless output RMS.
    pub fn default_relative(seed: u64) -> Self {
        NoiseConfig {
            level: NoiseLevel::RelativeRms(0.01),
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseConfig { seed, ..self }
    }

    fn std_for(&self, clean: &[f64]) -> Result<f64> {
        let sd = match self.level {
            NoiseLevel::Absolute(s) => s,
            NoiseLevel::RelativeRms(frac) => frac * l2_norm(clean) / (clean.len() as f64).sqrt(),
        };
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise standard deviation {sd}")));
        }
        Ok(sd)
    }

    fn apply(&self, clean: Vec<f64>) -> Result<Signal> {
        let sd = self.std_for(&clean)?;
        if sd == 0.0 {
            return Signal::new(clean);
        }
        let normal = Normal::new(0.0, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = crate::seeded_rng(self.seed);
        Signal::new(clean.into_iter().map(|y| y + normal.sample(&mut rng)).collect())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::default_relative(0)
    }
}

pub fn wiener_linear_block() -> TransferFunction {
    TransferFunction::from_backward_shift(&WIENER_NUM, &WIENER_DEN).expect("constant coefficients")
}

fn wiener_static(v: f64) -> f64 {
    v / (0.10 + 0.90 * v * v).sqrt()
}

/// Noiseless Wiener output together with the intermediate stem position `v`.
pub fn wiener_clean(u: &Signal) -> (Vec<f64>, Vec<f64>) {
    let v = filter_difference(&wiener_linear_block(), u.samples());
    let y = v.iter().map(|&x| wiener_static(x)).collect();
    (v, y)
}

pub fn wiener_response(u: &Signal, noise: &NoiseConfig) -> Result<Signal> {
    noise.apply(wiener_clean(u).1)
}

/// `v_t = u_t + 3u_t² + 2u_t³`.
pub fn hammerstein_static(u: &Signal) -> Vec<f64> {
    u.samples()
        .iter()
        .map(|&x| HAMMERSTEIN_POLY[0] * x + HAMMERSTEIN_POLY[1] * x * x + HAMMERSTEIN_POLY[2] * x * x * x)
        .collect()
}

pub fn hammerstein_clean(u: &Signal) -> (Vec<f64>, Vec<f64>) {
    let v = hammerstein_static(u);
    let mut taps = vec![0.0];
    taps.extend_from_slice(&HAMMERSTEIN_FIR);
    let y = convolve_causal(&taps, &v);
    (v, y)
}

pub fn hammerstein_response(u: &Signal, noise: &NoiseConfig) -> Result<Signal> {
    noise.apply(hammerstein_clean(u).1)
}

pub fn respond(kind: PlantKind, u: &Signal, noise: &NoiseConfig) -> Result<Signal> {
    match kind {
        PlantKind::Wiener => wiener_response(u, noise),
        PlantKind::Hammerstein => hammerstein_response(u, noise),
    }
}
