//! The K-spectral metric.
//!
//! For a unit-norm signal of length `T` with DFT magnitudes `|U_s|`,
//! `R(U, K)` is the sum of the `K` largest magnitudes. Parseval fixes
//! `Σ|U_s|² = T`, so `R ≤ √(TK)`, with equality exactly when `K` bins share
//! the energy equally and every other bin is zero.

use serde::{Deserialize, Serialize};

use crate::deep_ssm::DeepSsmConfig;
use crate::error::{Error, Result};
use crate::signals::{dft_magnitudes_slice, normalize_slice, Spectrum};

fn check_k(k: usize, t: usize) -> Result<()> {
    if k == 0 || k > t {
        return Err(Error::BadK { k, t });
    }
    Ok(())
}

/// Sum of the `K` largest magnitudes of `spec`.
pub fn k_spectral(spec: &Spectrum, k: usize) -> Result<f64> {
    let m = spec.magnitudes();
    check_k(k, m.len())?;
    Ok(top_k_sum(m, k))
}

pub(crate) fn top_k_sum(m: &[f64], k: usize) -> f64 {
    let mut sorted = m.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted[..k].iter().sum()
}

/// Indices of the `K` largest magnitudes; ties go to the lower bin.
pub fn top_k_indices(spec: &Spectrum, k: usize) -> Result<Vec<usize>> {
    let m = spec.magnitudes();
    check_k(k, m.len())?;
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&a, &b| m[b].total_cmp(&m[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Upper bound `√(TK)` on the metric of any unit-norm signal.
pub fn k_spectral_max(t: usize, k: usize) -> Result<f64> {
    check_k(k, t)?;
    Ok((t as f64 * k as f64).sqrt())
}

/// Arithmetic mean of per-channel values.
pub fn aggregate(per_channel: &[f64]) -> Result<f64> {
    if per_channel.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// The default `K`: the per-channel state dimension.
pub fn default_k(cfg: &DeepSsmConfig) -> usize {
    cfg.state_dim
}

/// The `K` values of a sweep around `d`: `{d/2, d, 2d, d_in}`, deduplicated
/// and sorted, zero dropped.
pub fn sweep_k_values(cfg: &DeepSsmConfig) -> Vec<usize> {
    let d = cfg.state_dim;
    let mut ks = vec![d / 2, d, 2 * d, cfg.channels];
    ks.retain(|&k| k > 0);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Normalizes a raw channel signal and returns its metric.
pub fn channel_metric(samples: &[f64], k: usize) -> Result<f64> {
    check_k(k, samples.len())?;
    let unit = normalize_slice(samples)?;
    Ok(top_k_sum(&dft_magnitudes_slice(&unit), k))
}

/// Per-channel values and their means for one or more sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSpectralReport {
    pub k: usize,
    pub t: usize,
    /// `per_channel[n][j]`: sequence `n`, captured channel `j` (layer-major).
    /// Channels that were identically zero are `None`.
    pub per_channel: Vec<Vec<Option<f64>>>,
    /// Channel mean per sequence (0 when every channel was skipped).
    pub sequence_mean: Vec<f64>,
    /// Mean of `sequence_mean` over sequences.
    pub dataset_mean: f64,
}

impl KSpectralReport {
    pub fn check_bounds(&self) -> bool {
        let max = (self.t as f64 * self.k as f64).sqrt() + 1e-9;
        self.per_channel
            .iter()
            .flatten()
            .flatten()
            .all(|&r| r > 0.0 && r <= max)
    }
}
