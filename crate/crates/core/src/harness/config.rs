use serde::{Deserialize, Serialize};

use crate::deep_ssm::{DeepSsmConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::kspectral::sweep_k_values;
use crate::plants::{NoiseLevel, PlantKind};

/// Identification experiment description. Missing JSON fields take the
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantKind,
    /// Number of training datasets `N_d`.
    pub num_datasets: usize,
    /// Sequence length `T` of every dataset and test input.
    pub length: usize,
    /// Leading fraction of each sequence used for training; the rest is the
    /// validation slice.
    pub train_fraction: f64,
    /// Component count of the richest dataset; `None` means `T/2`.
    pub max_components: Option<usize>,
    pub integer_bins: bool,
    /// `‖u‖₂` of every input signal.
    pub input_norm: f64,
    pub noise: NoiseLevel,
    /// Train on targets standardized with the training slice's mean and
    /// standard deviation; reported losses stay in original units.
    pub standardize_targets: bool,
    pub model: DeepSsmConfig,
    pub train: TrainConfig,
    /// Epoch at which `R̄` and the validation loss are read off (0 means the
    /// untrained model).
    pub metric_epoch: usize,
    /// `K` values for the K sweep; empty means `{d/2, d, 2d, d_in}`.
    pub k_values: Vec<usize>,
    /// Component count of test input I; `None` means `max_components`.
    pub test_components: Option<usize>,
    /// Hold length of test input II.
    pub test_interval: usize,
    pub seed: u64,
    pub repetitions: usize,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub max_diverged_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            plant: PlantKind::Wiener,
            num_datasets: 100,
            length: 2000,
            train_fraction: 0.8,
            max_components: None,
            integer_bins: false,
            input_norm: 100.0,
            noise: NoiseLevel::RelativeRms(0.01),
            standardize_targets: true,
            model: DeepSsmConfig::default(),
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            metric_epoch: 1,
            k_values: Vec::new(),
            test_components: None,
            test_interval: 20,
            seed: 0,
            repetitions: 3,
            workers: None,
            max_diverged_fraction: 0.1,
        }
    }
}

impl ExperimentConfig {
    /// The full-scale protocol: 5000 datasets of length 10000, dataset `i`
    /// carrying exactly `i` components.
    pub fn full_scale(plant: PlantKind) -> Self {
        ExperimentConfig {
            plant,
            num_datasets: 5000,
            length: 10_000,
            max_components: Some(5000),
            ..ExperimentConfig::default()
        }
    }

    /// The desk-scale correlation setup: dataset `n` carries `n` components,
    /// test input I carries `T/2`, and training uses windowed, clipped SGD
    /// at a step size that moves the model within 30 epochs.
    pub fn desk(plant: PlantKind) -> Self {
        let base = ExperimentConfig::default();
        ExperimentConfig {
            plant,
            max_components: Some(base.num_datasets),
            test_components: Some(base.length / 2),
            train: TrainConfig {
                learning_rate: 0.03,
                window: Some(100),
                grad_clip: Some(1.0),
                ..base.train
            },
            ..base
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_datasets < 2 {
            return bad(format!("num_datasets must be >= 2, got {}", self.num_datasets));
        }
        if self.length < 8 {
            return bad(format!("length must be >= 8, got {}", self.length));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        let train_len = self.train_len();
        if train_len == 0 || train_len == self.length {
            return bad("train/validation split leaves an empty slice".into());
        }
        if self.i_max() == 0 {
            return bad("max_components must be >= 1".into());
        }
        if self.integer_bins && self.i_max().max(self.test_i()) > self.length.div_ceil(2) - 1 {
            return bad("too many components for distinct integer bins".into());
        }
        if !(self.input_norm > 0.0 && self.input_norm.is_finite()) {
            return bad(format!("input_norm {}", self.input_norm));
        }
        match self.noise {
            NoiseLevel::Absolute(s) | NoiseLevel::RelativeRms(s) if !(s >= 0.0 && s.is_finite()) => {
                return bad(format!("noise level {s}"));
            }
            _ => {}
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate()?;
        if self.model.input_dim != 1 || self.model.output_dim != 1 {
            return bad("identification models are single-input single-output".into());
        }
        if self.metric_epoch > self.train.epochs {
            return bad(format!(
                "metric_epoch {} exceeds epochs {}",
                self.metric_epoch, self.train.epochs
            ));
        }
        let seq_len = self.train.window.map_or(train_len, |w| w.min(train_len));
        for k in self.sweep_ks().into_iter().chain([self.train.k]) {
            if k == 0 || k > seq_len {
                return bad(format!("K = {k} is invalid for sequences of length {seq_len}"));
            }
        }
        if self.test_interval == 0 {
            return bad("test_interval must be >= 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_diverged_fraction) {
            return bad(format!("max_diverged_fraction {}", self.max_diverged_fraction));
        }
        Ok(())
    }

    pub fn train_len(&self) -> usize {
        (self.length as f64 * self.train_fraction).round() as usize
    }

    pub fn i_max(&self) -> usize {
        self.max_components.unwrap_or(self.length / 2)
    }

    pub fn test_i(&self) -> usize {
        self.test_components.unwrap_or_else(|| self.i_max())
    }

    /// Component count of dataset `n` (1-based), mapped affinely onto
    /// `[1, i_max]` (rounded to the nearest integer).
    pub fn components_for(&self, n: usize) -> usize {
        let (n, nd, imax) = (n as u128, self.num_datasets as u128, self.i_max() as u128);
        let span = 2 * (n - 1) * (imax - 1) + (nd - 1);
        (1 + span / (2 * (nd - 1))) as usize
    }

    pub fn sweep_ks(&self) -> Vec<usize> {
        if self.k_values.is_empty() {
            sweep_k_values(&self.model)
        } else {
            let mut ks = self.k_values.clone();
            ks.sort_unstable();
            ks.dedup();
            ks
        }
    }
}

/// Independent RNG streams derived from one parent seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Repetition = 1,
    Dataset = 2,
    Input = 3,
    Noise = 4,
    Init = 5,
    Shuffle = 6,
    TestInputI = 7,
    TestInputII = 8,
}

/// SplitMix64 finalizer over `(parent, stream, index)`.
pub fn derive_seed(parent: u64, stream: SeedStream, index: u64) -> u64 {
    let mut z = parent
        .wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!((c.num_datasets, c.length, c.train.epochs, c.repetitions), (100, 2000, 30, 3));
        assert_eq!(c.train_len(), 1600);
        assert_eq!(c.i_max(), 1000);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.sweep_ks(), vec![2, 4, 8]);
    }

    #[test]
    fn full_scale_maps_components_one_to_one() {
        let c = ExperimentConfig::full_scale(PlantKind::Hammerstein);
        c.validate().unwrap();
        assert_eq!(c.train_len(), 8000);
        for n in [1, 2, 17, 4999, 5000] {
            assert_eq!(c.components_for(n), n);
        }
        let desk = ExperimentConfig::default();
        assert_eq!(desk.components_for(1), 1);
        assert_eq!(desk.components_for(2), 11);
        assert_eq!(desk.components_for(50), 495);
        assert_eq!(desk.components_for(100), 1000);
        let tuned = ExperimentConfig::desk(PlantKind::Wiener);
        tuned.validate().unwrap();
        assert_eq!((tuned.components_for(1), tuned.components_for(37), tuned.test_i()), (1, 37, 1000));
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"plant": "hammerstein", "num_datasets": 5}"#).unwrap();
        assert_eq!(partial.plant, PlantKind::Hammerstein);
        assert_eq!(partial.length, 2000);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            r#"{"num_datasets": 1}"#,
            r#"{"train_fraction": 1.0}"#,
            r#"{"metric_epoch": 31}"#,
            r#"{"k_values": [5000]}"#,
            r#"{"repetitions": 0}"#,
            r#"{"colour": "blue"}"#,
            r#"{"plant": "narma"}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_streams_differ() {
        let a = derive_seed(7, SeedStream::Input, 3);
        assert_eq!(a, derive_seed(7, SeedStream::Input, 3));
        assert_ne!(a, derive_seed(7, SeedStream::Noise, 3));
        assert_ne!(a, derive_seed(7, SeedStream::Input, 4));
        assert_ne!(a, derive_seed(8, SeedStream::Input, 3));
    }
}
