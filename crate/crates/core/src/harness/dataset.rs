use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig, SeedStream};
use crate::error::{Error, Result};
use crate::excitation::{gen_multisine, gen_piecewise_constant, MultisineSpec};
use crate::plants::{respond, NoiseConfig, PlantKind};
use crate::signals::Signal;

/// One input/output recording; `[0, train_len)` trains, the rest validates.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentDataset {
    /// 1-based index within the suite.
    pub id: usize,
    pub plant: PlantKind,
    pub u: Signal,
    pub y: Signal,
    pub train_len: usize,
    pub spec: MultisineSpec,
    pub noise: NoiseConfig,
}

/// Everything needed to rebuild a dataset bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub id: usize,
    pub plant: PlantKind,
    pub length: usize,
    pub train_len: usize,
    pub components: usize,
    pub spec: MultisineSpec,
    pub noise: NoiseConfig,
}

impl IdentDataset {
    pub fn components(&self) -> usize {
        self.spec.components
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn train_slice(&self) -> Result<(Signal, Signal)> {
        Ok((self.u.slice(0..self.train_len)?, self.y.slice(0..self.train_len)?))
    }

    pub fn validation_slice(&self) -> Result<(Signal, Signal)> {
        let r = self.train_len..self.len();
        Ok((self.u.slice(r.clone())?, self.y.slice(r)?))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            id: self.id,
            plant: self.plant,
            length: self.len(),
            train_len: self.train_len,
            components: self.components(),
            spec: self.spec.clone(),
            noise: self.noise,
        }
    }

    pub fn from_meta(meta: &DatasetMeta) -> Result<Self> {
        let u = meta.spec.synthesize()?;
        if u.len() != meta.length || meta.train_len == 0 || meta.train_len >= meta.length {
            return Err(Error::InvalidArgument(format!(
                "inconsistent dataset metadata for id {}",
                meta.id
            )));
        }
        let y = respond(meta.plant, &u, &meta.noise)?;
        Ok(IdentDataset {
            id: meta.id,
            plant: meta.plant,
            u,
            y,
            train_len: meta.train_len,
            spec: meta.spec.clone(),
            noise: meta.noise,
        })
    }
}

/// Seed of dataset `n` (1-based) in repetition `repetition`.
pub(crate) fn dataset_seed(cfg: &ExperimentConfig, repetition: usize, n: usize) -> u64 {
    let rep_seed = derive_seed(cfg.seed, SeedStream::Repetition, repetition as u64);
    derive_seed(rep_seed, SeedStream::Dataset, n as u64)
}

/// Builds dataset `n` (1-based) of the given repetition's suite.
pub fn build_dataset(cfg: &ExperimentConfig, repetition: usize, n: usize) -> Result<IdentDataset> {
    let ds_seed = dataset_seed(cfg, repetition, n);
    let (u, spec) = gen_multisine(
        cfg.components_for(n),
        cfg.length,
        cfg.input_norm,
        derive_seed(ds_seed, SeedStream::Input, 0),
        cfg.integer_bins,
    )?;
    let noise = NoiseConfig {
        level: cfg.noise,
        seed: derive_seed(ds_seed, SeedStream::Noise, 0),
    };
    let y = respond(cfg.plant, &u, &noise)?;
    Ok(IdentDataset {
        id: n,
        plant: cfg.plant,
        u,
        y,
        train_len: cfg.train_len(),
        spec,
        noise,
    })
}

/// The `N_d` datasets of one repetition, dataset `n` carrying
/// `components_for(n)` sinusoids.
pub fn generate_ident_suite(cfg: &ExperimentConfig, repetition: usize) -> Result<Vec<IdentDataset>> {
    cfg.validate()?;
    (1..=cfg.num_datasets).map(|n| build_dataset(cfg, repetition, n)).collect()
}

/// A held-out input with its noiseless plant response.
#[derive(Debug, Clone, PartialEq)]
pub struct TestInput {
    pub name: String,
    pub u: Signal,
    pub y: Signal,
}

/// Test input I (a multisine with `test_i()` components) and test input II
/// (piecewise-constant levels), both at `‖u‖₂ = input_norm`.
pub fn make_test_inputs(cfg: &ExperimentConfig) -> Result<[TestInput; 2]> {
    let (u1, _) = gen_multisine(
        cfg.test_i(),
        cfg.length,
        cfg.input_norm,
        derive_seed(cfg.seed, SeedStream::TestInputI, 0),
        cfg.integer_bins,
    )?;
    let u2 = gen_piecewise_constant(
        cfg.length,
        cfg.test_interval,
        cfg.input_norm,
        derive_seed(cfg.seed, SeedStream::TestInputII, 0),
    )?;
    let clean = NoiseConfig::noiseless();
    Ok([
        TestInput {
            name: "I".into(),
            y: respond(cfg.plant, &u1, &clean)?,
            u: u1,
        },
        TestInput {
            name: "II".into(),
            y: respond(cfg.plant, &u2, &clean)?,
            u: u2,
        },
    ])
}
