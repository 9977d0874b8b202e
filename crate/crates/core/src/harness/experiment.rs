use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ExperimentConfig, SeedStream};
use super::dataset::{build_dataset, dataset_seed, make_test_inputs, IdentDataset, TestInput};
use super::stats::{leave_one_out_range, mean_std, pearson_or_na};
use crate::deep_ssm::{measure_metric, train_epoch_with_metric, DeepSsm, EpochOutcome, TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::signals::{mse_slice, Signal};

/// Metric compared against test MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    KSpectral,
    ValLoss,
    Size,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::KSpectral, Metric::ValLoss, Metric::Size];
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::KSpectral => "kspectral",
            Metric::ValLoss => "valloss",
            Metric::Size => "size",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kspectral" => Ok(Metric::KSpectral),
            "valloss" => Ok(Metric::ValLoss),
            "size" => Ok(Metric::Size),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub r_bar: f64,
    pub per_layer_r: Vec<f64>,
    pub k: usize,
}

/// Outcome of training one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub repetition: usize,
    pub dataset: usize,
    pub components: usize,
    /// Training samples; identical across a suite.
    pub size: usize,
    pub k: usize,
    /// Training targets were mapped to `(y - offset) / scale`; every loss
    /// below is in the original units.
    pub target_offset: f64,
    pub target_scale: f64,
    /// `R̄` at the metric epoch.
    pub r_bar: Option<f64>,
    /// Validation loss after the metric epoch.
    pub val_loss: Option<f64>,
    /// `R̄` at the metric epoch for every sweep `K`.
    pub r_bar_by_k: Vec<(usize, f64)>,
    /// MSE on test inputs I and II after the last epoch.
    pub test_mse: Vec<f64>,
    pub final_train_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Set when the run produced non-finite values.
    pub diverged: Option<String>,
}

impl DatasetRecord {
    pub fn is_ok(&self) -> bool {
        self.diverged.is_none() && !self.test_mse.is_empty()
    }

    /// The value of `metric` read at `epoch`.
    pub fn metric_at(&self, metric: Metric, epoch: usize) -> Option<f64> {
        match metric {
            Metric::Size => Some(self.size as f64),
            Metric::KSpectral => self.epochs.get(epoch).map(|e| e.r_bar),
            Metric::ValLoss => self.epochs.get(epoch).map(|e| e.val_loss),
        }
    }
}

/// Affine map between original targets and the units the model is trained in.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TargetMap {
    offset: f64,
    scale: f64,
}

impl TargetMap {
    fn fit(cfg: &ExperimentConfig, y: &[f64]) -> Self {
        if !cfg.standardize_targets {
            return TargetMap { offset: 0.0, scale: 1.0 };
        }
        let n = y.len() as f64;
        let offset = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - offset).powi(2)).sum::<f64>() / n).sqrt();
        TargetMap {
            offset,
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    fn standardize(&self, y: &Signal) -> Result<Signal> {
        Signal::new(y.samples().iter().map(|v| (v - self.offset) / self.scale).collect())
    }

    /// MSE in original units of the model's prediction over `range`.
    fn mse(&self, model: &DeepSsm, u: &Signal, y: &Signal, range: std::ops::Range<usize>) -> Result<f64> {
        let (out, _) = model.forward(u)?;
        let pred: Vec<f64> = out.samples()[range.clone()]
            .iter()
            .map(|v| self.offset + self.scale * v)
            .collect();
        mse_slice(&pred, &y.samples()[range])
    }
}

/// Trains a fresh model on `ds` and evaluates it. Divergence is recorded in
/// the returned record rather than raised. `on_epoch` sees every epoch record
/// as it is produced.
pub fn run_dataset(
    cfg: &ExperimentConfig,
    ds: &IdentDataset,
    tests: &[TestInput],
    repetition: usize,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(DatasetRecord, DeepSsm)> {
    let ds_seed = dataset_seed(cfg, repetition, ds.id);
    let mut model = DeepSsm::init(cfg.model, derive_seed(ds_seed, SeedStream::Init, 0))?;
    let train_cfg = TrainConfig {
        seed: derive_seed(ds_seed, SeedStream::Shuffle, 0),
        ..cfg.train.clone()
    };
    let (tu, ty) = ds.train_slice()?;
    let map = TargetMap::fit(cfg, ty.samples());
    let data = TrainingSet::from_recording(&tu, &map.standardize(&ty)?, train_cfg.window)?;
    let ks = cfg.sweep_ks();

    let mut record = DatasetRecord {
        repetition,
        dataset: ds.id,
        components: ds.components(),
        size: ds.train_len,
        k: train_cfg.k,
        target_offset: map.offset,
        target_scale: map.scale,
        r_bar: None,
        val_loss: None,
        r_bar_by_k: Vec::new(),
        test_mse: Vec::new(),
        final_train_loss: None,
        epochs: Vec::new(),
        diverged: None,
    };

    let mut step = |model: &mut DeepSsm, epoch: usize, record: &mut DatasetRecord| -> Result<()> {
        let keep = epoch == cfg.metric_epoch;
        let out: EpochOutcome = if epoch == 0 {
            measure_metric(model, &data, &train_cfg, keep)?
        } else {
            train_epoch_with_metric(model, &data, &train_cfg, epoch, keep)?
        };
        let val = map.mse(model, &ds.u, &ds.y, ds.train_len..ds.len())?;
        let rec = EpochRecord {
            epoch,
            train_loss: out.train_loss,
            val_loss: val,
            r_bar: out.r_bar,
            per_layer_r: out.per_layer_r,
            k: train_cfg.k,
        };
        if !(rec.train_loss.is_finite() && rec.val_loss.is_finite() && rec.r_bar.is_finite()) {
            return Err(Error::NonFinite(format!("epoch {epoch} losses")));
        }
        if let Some(spectra) = out.spectra {
            record.r_bar = Some(rec.r_bar);
            record.val_loss = Some(rec.val_loss);
            for &k in &ks {
                record.r_bar_by_k.push((k, spectra.metric(k)?.0));
            }
        }
        record.final_train_loss = Some(rec.train_loss);
        on_epoch(&rec);
        record.epochs.push(rec);
        Ok(())
    };

    let mut outcome = Ok(());
    for epoch in 0..=train_cfg.epochs {
        outcome = step(&mut model, epoch, &mut record);
        if outcome.is_err() {
            break;
        }
    }
    if outcome.is_ok() {
        outcome = tests
            .iter()
            .map(|t| map.mse(&model, &t.u, &t.y, 0..t.u.len()))
            .collect::<Result<Vec<f64>>>()
            .and_then(|mses| {
                if mses.iter().all(|m| m.is_finite()) {
                    record.test_mse = mses;
                    Ok(())
                } else {
                    Err(Error::NonFinite("test MSE".into()))
                }
            });
    }
    match outcome {
        Ok(()) => {}
        Err(Error::NonFinite(what)) => {
            log::warn!(
                "repetition {} dataset {} diverged: {what}",
                repetition,
                ds.id
            );
            record.diverged = Some(what);
        }
        Err(e) => return Err(e),
    }
    Ok((record, model))
}

/// ρ of each metric against the MSE of one test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub test_input: String,
    pub kspectral: Option<f64>,
    pub valloss: Option<f64>,
    /// Always `None` for equal-size datasets.
    pub size: Option<f64>,
    /// Leave-one-out range of the K-spectral ρ.
    pub kspectral_loo: Option<(f64, f64)>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetition: usize,
    pub rows: Vec<CorrelationRow>,
    pub diverged: usize,
}

/// Mean ± sample std of ρ over repetitions; `None` when every repetition
/// was N/A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub test_input: String,
    pub metric: Metric,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub test_inputs: Vec<String>,
    pub repetitions: Vec<RepetitionSummary>,
    pub stats: Vec<StatRow>,
    pub diverged: usize,
    pub total: usize,
    #[serde(skip)]
    pub records: Vec<DatasetRecord>,
}

impl ExperimentResult {
    /// Fails with `TooManyDiverged` above the configured fraction.
    pub fn check_divergence(&self) -> Result<()> {
        if self.diverged as f64 > self.config.max_diverged_fraction * self.total as f64 {
            return Err(Error::TooManyDiverged {
                failed: self.diverged,
                total: self.total,
            });
        }
        Ok(())
    }

    pub fn stat(&self, test_input: &str, metric: Metric) -> Option<&StatRow> {
        self.stats
            .iter()
            .find(|s| s.test_input == test_input && s.metric == metric)
    }
}

/// `(metric, test MSE)` pairs of the healthy runs of one repetition.
fn pairs(
    records: &[&DatasetRecord],
    test: usize,
    value: impl Fn(&DatasetRecord) -> Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| Some((value(r)?, *r.test_mse.get(test)?)))
        .unzip()
}

fn by_repetition(records: &[DatasetRecord]) -> Vec<(usize, Vec<&DatasetRecord>)> {
    let mut reps: Vec<usize> = records.iter().map(|r| r.repetition).collect();
    reps.sort_unstable();
    reps.dedup();
    reps.into_iter()
        .map(|rep| (rep, records.iter().filter(|r| r.repetition == rep).collect()))
        .collect()
}

fn summarize(cfg: &ExperimentConfig, names: Vec<String>, records: Vec<DatasetRecord>) -> Result<ExperimentResult> {
    let mut repetitions = Vec::new();
    for (rep, recs) in by_repetition(&records) {
        let mut rows = Vec::new();
        for (ti, name) in names.iter().enumerate() {
            let (x, y) = pairs(&recs, ti, |r| r.r_bar);
            let kspectral = if x.len() >= 2 { pearson_or_na(&x, &y)? } else { None };
            let kspectral_loo = leave_one_out_range(&x, &y);
            let n = x.len();
            let (x, y) = pairs(&recs, ti, |r| r.val_loss);
            let valloss = if x.len() >= 2 { pearson_or_na(&x, &y)? } else { None };
            let (x, y) = pairs(&recs, ti, |r| Some(r.size as f64));
            let size = if x.len() >= 2 { pearson_or_na(&x, &y)? } else { None };
            rows.push(CorrelationRow {
                test_input: name.clone(),
                kspectral,
                valloss,
                size,
                kspectral_loo,
                n,
            });
        }
        repetitions.push(RepetitionSummary {
            repetition: rep,
            rows,
            diverged: recs.iter().filter(|r| !r.is_ok()).count(),
        });
    }
    let mut stats = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        for metric in Metric::ALL {
            let vals: Vec<f64> = repetitions
                .iter()
                .filter_map(|r| {
                    let row = &r.rows[ti];
                    match metric {
                        Metric::KSpectral => row.kspectral,
                        Metric::ValLoss => row.valloss,
                        Metric::Size => row.size,
                    }
                })
                .collect();
            let ms = mean_std(&vals);
            stats.push(StatRow {
                test_input: name.clone(),
                metric,
                mean: ms.map(|m| m.0),
                std: ms.map(|m| m.1),
                count: vals.len(),
            });
        }
    }
    let diverged = records.iter().filter(|r| !r.is_ok()).count();
    Ok(ExperimentResult {
        config: cfg.clone(),
        test_inputs: names,
        repetitions,
        stats,
        diverged,
        total: records.len(),
        records,
    })
}

/// Trains every dataset of every repetition and summarizes, without judging
/// the divergence rate.
pub fn collect_runs(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let tests = make_test_inputs(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.repetitions)
        .flat_map(|rep| (1..=cfg.num_datasets).map(move |n| (rep, n)))
        .collect();
    let run = || -> Result<Vec<DatasetRecord>> {
        jobs.par_iter()
            .map(|&(rep, n)| {
                let ds = build_dataset(cfg, rep, n)?;
                Ok(run_dataset(cfg, &ds, &tests, rep, &mut |_| {})?.0)
            })
            .collect()
    };
    let records = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    summarize(cfg, tests.iter().map(|t| t.name.clone()).collect(), records)
}

/// [`collect_runs`] followed by the divergence check.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = collect_runs(cfg)?;
    result.check_divergence()?;
    Ok(result)
}

/// One ρ per repetition and test input for `metric` read at `epoch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub repetition: usize,
    pub test_input: usize,
    pub metric: Metric,
    pub epoch: usize,
    pub rho: Option<f64>,
    pub n: usize,
}

/// Recomputes correlations from stored records.
pub fn correlate(records: &[DatasetRecord], metric: Metric, epoch: usize) -> Result<Vec<CorrelationEntry>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_tests = records.iter().map(|r| r.test_mse.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for (rep, recs) in by_repetition(records) {
        if recs.iter().filter(|r| r.is_ok()).any(|r| r.epochs.len() <= epoch) {
            return Err(Error::Config(format!("epoch {epoch} was not recorded")));
        }
        for ti in 0..n_tests {
            let (x, y) = pairs(&recs, ti, |r| r.metric_at(metric, epoch));
            let rho = if x.len() >= 2 { pearson_or_na(&x, &y)? } else { None };
            out.push(CorrelationEntry {
                repetition: rep,
                test_input: ti,
                metric,
                epoch,
                rho,
                n: x.len(),
            });
        }
    }
    Ok(out)
}

/// ρ for one sweep key (an epoch or a `K`) and test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: usize,
    pub test_input: String,
    pub per_repetition: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Mean of `|ρ|`.
    pub abs_mean: Option<f64>,
}

fn sweep_rows(
    result: &ExperimentResult,
    keys: &[usize],
    value: impl Fn(&DatasetRecord, usize) -> Option<f64>,
) -> Result<Vec<SweepRow>> {
    let reps = by_repetition(&result.records);
    let mut rows = Vec::new();
    for &key in keys {
        for (ti, name) in result.test_inputs.iter().enumerate() {
            let mut per = Vec::new();
            for (_, recs) in &reps {
                let (x, y) = pairs(recs, ti, |r| value(r, key));
                per.push(if x.len() >= 2 { pearson_or_na(&x, &y)? } else { None });
            }
            let vals: Vec<f64> = per.iter().flatten().copied().collect();
            let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
            let ms = mean_std(&vals);
            rows.push(SweepRow {
                key,
                test_input: name.clone(),
                per_repetition: per,
                mean: ms.map(|m| m.0),
                std: ms.map(|m| m.1),
                abs_mean: mean_std(&abs).map(|m| m.0),
            });
        }
    }
    Ok(rows)
}

/// ρ(R̄ at each epoch, final test MSE) for epochs `0..=epochs`.
pub fn epoch_rows(result: &ExperimentResult) -> Result<Vec<SweepRow>> {
    let epochs: Vec<usize> = (0..=result.config.train.epochs).collect();
    sweep_rows(result, &epochs, |r, e| r.epochs.get(e).map(|x| x.r_bar))
}

/// ρ(R̄ at the metric epoch for each sweep `K`, final test MSE).
pub fn k_rows(result: &ExperimentResult) -> Result<Vec<SweepRow>> {
    let ks = result.config.sweep_ks();
    let rows = sweep_rows(result, &ks, |r, k| {
        r.r_bar_by_k.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    })?;
    for row in &rows {
        let signs: Vec<&str> = row
            .per_repetition
            .iter()
            .map(|r| match r {
                Some(v) if *v < 0.0 => "-",
                Some(_) => "+",
                None => "n/a",
            })
            .collect();
        log::info!("K = {} test {}: signs of rho {:?}", row.key, row.test_input, signs);
    }
    Ok(rows)
}

/// Runs the experiment and reports ρ for every epoch, epoch 0 being the
/// untrained model.
pub fn epoch_sweep(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<SweepRow>)> {
    if cfg.train.epochs < 2 {
        return Err(Error::Config("an epoch sweep needs at least two epochs".into()));
    }
    let result = run_experiment(cfg)?;
    let rows = epoch_rows(&result)?;
    Ok((result, rows))
}

/// Runs the experiment once and reports ρ for every sweep `K`, recomputed
/// from the spectra captured at the metric epoch.
pub fn k_sweep(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Vec<SweepRow>)> {
    let result = run_experiment(cfg)?;
    let rows = k_rows(&result)?;
    Ok((result, rows))
}
