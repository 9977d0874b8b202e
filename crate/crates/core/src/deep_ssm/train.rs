//! One SGD epoch with the K-spectral metric measured on the fly.
//!
//! For every sequence of a minibatch the forward pass captures each SSM input
//! signal under the parameters current at that minibatch; each captured
//! signal is normalized, transformed, and scored, and the channel scores are
//! folded into a running mean. Sequence means are averaged over the dataset
//! at the end of the epoch.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DeepSsm;
use crate::error::{Error, Result};
use crate::kspectral::{top_k_sum, KSpectralReport};
use crate::signals::{dft_magnitudes_slice, normalize_slice, Signal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
    /// Split each training sequence into windows of this length.
    pub window: Option<usize>,
    /// Rescale the minibatch gradient to at most this Euclidean norm.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 1,
            k: 4,
            seed: 0,
            window: None,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("window length must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("gradient clip {c}")));
            }
        }
        Ok(())
    }
}

/// One training sequence: `inputs[k][t]`, `targets[o][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn siso(u: &Signal, y: &Signal) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::LengthMismatch {
                left: u.len(),
                right: y.len(),
            });
        }
        Ok(Sequence {
            inputs: vec![u.samples().to_vec()],
            targets: vec![y.samples().to_vec()],
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn input_refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }

    fn target_refs(&self) -> Vec<&[f64]> {
        self.targets.iter().map(Vec::as_slice).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub sequences: Vec<Sequence>,
}

impl TrainingSet {
    pub fn new(sequences: Vec<Sequence>) -> Self {
        TrainingSet { sequences }
    }

    /// A single input/output recording, optionally cut into equal windows
    /// (a trailing remainder shorter than the window is dropped).
    pub fn from_recording(u: &Signal, y: &Signal, window: Option<usize>) -> Result<Self> {
        let whole = Sequence::siso(u, y)?;
        let Some(w) = window.filter(|&w| w < u.len()) else {
            return Ok(TrainingSet::new(vec![whole]));
        };
        if w == 0 {
            return Err(Error::Config("window length must be >= 1".into()));
        }
        let sequences = (0..u.len() / w)
            .map(|n| Sequence {
                inputs: vec![u.samples()[n * w..(n + 1) * w].to_vec()],
                targets: vec![y.samples()[n * w..(n + 1) * w].to_vec()],
            })
            .collect();
        Ok(TrainingSet::new(sequences))
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Normalized-signal DFT magnitudes captured during an epoch, kept so that the
/// metric can be recomputed for other `K` without retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedSpectra {
    /// Channels per layer.
    pub channels: usize,
    /// `spectra[n][j]`: sequence `n`, channel `j` (layer-major); `None` for
    /// an all-zero channel.
    pub spectra: Vec<Vec<Option<Vec<f64>>>>,
}

impl CapturedSpectra {
    /// Recomputes the dataset-level metric and per-layer means for `k`.
    pub fn metric(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        let mut agg = MetricAccumulator::new(k, self.channels);
        for seq in &self.spectra {
            agg.push_sequence(seq.iter().map(|s| s.as_deref()))?;
        }
        let report = agg.finish()?;
        let per_layer = agg.per_layer();
        Ok((report.dataset_mean, per_layer))
    }
}

/// Result of one (possibly update-free) pass over a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    /// Dataset-level metric R̄.
    pub r_bar: f64,
    /// Channel-mean metric per SSM layer, averaged over sequences.
    pub per_layer_r: Vec<f64>,
    /// Mean per-sequence loss (measured before each minibatch update).
    pub train_loss: f64,
    pub report: KSpectralReport,
    pub skipped_channels: usize,
    pub spectra: Option<CapturedSpectra>,
}

/// `R̄ⁿ ← (N R̄ⁿ + R)/(N + 1)`, the per-sequence running mean.
fn running_mean(mean: f64, count: usize, value: f64) -> f64 {
    (count as f64 * mean + value) / (count as f64 + 1.0)
}

struct MetricAccumulator {
    k: usize,
    channels: usize,
    t: usize,
    per_channel: Vec<Vec<Option<f64>>>,
    sequence_mean: Vec<f64>,
    r_sum: f64,
    layer_sums: Vec<f64>,
    layer_counts: Vec<usize>,
    skipped: usize,
}

impl MetricAccumulator {
    fn new(k: usize, channels: usize) -> Self {
        MetricAccumulator {
            k,
            channels,
            t: 0,
            per_channel: Vec::new(),
            sequence_mean: Vec::new(),
            r_sum: 0.0,
            layer_sums: Vec::new(),
            layer_counts: Vec::new(),
            skipped: 0,
        }
    }

    /// Adds one sequence given each channel's normalized spectrum (or `None`).
    fn push_sequence<'a>(&mut self, spectra: impl Iterator<Item = Option<&'a [f64]>>) -> Result<()> {
        let mut r_n = 0.0;
        let mut n_ssm = 0;
        let mut values = Vec::new();
        for (j, spec) in spectra.enumerate() {
            let layer = j / self.channels;
            if self.layer_sums.len() <= layer {
                self.layer_sums.resize(layer + 1, 0.0);
                self.layer_counts.resize(layer + 1, 0);
            }
            let Some(spec) = spec else {
                self.skipped += 1;
                values.push(None);
                continue;
            };
            if self.k == 0 || self.k > spec.len() {
                return Err(Error::BadK {
                    k: self.k,
                    t: spec.len(),
                });
            }
            self.t = spec.len();
            let r = top_k_sum(spec, self.k);
            r_n = running_mean(r_n, n_ssm, r);
            n_ssm += 1;
            values.push(Some(r));
        }
        for (layer, chunk) in values.chunks(self.channels).enumerate() {
            let live: Vec<f64> = chunk.iter().flatten().copied().collect();
            if !live.is_empty() {
                self.layer_sums[layer] += live.iter().sum::<f64>() / live.len() as f64;
                self.layer_counts[layer] += 1;
            }
        }
        if n_ssm == 0 {
            log::debug!("every SSM input channel was zero for this sequence");
        }
        self.per_channel.push(values);
        self.sequence_mean.push(r_n);
        self.r_sum += r_n;
        Ok(())
    }

    fn per_layer(&self) -> Vec<f64> {
        self.layer_sums
            .iter()
            .zip(&self.layer_counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect()
    }

    fn finish(&self) -> Result<KSpectralReport> {
        if self.sequence_mean.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(KSpectralReport {
            k: self.k,
            t: self.t,
            per_channel: self.per_channel.clone(),
            sequence_mean: self.sequence_mean.clone(),
            dataset_mean: self.r_sum / self.sequence_mean.len() as f64,
        })
    }
}

fn capture_spectra(layers: &[Vec<Vec<f64>>]) -> Vec<Option<Vec<f64>>> {
    layers
        .iter()
        .flatten()
        .map(|signal| match normalize_slice(signal) {
            Ok(unit) => Some(dft_magnitudes_slice(&unit)),
            Err(_) => None,
        })
        .collect()
}

fn run_pass(
    model: &mut DeepSsm,
    data: &TrainingSet,
    cfg: &TrainConfig,
    epoch: usize,
    update: bool,
    keep_spectra: bool,
) -> Result<EpochOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let channels = model.config().channels;
    let mut order: Vec<usize> = (0..data.len()).collect();
    if update {
        let mut rng = crate::seeded_rng(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
    }
    let mut acc = MetricAccumulator::new(cfg.k, channels);
    let mut kept = Vec::new();
    let mut loss_sum = 0.0;
    let n_params = model.params().len();

    for batch in order.chunks(cfg.batch_size) {
        let mut grad_sum = vec![0.0; n_params];
        for &n in batch {
            let seq = &data.sequences[n];
            let (loss, grad, trace) = model.loss_grad_trace(&seq.input_refs(), &seq.target_refs())?;
            loss_sum += loss;
            for (g, v) in grad_sum.iter_mut().zip(grad.as_slice()) {
                *g += v;
            }
            let spectra = capture_spectra(&trace.u);
            acc.push_sequence(spectra.iter().map(|s| s.as_deref()))?;
            if keep_spectra {
                kept.push(spectra);
            }
        }
        if update && cfg.learning_rate > 0.0 {
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grad_sum {
                *g *= inv;
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = crate::signals::l2_norm(&grad_sum);
                if norm > clip {
                    let s = clip / norm;
                    grad_sum.iter_mut().for_each(|g| *g *= s);
                }
            }
            for (p, g) in model.params_mut().iter_mut().zip(&grad_sum) {
                *p -= cfg.learning_rate * g;
            }
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("parameters after update".into()));
            }
        }
    }

    let report = acc.finish()?;
    if acc.skipped > 0 {
        log::info!("skipped {} all-zero SSM input channels", acc.skipped);
    }
    Ok(EpochOutcome {
        r_bar: report.dataset_mean,
        per_layer_r: acc.per_layer(),
        train_loss: loss_sum / data.len() as f64,
        report,
        skipped_channels: acc.skipped,
        spectra: keep_spectra.then_some(CapturedSpectra {
            channels,
            spectra: kept,
        }),
    })
}

/// One epoch of minibatch SGD that measures R̄ along the way.
pub fn train_epoch_with_metric(
    model: &mut DeepSsm,
    data: &TrainingSet,
    cfg: &TrainConfig,
    epoch: usize,
    keep_spectra: bool,
) -> Result<EpochOutcome> {
    run_pass(model, data, cfg, epoch, true, keep_spectra)
}

/// The metric of the current parameters, with no update (the epoch-0 view).
pub fn measure_metric(
    model: &DeepSsm,
    data: &TrainingSet,
    cfg: &TrainConfig,
    keep_spectra: bool,
) -> Result<EpochOutcome> {
    let mut scratch = model.clone();
    run_pass(&mut scratch, data, cfg, 0, false, keep_spectra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep_ssm::DeepSsmConfig;
    use crate::kspectral::{aggregate, k_spectral};
    use crate::signals::{dft_magnitudes, normalize};
    use crate::ssm::StateSpaceParams;

    fn wave(n: usize, f: f64) -> Signal {
        Signal::new((0..n).map(|t| (t as f64 * f).sin() + 0.3 * (t as f64 * 2.7 * f).cos()).collect()).unwrap()
    }

    fn cfg(eta: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: eta,
            k: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_model_alone() {
        let mut m = DeepSsm::init(DeepSsmConfig::default(), 3).unwrap();
        let before = m.clone();
        let u = wave(64, 0.3);
        let y = wave(64, 0.2);
        let data = TrainingSet::from_recording(&u, &y, None).unwrap();
        let out = train_epoch_with_metric(&mut m, &data, &cfg(0.0), 1, false).unwrap();
        assert_eq!(m, before);
        let measured = measure_metric(&before, &data, &cfg(0.0), false).unwrap();
        assert_eq!(out.r_bar, measured.r_bar);
    }

    #[test]
    fn metric_matches_offline_recomputation() {
        let mut m = DeepSsm::init(DeepSsmConfig::default(), 4).unwrap();
        {
            let (w, b) = m.input_layer_mut();
            w.copy_from_slice(&[1.0, -0.5, 2.0, 0.25]);
            b.copy_from_slice(&[0.1, 0.0, -0.2, 0.3]);
        }
        let u = wave(128, 0.17);
        let y = wave(128, 0.05);
        let data = TrainingSet::from_recording(&u, &y, None).unwrap();
        let out = train_epoch_with_metric(&mut m.clone(), &data, &cfg(1e-2), 1, false).unwrap();
        let (wi, bi) = m.input_layer();
        let per_channel: Vec<f64> = (0..4)
            .map(|j| {
                let s = Signal::new(u.samples().iter().map(|x| super::super::silu(wi[j] * x + bi[j])).collect())
                    .unwrap();
                k_spectral(&dft_magnitudes(&normalize(&s).unwrap()), 4).unwrap()
            })
            .collect();
        let expect = aggregate(&per_channel).unwrap();
        assert!((out.r_bar - expect).abs() < 1e-12);
        assert!(out.report.check_bounds());
        assert_eq!(out.per_layer_r.len(), 1);
        assert!((out.per_layer_r[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn duplicate_sequences_do_not_change_the_mean() {
        let m = DeepSsm::init(DeepSsmConfig::default(), 5).unwrap();
        let u = wave(64, 0.4);
        let y = wave(64, 0.1);
        let one = TrainingSet::new(vec![Sequence::siso(&u, &y).unwrap()]);
        let two = TrainingSet::new(vec![Sequence::siso(&u, &y).unwrap(); 2]);
        let c = TrainConfig {
            batch_size: 2,
            ..cfg(1e-2)
        };
        let a = train_epoch_with_metric(&mut m.clone(), &one, &c, 1, false).unwrap();
        let b = train_epoch_with_metric(&mut m.clone(), &two, &c, 1, false).unwrap();
        assert!((a.r_bar - b.r_bar).abs() < 1e-12);
    }

    #[test]
    fn zero_channels_are_skipped() {
        let cfgm = DeepSsmConfig::default();
        let mut m = DeepSsm::init(cfgm, 6).unwrap();
        {
            let (w, b) = m.input_layer_mut();
            w[1] = 0.0;
            b[1] = 0.0;
        }
        let u = wave(64, 0.3);
        let data = TrainingSet::from_recording(&u, &u, None).unwrap();
        let out = measure_metric(&m, &data, &cfg(0.0), false).unwrap();
        assert_eq!(out.skipped_channels, 1);
        let live: Vec<f64> = out.report.per_channel[0].iter().flatten().copied().collect();
        assert_eq!(live.len(), 3);
        assert!((out.r_bar - aggregate(&live).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn stored_spectra_reproduce_the_metric_exactly() {
        let mut m = DeepSsm::init(DeepSsmConfig::default(), 7).unwrap();
        let u = wave(200, 0.21);
        let y = wave(200, 0.09);
        let data = TrainingSet::from_recording(&u, &y, Some(50)).unwrap();
        assert_eq!(data.len(), 4);
        let out = train_epoch_with_metric(&mut m, &data, &cfg(1e-2), 1, true).unwrap();
        let (r, layers) = out.spectra.as_ref().unwrap().metric(4).unwrap();
        assert_eq!(r.to_bits(), out.r_bar.to_bits());
        assert_eq!(layers, out.per_layer_r);
        assert!(matches!(out.spectra.unwrap().metric(51), Err(Error::BadK { .. })));
    }

    #[test]
    fn metric_ignores_input_scale_through_identity_layer() {
        // identity first layer region: scaling a captured signal leaves R unchanged
        let s: Vec<f64> = (0..90).map(|t| (t as f64 * 0.3).sin() + 0.5).collect();
        let scaled: Vec<f64> = s.iter().map(|v| v * -7.0).collect();
        let a = capture_spectra(&[vec![s]]);
        let b = capture_spectra(&[vec![scaled]]);
        let ra = top_k_sum(a[0].as_ref().unwrap(), 4);
        let rb = top_k_sum(b[0].as_ref().unwrap(), 4);
        assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn loss_falls_on_a_realizable_linear_target() {
        let mut improved = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let teacher = StateSpaceParams::scalar(0.6, 1.0, 0.5, 0.2);
            let mut rng = crate::seeded_rng(100 + seed);
            use rand::Rng;
            let u = Signal::new((0..200).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = crate::ssm::simulate_ssm(&teacher, &u, &nalgebra::DVector::zeros(1)).unwrap().output;
            let data = TrainingSet::from_recording(&u, &y, Some(50)).unwrap();
            let mut m = DeepSsm::init(DeepSsmConfig::default(), seed).unwrap();
            let c = TrainConfig {
                learning_rate: 0.05,
                ..cfg(0.05)
            };
            let mut losses = Vec::new();
            for e in 1..=6 {
                losses.push(train_epoch_with_metric(&mut m, &data, &c, e, false).unwrap().train_loss);
            }
            if losses.windows(2).take(5).all(|w| w[1] < w[0]) {
                improved += 1;
            }
        }
        assert!(improved * 10 >= seeds * 9, "{improved}/{seeds} seeds improved monotonically");
    }

    #[test]
    fn windows_drop_short_tail() {
        let u = wave(105, 0.2);
        let data = TrainingSet::from_recording(&u, &u, Some(25)).unwrap();
        assert_eq!(data.len(), 4);
        assert!(data.sequences.iter().all(|s| s.len() == 25));
        let whole = TrainingSet::from_recording(&u, &u, Some(500)).unwrap();
        assert_eq!(whole.len(), 1);
    }
}
