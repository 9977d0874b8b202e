//! A small deep SSM: linear input layer → SiLU → banks of SISO SSM channels
//! (SiLU between consecutive banks) → SiLU → linear output layer.
//!
//! Parameters live in one flat vector so that SGD, finite differences and
//! checkpoints all see the same layout:
//!
//! ```text
//! [ W_in (d_in × n_in, row-major) | b_in (d_in)
//!   | for each layer, for each channel: A (d×d row-major) | b (d) | c (d) | D
//!   | W_out (n_out × d_in, row-major) | b_out (n_out) ]
//! ```

mod grad;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{mse_slice, Signal};
use crate::ssm::StateSpaceParams;

pub use grad::Gradient;
pub use train::{
    measure_metric, train_epoch_with_metric, CapturedSpectra, EpochOutcome, Sequence, TrainConfig,
    TrainingSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepSsmConfig {
    /// States per SSM channel (`d`).
    pub state_dim: usize,
    /// SSM channels per layer (`d_in`).
    pub channels: usize,
    pub ssm_layers: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Default for DeepSsmConfig {
    fn default() -> Self {
        DeepSsmConfig {
            state_dim: 4,
            channels: 4,
            ssm_layers: 1,
            input_dim: 1,
            output_dim: 1,
        }
    }
}

impl DeepSsmConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.state_dim,
            self.channels,
            self.ssm_layers,
            self.input_dim,
            self.output_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Number of captured SSM input signals per sequence.
    pub fn n_ssm(&self) -> usize {
        self.channels * self.ssm_layers
    }

    fn channel_params(&self) -> usize {
        let d = self.state_dim;
        d * d + 2 * d + 1
    }

    pub fn num_params(&self) -> usize {
        self.channels * self.input_dim
            + self.channels
            + self.n_ssm() * self.channel_params()
            + self.output_dim * self.channels
            + self.output_dim
    }
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub cfg: DeepSsmConfig,
    pub w_in: usize,
    pub b_in: usize,
    pub ssm: usize,
    pub w_out: usize,
    pub b_out: usize,
}

impl Layout {
    fn new(cfg: DeepSsmConfig) -> Self {
        let w_in = 0;
        let b_in = w_in + cfg.channels * cfg.input_dim;
        let ssm = b_in + cfg.channels;
        let w_out = ssm + cfg.n_ssm() * cfg.channel_params();
        let b_out = w_out + cfg.output_dim * cfg.channels;
        Layout {
            cfg,
            w_in,
            b_in,
            ssm,
            w_out,
            b_out,
        }
    }

    /// Start of channel `i` in layer `l`; A, b, c, D follow in that order.
    pub fn channel(&self, l: usize, i: usize) -> ChannelOffsets {
        let d = self.cfg.state_dim;
        let a = self.ssm + (l * self.cfg.channels + i) * self.cfg.channel_params();
        ChannelOffsets {
            a,
            b: a + d * d,
            c: a + d * d + d,
            d: a + d * d + 2 * d,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ChannelOffsets {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
}

/// SSM input signals captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedSignals {
    /// `layers[l][i]` is `u^{l,i}_{0:T-1}`.
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl CapturedSignals {
    pub fn n_ssm(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, chans)| chans.iter().enumerate().map(move |(i, s)| (l, i, s.as_slice())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSsm {
    config: DeepSsmConfig,
    params: Vec<f64>,
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    /// Input-layer pre-activations, `[channel][t]`.
    pub z_in: Vec<Vec<f64>>,
    /// `u[l][i][t]`: input of SSM channel `i` in layer `l`.
    pub u: Vec<Vec<Vec<f64>>>,
    /// `x[l][i][t*d + k]`: state component `k` at time `t`.
    pub x: Vec<Vec<Vec<f64>>>,
    /// `y[l][i][t]`: SSM outputs.
    pub y: Vec<Vec<Vec<f64>>>,
    /// `out[o][t]`.
    pub out: Vec<Vec<f64>>,
}

impl DeepSsm {
    /// Scaled-uniform linear layers and stable random SSM channels.
    pub fn init(config: DeepSsmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = crate::seeded_rng(seed);
        let mut params = vec![0.0; config.num_params()];
        let bound_in = 1.0 / (config.input_dim as f64).sqrt();
        for p in &mut params[layout.w_in..layout.ssm] {
            *p = rng.random_range(-bound_in..bound_in);
        }
        let d = config.state_dim;
        for l in 0..config.ssm_layers {
            for i in 0..config.channels {
                let ssm = random_stable_channel(&mut rng, d);
                let off = layout.channel(l, i);
                write_ssm(&mut params, off, &ssm);
            }
        }
        let bound_out = 1.0 / (config.channels as f64).sqrt();
        for p in &mut params[layout.w_out..] {
            *p = rng.random_range(-bound_out..bound_out);
        }
        Ok(DeepSsm { config, params })
    }

    pub fn from_params(config: DeepSsmConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                config.num_params(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(DeepSsm { config, params })
    }

    pub fn config(&self) -> &DeepSsmConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.config)
    }

    /// `(weight, bias)` of the input layer; weight is `d_in × n_in`, row-major.
    pub fn input_layer(&self) -> (&[f64], &[f64]) {
        let lay = self.layout();
        (&self.params[lay.w_in..lay.b_in], &self.params[lay.b_in..lay.ssm])
    }

    pub fn input_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let lay = self.layout();
        let (w, rest) = self.params[lay.w_in..lay.ssm].split_at_mut(lay.b_in - lay.w_in);
        (w, rest)
    }

    /// `(weight, bias)` of the output layer; weight is `n_out × d_in`, row-major.
    pub fn output_layer(&self) -> (&[f64], &[f64]) {
        let lay = self.layout();
        (&self.params[lay.w_out..lay.b_out], &self.params[lay.b_out..])
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let lay = self.layout();
        let (w, rest) = self.params[lay.w_out..].split_at_mut(lay.b_out - lay.w_out);
        (w, rest)
    }

    pub fn ssm(&self, layer: usize, channel: usize) -> StateSpaceParams {
        let d = self.config.state_dim;
        let off = self.layout().channel(layer, channel);
        let p = &self.params;
        StateSpaceParams {
            a: DMatrix::from_row_slice(d, d, &p[off.a..off.b]),
            b: DVector::from_column_slice(&p[off.b..off.c]),
            c: DVector::from_column_slice(&p[off.c..off.d]),
            d: p[off.d],
        }
    }

    pub fn set_ssm(&mut self, layer: usize, channel: usize, ssm: &StateSpaceParams) -> Result<()> {
        if ssm.state_dim() != self.config.state_dim {
            return Err(Error::DimensionMismatch(format!(
                "model channels have {} states, got {}",
                self.config.state_dim,
                ssm.state_dim()
            )));
        }
        let off = self.layout().channel(layer, channel);
        write_ssm(&mut self.params, off, ssm);
        Ok(())
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<usize> {
        if inputs.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "model takes {} input channels, got {}",
                self.config.input_dim,
                inputs.len()
            )));
        }
        let t = inputs[0].len();
        if t == 0 {
            return Err(Error::EmptyInput);
        }
        if inputs.iter().any(|s| s.len() != t) {
            return Err(Error::DimensionMismatch("input channels differ in length".into()));
        }
        Ok(t)
    }

    pub(crate) fn forward_trace(&self, inputs: &[&[f64]]) -> Result<Trace> {
        let t_len = self.check_inputs(inputs)?;
        let cfg = self.config;
        let lay = self.layout();
        let p = &self.params;
        let (n_in, n_ch, d) = (cfg.input_dim, cfg.channels, cfg.state_dim);

        let z_in: Vec<Vec<f64>> = (0..n_ch)
            .map(|j| {
                let w = &p[lay.w_in + j * n_in..lay.w_in + (j + 1) * n_in];
                let bias = p[lay.b_in + j];
                (0..t_len)
                    .map(|t| bias + w.iter().zip(inputs).map(|(wk, s)| wk * s[t]).sum::<f64>())
                    .collect()
            })
            .collect();

        let mut u = Vec::with_capacity(cfg.ssm_layers);
        let mut x = Vec::with_capacity(cfg.ssm_layers);
        let mut y: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.ssm_layers);
        for l in 0..cfg.ssm_layers {
            let prev = if l == 0 { &z_in } else { &y[l - 1] };
            let u_l: Vec<Vec<f64>> = prev.iter().map(|s| s.iter().map(|&v| silu(v)).collect()).collect();
            let mut x_l = Vec::with_capacity(n_ch);
            let mut y_l = Vec::with_capacity(n_ch);
            for (i, ui) in u_l.iter().enumerate() {
                let off = lay.channel(l, i);
                let (xs, ys) = run_channel(&p[off.a..off.b], &p[off.b..off.c], &p[off.c..off.d], p[off.d], d, ui);
                x_l.push(xs);
                y_l.push(ys);
            }
            u.push(u_l);
            x.push(x_l);
            y.push(y_l);
        }

        let last = y.last().expect("at least one layer");
        let h: Vec<Vec<f64>> = last.iter().map(|s| s.iter().map(|&v| silu(v)).collect()).collect();
        let out: Vec<Vec<f64>> = (0..cfg.output_dim)
            .map(|o| {
                let w = &p[lay.w_out + o * n_ch..lay.w_out + (o + 1) * n_ch];
                let bias = p[lay.b_out + o];
                (0..t_len)
                    .map(|t| bias + w.iter().zip(&h).map(|(wk, hk)| wk * hk[t]).sum::<f64>())
                    .collect()
            })
            .collect();

        if out.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward pass output".into()));
        }
        Ok(Trace { z_in, u, x, y, out })
    }

    /// Multichannel forward pass: returns `out[o][t]` and the captured SSM inputs.
    pub fn forward_multi(&self, inputs: &[&[f64]]) -> Result<(Vec<Vec<f64>>, CapturedSignals)> {
        let trace = self.forward_trace(inputs)?;
        Ok((trace.out, CapturedSignals { layers: trace.u }))
    }

    /// Single-input single-output forward pass.
    pub fn forward(&self, u0: &Signal) -> Result<(Signal, CapturedSignals)> {
        self.require_siso()?;
        let (mut out, cap) = self.forward_multi(&[u0.samples()])?;
        Ok((Signal::new(out.remove(0))?, cap))
    }

    fn require_siso(&self) -> Result<()> {
        if self.config.input_dim != 1 || self.config.output_dim != 1 {
            return Err(Error::DimensionMismatch(
                "scalar signal API needs input_dim = output_dim = 1".into(),
            ));
        }
        Ok(())
    }

    /// Test MSE of the model's response to `u_test` against `y_true`.
    pub fn predict_mse(&self, u_test: &Signal, y_true: &Signal) -> Result<f64> {
        if u_test.len() != y_true.len() {
            return Err(Error::LengthMismatch {
                left: u_test.len(),
                right: y_true.len(),
            });
        }
        let (y, _) = self.forward(u_test)?;
        mse_slice(y.samples(), y_true.samples())
    }

    pub fn all_channels_stable(&self) -> bool {
        (0..self.config.ssm_layers)
            .all(|l| (0..self.config.channels).all(|i| self.ssm(l, i).is_stable()))
    }
}

fn write_ssm(params: &mut [f64], off: ChannelOffsets, ssm: &StateSpaceParams) {
    let d = ssm.state_dim();
    for r in 0..d {
        for c in 0..d {
            params[off.a + r * d + c] = ssm.a[(r, c)];
        }
    }
    params[off.b..off.c].copy_from_slice(ssm.b.as_slice());
    params[off.c..off.d].copy_from_slice(ssm.c.as_slice());
    params[off.d] = ssm.d;
}

/// Stable channel: `A = Q diag(±r) Qᵀ` with random orthogonal `Q` and radii
/// `r ~ U(0.3, 0.95)`; `b, c ~ N(0, 1/d)` entrywise; `D = 0`.
fn random_stable_channel(rng: &mut impl Rng, d: usize) -> StateSpaceParams {
    let g: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let diag = DVector::from_fn(d, |_, _| {
        let r: f64 = rng.random_range(0.3..0.95);
        if rng.random_bool(0.5) {
            r
        } else {
            -r
        }
    });
    let a = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    let scale = 1.0 / (d as f64).sqrt();
    let b = DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    });
    let c = DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    });
    StateSpaceParams { a, b, c, d: 0.0 }
}

/// Runs one SISO channel from the zero state. Returns the flattened state
/// trajectory (`x[t*d + k]`) and the outputs.
fn run_channel(a: &[f64], b: &[f64], c: &[f64], dd: f64, d: usize, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t_len = u.len();
    let mut xs = vec![0.0; t_len * d];
    let mut ys = Vec::with_capacity(t_len);
    for t in 0..t_len {
        if t > 0 {
            let (before, rest) = xs.split_at_mut(t * d);
            let prev = &before[(t - 1) * d..];
            let cur = &mut rest[..d];
            for r in 0..d {
                let row = &a[r * d..(r + 1) * d];
                cur[r] = row.iter().zip(prev).map(|(ar, xp)| ar * xp).sum::<f64>() + b[r] * u[t - 1];
            }
        }
        let cur = &xs[t * d..(t + 1) * d];
        ys.push(c.iter().zip(cur).map(|(ci, xi)| ci * xi).sum::<f64>() + dd * u[t]);
    }
    (xs, ys)
}

/// Checkpoint: config, flat parameters, seed and epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: DeepSsmConfig,
    pub params: Vec<f64>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(model: &DeepSsm, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            config: model.config,
            params: model.params.clone(),
            seed,
            epoch,
        }
    }

    pub fn into_model(self) -> Result<DeepSsm> {
        DeepSsm::from_params(self.config, self.params)
    }
}
