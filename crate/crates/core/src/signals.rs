//! Real-valued time series, their DFT magnitude spectra, and the small set of
//! reductions the rest of the crate builds on.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, nonempty real time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Signal(Vec<f64>);

impl Signal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i}")));
        }
        Ok(Signal(samples))
    }

    /// Builds a signal from samples the caller already knows to be finite.
    pub(crate) fn from_vec_unchecked(samples: Vec<f64>) -> Self {
        debug_assert!(!samples.is_empty());
        Signal(samples)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    /// Returns the samples in `range` as a new signal.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Signal> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {range:?} of a signal of length {}",
                self.len()
            )));
        }
        Ok(Signal(self.0[range].to_vec()))
    }

    /// Writes one sample per line, no header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for x in &self.0 {
            writeln!(w, "{x:?}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Signal> {
        let mut samples = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let field = line.trim();
            if field.is_empty() {
                continue;
            }
            let x: f64 = field.parse().map_err(|_| {
                Error::InvalidArgument(format!("line {}: cannot parse {field:?}", lineno + 1))
            })?;
            samples.push(x);
        }
        Signal::new(samples)
    }

    /// Binary container: `KSIG`, little-endian `u32` version (1), `u64` length,
    /// then the samples as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for x in &self.0 {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Signal> {
        let bad = |msg: &str| Error::InvalidArgument(format!("signal container: {msg}"));
        if bytes.len() < 16 || &bytes[..4] != BINARY_MAGIC {
            return Err(bad("missing header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BINARY_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != len * 8 {
            return Err(bad("truncated body"));
        }
        let samples = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Signal::new(samples)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"KSIG";
const BINARY_VERSION: u32 = 1;

impl TryFrom<Vec<f64>> for Signal {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Signal::new(v)
    }
}

impl From<Signal> for Vec<f64> {
    fn from(s: Signal) -> Self {
        s.0
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// DFT magnitudes of a length-T signal, all T bins kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Wraps precomputed magnitudes. Values must be finite and non-negative.
    pub fn from_magnitudes(magnitudes: Vec<f64>) -> Result<Self> {
        if magnitudes.is_empty() {
            return Err(Error::EmptyInput);
        }
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidArgument(
                "spectrum magnitudes must be finite and non-negative".into(),
            ));
        }
        Ok(Spectrum { magnitudes })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn source_length(&self) -> usize {
        self.magnitudes.len()
    }

    /// Σ_s |U_s|².
    pub fn energy(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum()
    }
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    // scaled accumulation keeps huge/tiny samples from overflowing
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

/// Divides a signal by its Euclidean norm.
pub fn normalize(x: &Signal) -> Result<Signal> {
    normalize_slice(x.samples()).map(Signal::from_vec_unchecked)
}

pub(crate) fn normalize_slice(x: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(x);
    if n == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(x.iter().map(|v| v / n).collect())
}

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// |Σ_t x_t e^{-j2πst/T}| for s = 0..T-1, no window.
pub fn dft_magnitudes(x: &Signal) -> Spectrum {
    Spectrum {
        magnitudes: dft_magnitudes_slice(x.samples()),
    }
}

pub(crate) fn dft_magnitudes_slice(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    plan(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Mean of squared elementwise differences.
pub fn mse(a: &Signal, b: &Signal) -> Result<f64> {
    mse_slice(a.samples(), b.samples())
}

pub(crate) fn mse_slice(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}
