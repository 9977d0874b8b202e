//! How informative is an input signal? Autocovariance and persistence of
//! excitation, least-squares FIR identification over the Toeplitz regressor,
//! Fisher information for FIR parameters in the time and frequency domains,
//! and the excitation signals used by the identification experiments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{l2_norm, Signal, Spectrum};
use crate::ssm::FirCoefficients;

/// Sample mean and autocovariance `r(0..=L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSequence {
    pub mean: f64,
    pub r: Vec<f64>,
}

impl CovarianceSequence {
    pub fn max_lag(&self) -> usize {
        self.r.len() - 1
    }
}

fn centered(u: &Signal) -> (f64, Vec<f64>) {
    let t = u.len() as f64;
    let mean = u.samples().iter().sum::<f64>() / t;
    (mean, u.samples().iter().map(|x| x - mean).collect())
}

fn check_lag(u: &Signal, lag: usize) -> Result<()> {
    if lag >= u.len() {
        return Err(Error::LagTooLarge { lag, len: u.len() });
    }
    Ok(())
}

/// `r(l) = (1/T) Σ_{t=0}^{T-1-l} (u_{t+l} - ū)(u_t - ū)`.
pub fn autocovariance(u: &Signal, max_lag: usize) -> Result<CovarianceSequence> {
    check_lag(u, max_lag)?;
    let (mean, c) = centered(u);
    let t = c.len();
    let r = (0..=max_lag)
        .map(|l| c[l..].iter().zip(&c[..t - l]).map(|(a, b)| a * b).sum::<f64>() / t as f64)
        .collect();
    Ok(CovarianceSequence { mean, r })
}

/// Periodic estimate `r(l) = (1/T) Σ_t (u_{(t+l) mod T} - ū)(u_t - ū)`.
///
/// Its Toeplitz matrices have rank `min(d, #nonzero DFT bins of u - ū)`, so a
/// signal made of whole-period sinusoids gets exactly the order its spectrum
/// supports.
pub fn circular_autocovariance(u: &Signal, max_lag: usize) -> Result<CovarianceSequence> {
    check_lag(u, max_lag)?;
    let (mean, c) = centered(u);
    let t = c.len();
    let r = (0..=max_lag)
        .map(|l| (0..t).map(|i| c[(i + l) % t] * c[i]).sum::<f64>() / t as f64)
        .collect();
    Ok(CovarianceSequence { mean, r })
}

/// Symmetric Toeplitz matrix `[r(|i-j|)]` of order `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeMatrix {
    pub matrix: DMatrix<f64>,
}

impl PeMatrix {
    pub fn from_covariance(cov: &CovarianceSequence, order: usize) -> Result<Self> {
        if order == 0 || order > cov.r.len() {
            return Err(Error::InvalidArgument(format!(
                "order {order} needs lags 0..{order} but only {} are available",
                cov.r.len()
            )));
        }
        Ok(PeMatrix {
            matrix: DMatrix::from_fn(order, order, |i, j| cov.r[i.abs_diff(j)]),
        })
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Default relative eigenvalue tolerance for [`pe_order`].
pub const DEFAULT_PE_TOL: f64 = 1e-6;

/// Largest `d <= max_order` whose PE matrix has minimum eigenvalue above
/// `tol * r(0)`; 0 when order 1 already fails.
pub fn pe_order(u: &Signal, max_order: usize, tol: f64) -> Result<usize> {
    if max_order >= u.len() {
        return Err(Error::LagTooLarge {
            lag: max_order,
            len: u.len(),
        });
    }
    if max_order == 0 {
        return Ok(0);
    }
    let cov = circular_autocovariance(u, max_order - 1)?;
    let threshold = tol * cov.r[0];
    if cov.r[0] <= 0.0 {
        return Ok(0);
    }
    let mut order = 0;
    for d in 1..=max_order {
        // orders are nested principal submatrices, so the first failure ends it
        if PeMatrix::from_covariance(&cov, d)?.min_eigenvalue() > threshold {
            order = d;
        } else {
            break;
        }
    }
    Ok(order)
}

/// Rows `[u_{t-1}, ..., u_{t-d}]` for `t = d..T-1`.
pub fn toeplitz_regressor(u: &[f64], d: usize) -> DMatrix<f64> {
    let rows = u.len().saturating_sub(d);
    DMatrix::from_fn(rows, d, |r, k| u[r + d - 1 - k])
}

/// Relative singular-value cut below which the regressor is rank deficient.
pub const RANK_TOL: f64 = 1e-8;

/// Least-squares fit of `y_t = Σ_{i=1}^{d} θ_i u_{t-i}`. The returned
/// coefficients carry `θ_0 = 0`.
pub fn estimate_fir_ls(u: &Signal, y: &Signal, d: usize) -> Result<FirCoefficients> {
    if u.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: y.len(),
        });
    }
    if d == 0 || u.len() <= 2 * d {
        return Err(Error::InvalidArgument(format!(
            "need T > 2d, got T = {} and d = {d}",
            u.len()
        )));
    }
    let reg = toeplitz_regressor(u.samples(), d);
    let target = DVector::from_column_slice(&y.samples()[d..]);
    let svd = reg.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio < RANK_TOL {
        return Err(Error::RankDeficient { ratio });
    }
    let theta = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residual = (&reg * &theta - &target).norm();
    Ok(FirCoefficients {
        theta: std::iter::once(0.0).chain(theta.iter().copied()).collect(),
        tail_bound: 0.0,
        residual_norm: Some(residual),
    })
}

/// Fisher information over FIR parameters for output noise of variance `sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    pub matrix: DMatrix<f64>,
    pub sigma: f64,
    trace: f64,
}

impl Fim {
    fn new(matrix: DMatrix<f64>, sigma: f64) -> Self {
        let trace = matrix.trace();
        Fim {
            matrix,
            sigma,
            trace,
        }
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma}")));
    }
    Ok(())
}

/// `M = U_Tᵀ U_T / σ`.
pub fn fim_fir_time(u: &Signal, d: usize, sigma: f64) -> Result<Fim> {
    check_sigma(sigma)?;
    if d == 0 || u.len() <= d {
        return Err(Error::InvalidArgument(format!(
            "need T > d, got T = {} and d = {d}",
            u.len()
        )));
    }
    let reg = toeplitz_regressor(u.samples(), d);
    Ok(Fim::new(reg.tr_mul(&reg) / sigma, sigma))
}

/// `M[i,k] = (1/(σT)) Σ_s |U_s|² cos(2πs(i-k)/T)`, the discrete-frequency
/// form with `∂G/∂θ_i = e^{-jωi}`.
pub fn fim_fir_freq(spec: &Spectrum, d: usize, sigma: f64) -> Result<Fim> {
    check_sigma(sigma)?;
    if d == 0 {
        return Err(Error::InvalidArgument("FIR order must be at least 1".into()));
    }
    let t = spec.source_length();
    let power: Vec<f64> = spec.magnitudes().iter().map(|m| m * m).collect();
    let lag_value = |lag: usize| -> f64 {
        power
            .iter()
            .enumerate()
            .map(|(s, p)| {
                let w = 2.0 * std::f64::consts::PI * ((s * lag) % t) as f64 / t as f64;
                p * w.cos()
            })
            .sum::<f64>()
            / (sigma * t as f64)
    };
    let lags: Vec<f64> = (0..d).map(lag_value).collect();
    Ok(Fim::new(DMatrix::from_fn(d, d, |i, k| lags[i.abs_diff(k)]), sigma))
}

/// A-optimality score `tr(M)`.
pub fn a_optimality(m: &Fim) -> f64 {
    m.trace()
}

/// Metadata sufficient to regenerate a multisine bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub seed: u64,
    pub components: usize,
    pub length: usize,
    pub integer_bins: bool,
    /// ω_j in cycles per record.
    pub frequencies: Vec<f64>,
    /// ψ_j; the phase offset applied is `4πψ_j/T`.
    pub phases: Vec<f64>,
    pub amplitude: f64,
    pub target_norm: f64,
}

impl MultisineSpec {
    fn raw(&self) -> Vec<f64> {
        raw_multisine(&self.frequencies, &self.phases, self.length)
    }

    /// Regenerates the signal from metadata alone.
    pub fn synthesize(&self) -> Result<Signal> {
        Signal::new(self.raw().into_iter().map(|x| self.amplitude * x).collect())
    }
}

fn raw_multisine(freqs: &[f64], phases: &[f64], t_len: usize) -> Vec<f64> {
    let tf = t_len as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..t_len)
        .map(|t| {
            freqs
                .iter()
                .zip(phases)
                .map(|(w, psi)| (two_pi * w * t as f64 / tf + 2.0 * two_pi * psi / tf).sin())
                .sum()
        })
        .collect()
}

/// `u_t = c Σ_{j<i} sin(2πω_j t/T + 4πψ_j/T)` with `ω_j, ψ_j ~ U(0, T/2)`,
/// scaled so that `‖u‖₂ = target_norm`. With `integer_bins`, the ω_j are
/// distinct integers in `[1, T/2)`.
pub fn gen_multisine(
    components: usize,
    t_len: usize,
    target_norm: f64,
    seed: u64,
    integer_bins: bool,
) -> Result<(Signal, MultisineSpec)> {
    if components == 0 || t_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "multisine needs i >= 1 and T >= 2, got i = {components}, T = {t_len}"
        )));
    }
    let half = t_len as f64 / 2.0;
    let mut rng = crate::seeded_rng(seed);
    let frequencies: Vec<f64> = if integer_bins {
        let available = t_len.div_ceil(2) - 1;
        if components > available {
            return Err(Error::InvalidArgument(format!(
                "{components} distinct bins requested but only {available} lie in [1, T/2)"
            )));
        }
        let mut bins: Vec<f64> = rand::seq::index::sample(&mut rng, available, components)
            .into_iter()
            .map(|b| (b + 1) as f64)
            .collect();
        bins.sort_by(f64::total_cmp);
        bins
    } else {
        (0..components).map(|_| rng.random_range(0.0..half)).collect()
    };
    let draw_phases = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..components).map(|_| rng.random_range(0.0..half)).collect()
    };
    let mut phases = draw_phases(&mut rng);
    let mut raw = raw_multisine(&frequencies, &phases, t_len);
    if l2_norm(&raw) == 0.0 {
        phases = draw_phases(&mut rng);
        raw = raw_multisine(&frequencies, &phases, t_len);
        if l2_norm(&raw) == 0.0 {
            return Err(Error::DegenerateSignal);
        }
    }
    let amplitude = target_norm / l2_norm(&raw);
    let spec = MultisineSpec {
        seed,
        components,
        length: t_len,
        integer_bins,
        frequencies,
        phases,
        amplitude,
        target_norm,
    };
    let signal = Signal::new(raw.into_iter().map(|x| amplitude * x).collect())?;
    Ok((signal, spec))
}

/// Levels drawn i.i.d. from U(-1, 1), each held for `interval` steps, then
/// scaled to `target_norm`.
pub fn gen_piecewise_constant(
    t_len: usize,
    interval: usize,
    target_norm: f64,
    seed: u64,
) -> Result<Signal> {
    if interval == 0 || t_len == 0 {
        return Err(Error::InvalidArgument("interval and length must be positive".into()));
    }
    let mut rng = crate::seeded_rng(seed);
    let levels: Vec<f64> = (0..t_len.div_ceil(interval))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let raw: Vec<f64> = (0..t_len).map(|t| levels[t / interval]).collect();
    let n = l2_norm(&raw);
    if n == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    Signal::new(raw.into_iter().map(|x| x * target_norm / n).collect())
}
