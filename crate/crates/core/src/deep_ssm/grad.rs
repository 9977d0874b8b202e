//! Reverse-mode gradients through the unrolled recurrence.

use super::{silu, silu_grad, DeepSsm, Trace};
use crate::error::{Error, Result};
use crate::signals::Signal;

/// Gradient in the model's flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        crate::signals::l2_norm(&self.0)
    }
}

impl DeepSsm {
    /// `(1/T) Σ_t Σ_o (out_{o,t} - target_{o,t})²` and its gradient.
    pub fn loss_and_gradient_multi(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Gradient)> {
        let (loss, grad, _) = self.loss_grad_trace(inputs, targets)?;
        Ok((loss, grad))
    }

    pub(crate) fn loss_grad_trace(&self, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, Gradient, Trace)> {
        let trace = self.forward_trace(inputs)?;
        let t_len = inputs[0].len();
        if targets.len() != self.config.output_dim || targets.iter().any(|s| s.len() != t_len) {
            return Err(Error::DimensionMismatch(format!(
                "targets must be {} channels of length {t_len}",
                self.config.output_dim
            )));
        }
        let scale = 1.0 / t_len as f64;
        let mut loss = 0.0;
        let g_out: Vec<Vec<f64>> = trace
            .out
            .iter()
            .zip(targets)
            .map(|(o, y)| {
                o.iter()
                    .zip(y.iter())
                    .map(|(a, b)| {
                        let r = a - b;
                        loss += r * r;
                        2.0 * scale * r
                    })
                    .collect()
            })
            .collect();
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let grad = self.backward(inputs, &trace, &g_out);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((loss, Gradient(grad), trace))
    }

    /// Mean squared error of the SISO model against `y_target`, with gradient.
    pub fn loss_and_gradient(&self, u0: &Signal, y_target: &Signal) -> Result<(f64, Gradient)> {
        self.require_siso()?;
        if u0.len() != y_target.len() {
            return Err(Error::LengthMismatch {
                left: u0.len(),
                right: y_target.len(),
            });
        }
        self.loss_and_gradient_multi(&[u0.samples()], &[y_target.samples()])
    }

    fn backward(&self, inputs: &[&[f64]], tr: &Trace, g_out: &[Vec<f64>]) -> Vec<f64> {
        let cfg = self.config;
        let lay = self.layout();
        let p = &self.params;
        let (n_in, n_ch, d) = (cfg.input_dim, cfg.channels, cfg.state_dim);
        let t_len = inputs[0].len();
        let mut g = vec![0.0; p.len()];

        // output layer: out = W_out h + b_out, h = silu(y_last)
        let y_last = tr.y.last().expect("at least one layer");
        let h: Vec<Vec<f64>> = y_last.iter().map(|s| s.iter().map(|&v| silu(v)).collect()).collect();
        let mut g_h = vec![vec![0.0; t_len]; n_ch];
        for (o, go) in g_out.iter().enumerate() {
            g[lay.b_out + o] = go.iter().sum();
            for j in 0..n_ch {
                let w = p[lay.w_out + o * n_ch + j];
                g[lay.w_out + o * n_ch + j] = go.iter().zip(&h[j]).map(|(a, b)| a * b).sum();
                for (gh, ga) in g_h[j].iter_mut().zip(go) {
                    *gh += w * ga;
                }
            }
        }
        // through the final SiLU
        let mut g_y: Vec<Vec<f64>> = g_h
            .iter()
            .zip(y_last)
            .map(|(gh, y)| gh.iter().zip(y).map(|(a, v)| a * silu_grad(*v)).collect())
            .collect();

        for l in (0..cfg.ssm_layers).rev() {
            let mut g_u = vec![vec![0.0; t_len]; n_ch];
            for i in 0..n_ch {
                let off = lay.channel(l, i);
                let a = &p[off.a..off.b];
                let b = &p[off.b..off.c];
                let c = &p[off.c..off.d];
                let dd = p[off.d];
                let u = &tr.u[l][i];
                let x = &tr.x[l][i];
                let gy = &g_y[i];
                let gu = &mut g_u[i];

                let mut g_a = vec![0.0; d * d];
                let mut g_b = vec![0.0; d];
                let mut g_c = vec![0.0; d];
                let mut g_d = 0.0;
                // lambda_t = dL/dx_t, accumulated backwards
                let mut lambda = vec![0.0; d];
                let mut next = vec![0.0; d];
                for t in (0..t_len).rev() {
                    let xt = &x[t * d..(t + 1) * d];
                    g_d += gy[t] * u[t];
                    gu[t] += gy[t] * dd;
                    for k in 0..d {
                        g_c[k] += gy[t] * xt[k];
                    }
                    // lambda_t = c gy_t + Aᵀ lambda_{t+1}
                    for k in 0..d {
                        let mut acc = c[k] * gy[t];
                        for r in 0..d {
                            acc += a[r * d + k] * next[r];
                        }
                        lambda[k] = acc;
                    }
                    if t > 0 {
                        // x_t = A x_{t-1} + b u_{t-1}
                        let xp = &x[(t - 1) * d..t * d];
                        let mut bl = 0.0;
                        for r in 0..d {
                            let lr = lambda[r];
                            for k in 0..d {
                                g_a[r * d + k] += lr * xp[k];
                            }
                            g_b[r] += lr * u[t - 1];
                            bl += b[r] * lr;
                        }
                        gu[t - 1] += bl;
                    }
                    std::mem::swap(&mut lambda, &mut next);
                }
                g[off.a..off.b].copy_from_slice(&g_a);
                g[off.b..off.c].copy_from_slice(&g_b);
                g[off.c..off.d].copy_from_slice(&g_c);
                g[off.d] = g_d;
            }
            // u^l = silu(pre), pre = y^{l-1} or the input-layer output
            let pre = if l == 0 { &tr.z_in } else { &tr.y[l - 1] };
            g_y = g_u
                .iter()
                .zip(pre)
                .map(|(gu, z)| gu.iter().zip(z).map(|(a, v)| a * silu_grad(*v)).collect())
                .collect();
        }

        // input layer: z = W_in u0 + b_in; g_y now holds dL/dz
        for j in 0..n_ch {
            g[lay.b_in + j] = g_y[j].iter().sum();
            for k in 0..n_in {
                g[lay.w_in + j * n_in + k] = g_y[j].iter().zip(inputs[k]).map(|(a, b)| a * b).sum();
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::super::{DeepSsm, DeepSsmConfig};
    use crate::signals::Signal;
    use rand::Rng;

    pub(crate) fn max_rel_fd_error(m: &DeepSsm, u: &Signal, y: &Signal, eps: f64) -> f64 {
        let (_, grad) = m.loss_and_gradient(u, y).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[k] += eps;
            let mut minus = m.clone();
            minus.params_mut()[k] -= eps;
            let lp = plus.loss_and_gradient(u, y).unwrap().0;
            let lm = minus.loss_and_gradient(u, y).unwrap().0;
            let fd = (lp - lm) / (2.0 * eps);
            let an = grad.0[k];
            let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn zero_residual_means_zero_gradient() {
        let m = DeepSsm::init(DeepSsmConfig::default(), 1).unwrap();
        let u = Signal::new((0..20).map(|t| (t as f64).sin()).collect()).unwrap();
        let (y, _) = m.forward(&u).unwrap();
        let (loss, grad) = m.loss_and_gradient(&u, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.0.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = DeepSsmConfig {
            state_dim: 2,
            channels: 2,
            ..DeepSsmConfig::default()
        };
        let mut rng = crate::seeded_rng(21);
        for seed in 0..5 {
            let m = DeepSsm::init(cfg, seed).unwrap();
            let u = Signal::new((0..16).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
            let y = Signal::new((0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let err = max_rel_fd_error(&m, &u, &y, 1e-5);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn gradient_matches_for_stacked_layers_and_vector_io() {
        let cfg = DeepSsmConfig {
            state_dim: 3,
            channels: 2,
            ssm_layers: 2,
            input_dim: 2,
            output_dim: 2,
        };
        let m = DeepSsm::init(cfg, 4).unwrap();
        let mut rng = crate::seeded_rng(2);
        let ins: Vec<Vec<f64>> = (0..2).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let tgs: Vec<Vec<f64>> = (0..2).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ir: Vec<&[f64]> = ins.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[f64]> = tgs.iter().map(Vec::as_slice).collect();
        let (_, grad) = m.loss_and_gradient_multi(&ir, &tr).unwrap();
        let eps = 1e-5;
        for k in 0..m.params().len() {
            let mut plus = m.clone();
            plus.params_mut()[k] += eps;
            let mut minus = m.clone();
            minus.params_mut()[k] -= eps;
            let fd = (plus.loss_and_gradient_multi(&ir, &tr).unwrap().0
                - minus.loss_and_gradient_multi(&ir, &tr).unwrap().0)
                / (2.0 * eps);
            let an = grad.0[k];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-6), "param {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn output_weight_probe() {
        let m = DeepSsm::init(DeepSsmConfig::default(), 9).unwrap();
        let u = Signal::new((0..32).map(|t| (t as f64 * 0.4).cos()).collect()).unwrap();
        let y = Signal::new(vec![0.2; 32]).unwrap();
        let (loss, grad) = m.loss_and_gradient(&u, &y).unwrap();
        let idx = m.layout().w_out + 1;
        let eps = 1e-5;
        let mut bumped = m.clone();
        bumped.params_mut()[idx] += eps;
        let (loss2, _) = bumped.loss_and_gradient(&u, &y).unwrap();
        assert!(((loss2 - loss) - grad.0[idx] * eps).abs() < 1e-8);
    }

    #[test]
    fn direct_term_gradient_matches_chain_rule() {
        let m = DeepSsm::init(DeepSsmConfig::default(), 10).unwrap();
        let u = Signal::new((0..24).map(|t| (t as f64 * 0.3).sin() * 2.0).collect()).unwrap();
        let target = Signal::new((0..24).map(|t| (t as f64 * 0.1).cos()).collect()).unwrap();
        let (_, grad, trace) = m
            .loss_grad_trace(&[u.samples()], &[target.samples()])
            .unwrap();
        let lay = m.layout();
        let w_out = m.output_layer().0;
        for (i, &w_i) in w_out.iter().enumerate() {
            let off = lay.channel(0, i);
            // dL/dD_i = (2/T) Σ_t r_t · w_i · silu'(y_t) · u_t
            let chain: f64 = (0..24)
                .map(|t| {
                    let r = trace.out[0][t] - target.samples()[t];
                    2.0 / 24.0 * r * w_i * super::silu_grad(trace.y[0][i][t]) * trace.u[0][i][t]
                })
                .sum();
            assert!((chain - grad.0[off.d]).abs() < 1e-12);
            let mut plus = m.clone();
            plus.params_mut()[off.d] += 1e-5;
            let mut minus = m.clone();
            minus.params_mut()[off.d] -= 1e-5;
            let fd = (plus.loss_and_gradient(&u, &target).unwrap().0
                - minus.loss_and_gradient(&u, &target).unwrap().0)
                / 2e-5;
            assert!((fd - chain).abs() <= 1e-4 * chain.abs().max(1e-6));
        }
    }
}
