//! Quadratic-transform minorants of the instantaneous SINRs, the
//! block-separable sample-average surrogate, and the recursive estimates
//! of the expected SINRs, their Jacobian and the utility weights.
//!
//! A ratio `|a|^2 / B` is replaced by `2 Re{phi^* a} - |phi|^2 B`, which is
//! concave in the variables for fixed `phi` and touches the ratio at
//! `phi = a / B`. Every `phi` is taken at the previous iterate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, MiniBatch};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::params::{pack, Transceiver};
use crate::sinr::{sinr_and_grad_with, BarrierUtility, Projections, SinrVector, TagRatio, Utility};

/// Auxiliary scalars for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryPhi {
    /// One per batch sample.
    pub phi_s: Vec<Complex64>,
    /// `phi_k[j][k]`: per sample, per tag.
    pub phi_k: Vec<Vec<Complex64>>,
}

/// Auxiliary scalars that make each minorant tight at `theta_prev`.
pub fn compute_phi(
    theta_prev: &Transceiver,
    batch: &MiniBatch,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<AuxiliaryPhi> {
    let us2 = theta_prev.u_s.norm_squared();
    if !(us2 > 0.0) {
        return Err(Error::Domain("direct-link receive beamformer is zero".into()));
    }
    let proj = Projections::new(theta_prev, ch);
    let ratios = (0..cfg.k)
        .map(|k| TagRatio::new(theta_prev, &proj, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let mut phi_s = Vec::with_capacity(batch.len());
    let mut phi_k = Vec::with_capacity(batch.len());
    for sample in &batch.samples {
        let c = theta_prev.u_s.dotc(&proj.w(&sample.b, cfg));
        phi_s.push(c / (cfg.sigma_w2 * us2));
        let x = sample.s_norm2();
        phi_k.push(
            ratios
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let gamma_den = r.c * x + r.d;
                    r.coupling[k] * ((cfg.tag_weight(k) * x).sqrt() / gamma_den)
                })
                .collect(),
        );
    }
    Ok(AuxiliaryPhi { phi_s, phi_k })
}

/// Minorant of the direct-link SINR for tag pattern `b`.
pub fn gamma_bar_s(
    theta: &Transceiver,
    b: &[bool],
    phi_s: Complex64,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> f64 {
    let proj = Projections::new(theta, ch);
    gamma_bar_s_with(theta, &proj, b, phi_s, cfg)
}

fn gamma_bar_s_with(
    theta: &Transceiver,
    proj: &Projections,
    b: &[bool],
    phi_s: Complex64,
    cfg: &SystemConfig,
) -> f64 {
    let a = theta.u_s.dotc(&proj.w(b, cfg));
    2.0 * (phi_s.conj() * a).re - cfg.sigma_w2 * phi_s.norm_sqr() * theta.u_s.norm_squared()
}

/// Minorant of tag `k`'s SINR for `||s||^2 = s_norm2`.
pub fn gamma_bar_k(
    theta: &Transceiver,
    s_norm2: f64,
    phi_k: Complex64,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    k: usize,
) -> f64 {
    let proj = Projections::new(theta, ch);
    gamma_bar_k_with(theta, &proj, s_norm2, phi_k, cfg, k)
}

fn gamma_bar_k_with(
    theta: &Transceiver,
    proj: &Projections,
    x: f64,
    phi_k: Complex64,
    cfg: &SystemConfig,
    k: usize,
) -> f64 {
    let uk = &theta.u[k];
    let a = uk.dotc(&proj.z[k]) * (cfg.tag_weight(k) * x).sqrt();
    let interference: f64 = (0..cfg.k)
        .filter(|&m| m != k)
        .map(|m| cfg.tag_weight(m) * x * uk.dotc(&proj.z[m]).norm_sqr())
        .sum();
    let den = interference + cfg.sigma_w2 * uk.norm_squared();
    2.0 * (phi_k.conj() * a).re - phi_k.norm_sqr() * den
}

/// Weighted minorant `nu_0 gamma_bar_s + sum_k nu_k gamma_bar_k` of sample `j`.
pub fn g_sample(
    theta: &Transceiver,
    batch: &MiniBatch,
    j: usize,
    phi: &AuxiliaryPhi,
    nu: &DVector<f64>,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> f64 {
    let proj = Projections::new(theta, ch);
    g_sample_with(theta, &proj, batch, j, phi, nu, cfg)
}

fn g_sample_with(
    theta: &Transceiver,
    proj: &Projections,
    batch: &MiniBatch,
    j: usize,
    phi: &AuxiliaryPhi,
    nu: &DVector<f64>,
    cfg: &SystemConfig,
) -> f64 {
    let sample = &batch.samples[j];
    let x = sample.s_norm2();
    let mut g = nu[0] * gamma_bar_s_with(theta, proj, &sample.b, phi.phi_s[j], cfg);
    for k in 0..cfg.k {
        g += nu[k + 1] * gamma_bar_k_with(theta, proj, x, phi.phi_k[j][k], cfg, k);
    }
    g
}

fn batch_mean_g(
    theta: &Transceiver,
    batch: &MiniBatch,
    phi: &AuxiliaryPhi,
    nu: &DVector<f64>,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> f64 {
    let proj = Projections::new(theta, ch);
    (0..batch.len())
        .map(|j| g_sample_with(theta, &proj, batch, j, phi, nu, cfg))
        .sum::<f64>()
        / batch.len() as f64
}

/// Block-decoupled sample average
/// `(1/J) sum_j [g_j(v, u_prev) + g_j(v_prev, u) - g_j(v_prev, u_prev)]`.
pub fn g_tilde(
    theta: &Transceiver,
    theta_prev: &Transceiver,
    batch: &MiniBatch,
    phi: &AuxiliaryPhi,
    nu: &DVector<f64>,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> f64 {
    let v_only = Transceiver {
        v: theta.v.clone(),
        ..theta_prev.clone()
    };
    let u_only = Transceiver {
        v: theta_prev.v.clone(),
        ..theta.clone()
    };
    batch_mean_g(&v_only, batch, phi, nu, ch, cfg) + batch_mean_g(&u_only, batch, phi, nu, ch, cfg)
        - batch_mean_g(theta_prev, batch, phi, nu, ch, cfg)
}

/// Tracked estimates carried between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveState {
    /// Running estimate of the expected SINR vector.
    pub sinr: SinrVector,
    /// Utility weights, length `K + 1`.
    pub weights: DVector<f64>,
    /// Running estimate of the SINR Jacobian, `dim x (K+1)`.
    pub jacobian: DMatrix<f64>,
    /// `jacobian * weights`.
    pub gradient: DVector<f64>,
    pub t: usize,
}

impl RecursiveState {
    /// Zero estimates and all-ones weights.
    pub fn new(cfg: &SystemConfig) -> Self {
        let dim = cfg.param_dim();
        RecursiveState {
            sinr: SinrVector::zeros(cfg.k),
            weights: DVector::from_element(cfg.k + 1, 1.0),
            jacobian: DMatrix::zeros(dim, cfg.k + 1),
            gradient: DVector::zeros(dim),
            t: 0,
        }
    }
}

/// Strongly concave surrogate
/// `xi g_tilde(theta) + (1 - xi) gradient . (theta - theta_prev) - tau_v ||dv||^2 - tau_u ||du||^2`.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_value(
    theta: &Transceiver,
    theta_prev: &Transceiver,
    state: &RecursiveState,
    batch: &MiniBatch,
    phi: &AuxiliaryPhi,
    xi_t: f64,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> f64 {
    let g = g_tilde(theta, theta_prev, batch, phi, &state.weights, ch, cfg);
    let delta = pack(theta) - pack(theta_prev);
    let dv = (&theta.v - &theta_prev.v).norm_squared();
    let mut du = (&theta.u_s - &theta_prev.u_s).norm_squared();
    for (a, b) in theta.u.iter().zip(&theta_prev.u) {
        du += (a - b).norm_squared();
    }
    xi_t * g + (1.0 - xi_t) * state.gradient.dot(&delta) - cfg.tau_v * dv - cfg.tau_u * du
}

/// One step of the recursion, using instantaneous SINRs and Jacobians of
/// `batch` at `theta_prev`.
pub fn update_recursive_state(
    state: &RecursiveState,
    theta_prev: &Transceiver,
    batch: &MiniBatch,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    xi_t: f64,
    omega_t: f64,
) -> Result<RecursiveState> {
    let (mean, jac) = batch_sinr_and_jacobian(theta_prev, batch, ch, cfg)?;
    let sinr_vec = state.sinr.to_vector() * (1.0 - xi_t) + mean.to_vector() * xi_t;
    let sinr = SinrVector::from_slice(sinr_vec.as_slice());
    let target = BarrierUtility::from_config(cfg).grad_clamped(&sinr);
    let weights = &state.weights * (1.0 - omega_t) + target * omega_t;
    let jacobian = &state.jacobian * (1.0 - xi_t) + jac * xi_t;
    let gradient = &jacobian * &weights;
    Ok(RecursiveState {
        sinr,
        weights,
        jacobian,
        gradient,
        t: state.t + 1,
    })
}

/// Batch means of the instantaneous SINR vector and its Jacobian.
pub fn batch_sinr_and_jacobian(
    theta: &Transceiver,
    batch: &MiniBatch,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<(SinrVector, DMatrix<f64>)> {
    let proj = Projections::new(theta, ch);
    let mut sum = DVector::zeros(cfg.k + 1);
    let mut jac = DMatrix::zeros(cfg.param_dim(), cfg.k + 1);
    for sample in &batch.samples {
        let (g, j) = sinr_and_grad_with(theta, &proj, sample, ch, cfg)?;
        sum += g.to_vector();
        jac += j;
    }
    let n = batch.len() as f64;
    Ok((SinrVector::from_slice((sum / n).as_slice()), jac / n))
}
