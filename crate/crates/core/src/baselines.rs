//! Reference transceivers: eigen-beamforming towards the direct link, an
//! equal-weight superposition over all links, and a single scheduled tag.
//! All three use linear MMSE receivers.

use num_complex::Complex64;

use crate::channel::{CMat, CVec, ChannelRealization};
use crate::config::SystemConfig;
use crate::linalg::{normalized, principal_eigenvector, principal_left_direction};
use crate::params::Transceiver;

/// Linear MMSE receivers for transmit beamformer `v`.
///
/// The direct-link receiver treats the random part of the backscatter as
/// interference around the mean channel `H_d + sum_k sqrt(alpha_k) rho_k h_hat_k`.
/// Tag `k`'s receiver sees the other tags after despreading, each with
/// power `alpha_m Lambda_m L`.
pub fn mmse_receivers(v: &CVec, ch: &ChannelRealization, cfg: &SystemConfig) -> (CVec, Vec<CVec>) {
    let n = cfg.n;
    let z: Vec<CVec> = ch.h_hat.iter().map(|h| h.ad_mul(v)).collect();
    let noise = CMat::identity(n, n) * Complex64::from(cfg.sigma_w2);

    let mut mean = ch.h_d.clone();
    for (k, h) in ch.h_hat.iter().enumerate() {
        mean += h * Complex64::from(cfg.alpha[k].sqrt() * cfg.rho[k]);
    }
    let mut cov = noise.clone();
    for (k, zk) in z.iter().enumerate() {
        cov.ger(Complex64::from(cfg.tag_weight(k)), zk, &zk.conjugate(), Complex64::from(1.0));
    }
    let u_s = solve_hpd(cov, &mean.ad_mul(v));

    let lf = cfg.l as f64;
    let u = (0..cfg.k)
        .map(|k| {
            let mut cov = noise.clone();
            for (m, zm) in z.iter().enumerate() {
                if m != k {
                    cov.ger(Complex64::from(cfg.tag_weight(m) * lf), zm, &zm.conjugate(), Complex64::from(1.0));
                }
            }
            solve_hpd(cov, &z[k])
        })
        .collect();
    (u_s, u)
}

fn solve_hpd(a: CMat, b: &CVec) -> CVec {
    a.cholesky()
        .expect("noise-loaded covariance is positive definite")
        .solve(b)
}

/// Rotates `x` so that `reference^H x` is real and nonnegative.
fn align_to(x: &CVec, reference: &CVec) -> CVec {
    let c = reference.dotc(x);
    if c.norm() > 0.0 {
        x * (c.conj() / c.norm())
    } else {
        x.clone()
    }
}

fn with_receivers(direction: CVec, ch: &ChannelRealization, cfg: &SystemConfig) -> Transceiver {
    let v = direction * Complex64::from(cfg.p_max.sqrt());
    let (u_s, u) = mmse_receivers(&v, ch, cfg);
    Transceiver { v, u_s, u }
}

/// Unit principal eigenvector of `h_hat_k h_hat_k^H`.
pub fn tag_direction(ch: &ChannelRealization, k: usize) -> CVec {
    principal_eigenvector(&(&ch.h_hat[k] * ch.h_hat[k].adjoint()))
}

/// Normalized equal-weight sum of the direct-link direction and the given
/// tag directions, each phase-aligned to the first. Falls back to the
/// direct-link direction if the sum cancels.
fn superposition(ch: &ChannelRealization, tags: &[usize]) -> CVec {
    let first = principal_left_direction(&ch.h_d);
    let mut sum = first.clone();
    for &k in tags {
        sum += align_to(&tag_direction(ch, k), &first);
    }
    match normalized(&sum).filter(|_| sum.norm() >= 1e-12) {
        Some(d) => d,
        None => {
            log::warn!("superposed transmit direction cancelled; using the direct-link eigenvector");
            first
        }
    }
}

/// Full power along the strongest direct-link mode.
pub fn baseline1(ch: &ChannelRealization, cfg: &SystemConfig) -> Transceiver {
    with_receivers(principal_left_direction(&ch.h_d), ch, cfg)
}

/// Full power along the superposition of the direct-link and every tag direction.
pub fn baseline2(ch: &ChannelRealization, cfg: &SystemConfig) -> Transceiver {
    let tags: Vec<usize> = (0..cfg.k).collect();
    with_receivers(superposition(ch, &tags), ch, cfg)
}

/// Tag with the largest cascaded-channel Frobenius norm (first on ties).
pub fn scheduled_tag(ch: &ChannelRealization) -> Option<usize> {
    ch.h_hat
        .iter()
        .map(|h| h.norm())
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (k, g)| match best {
            Some((_, b)) if b >= g => best,
            _ => Some((k, g)),
        })
        .map(|(k, _)| k)
}

/// Full power along the superposition of the direct-link direction and the
/// scheduled tag's direction. Receivers still see every tag.
pub fn baseline3(ch: &ChannelRealization, cfg: &SystemConfig) -> Transceiver {
    let tags: Vec<usize> = scheduled_tag(ch).into_iter().collect();
    with_receivers(superposition(ch, &tags), ch, cfg)
}
