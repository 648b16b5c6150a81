//! Small synthetic instances used by the test suites and by `bspd validate`.
//!
//! Channels here are unit-scale Rayleigh draws rather than path-loss scaled
//! ones, so algebraic identities can be checked at tight relative tolerances.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{complex_normal, CMat, CVec, ChannelRealization};
use crate::config::{SystemConfig, Topology};
use crate::params::Transceiver;
use crate::rng::{stream, Purpose};

/// Unit-scale config with `L = 16`, `J = 4`, mixed tag probabilities.
pub fn small_config(m: usize, n: usize, k: usize) -> SystemConfig {
    SystemConfig {
        m,
        n,
        k,
        l: 16,
        alpha: (0..k).map(|i| 0.5 - 0.05 * (i % 4) as f64).collect(),
        rho: (0..k).map(|i| 0.5 - 0.1 * (i % 3) as f64).collect(),
        sigma_w2: 0.5,
        p_max: 2.0,
        psi: 2.0,
        gamma0: vec![0.2; k],
        batch: 4,
        tau_v: 0.05,
        tau_u: 0.05,
        eps_bar: 1e-3,
    }
}

/// Geometry of the reference scenario with tags on a fixed grid inside
/// `[99, 101] x [198, 199.5]`.
pub fn default_topology(k: usize) -> Topology {
    let tag_pos = (0..k)
        .map(|i| {
            let f = (i as f64 + 0.5) / k.max(1) as f64;
            [99.0 + 2.0 * f, 198.0 + 1.5 * (1.0 - f)]
        })
        .collect();
    let gain = 10f64.powf(0.6);
    Topology {
        pt_pos: [100.0, 0.0],
        pr_pos: [100.0, 200.0],
        tag_pos,
        chi0: 3.5,
        chi_k: vec![3.5; k],
        chi_bk: vec![2.0; k],
        g_t: gain,
        g_r: gain,
        g_b: vec![gain; k],
        lambda_c: 0.33,
    }
}

/// Unit-scale channel: `CN(0,1)` direct link, cascades `h g^H` with
/// `CN(0,1)` factors times `backscatter` amplitude.
pub fn unit_channel(cfg: &SystemConfig, seed: u64, backscatter: f64) -> ChannelRealization {
    let mut rng = stream(seed, Purpose::Oracle, 1, 0);
    let h_d = CMat::from_fn(cfg.m, cfg.n, |_, _| complex_normal(&mut rng));
    let h_hat = (0..cfg.k)
        .map(|_| {
            let h = CVec::from_fn(cfg.m, |_, _| complex_normal(&mut rng));
            let g = CVec::from_fn(cfg.n, |_, _| complex_normal(&mut rng));
            (&h * g.adjoint()) * Complex64::from(backscatter)
        })
        .collect();
    ChannelRealization { h_d, h_hat }
}

/// Random transceiver with `||v||^2` uniform in `(0, P_max]` and `CN(0,1)` receivers.
pub fn random_transceiver(cfg: &SystemConfig, seed: u64) -> Transceiver {
    let mut rng = stream(seed, Purpose::Oracle, 2, 0);
    let mut v = CVec::from_fn(cfg.m, |_, _| complex_normal(&mut rng));
    let p: f64 = cfg.p_max * (0.05 + 0.95 * rng.random::<f64>());
    v *= Complex64::from((p / v.norm_squared()).sqrt());
    let u_s = CVec::from_fn(cfg.n, |_, _| complex_normal(&mut rng));
    let u = (0..cfg.k)
        .map(|_| CVec::from_fn(cfg.n, |_, _| complex_normal(&mut rng)))
        .collect();
    Transceiver { v, u_s, u }
}

/// Random small dimensions `(M, N, K, J)` bounded by the given maxima.
pub fn random_dims(seed: u64, max_m: usize, max_n: usize, max_k: usize, max_j: usize) -> (usize, usize, usize, usize) {
    let mut rng = stream(seed, Purpose::Oracle, 3, 0);
    (
        rng.random_range(1..=max_m),
        rng.random_range(1..=max_n),
        rng.random_range(1..=max_k),
        rng.random_range(1..=max_j),
    )
}
