//! Channel model: path loss, Rayleigh realizations, effective channels and
//! random symbol states.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{SystemConfig, Topology};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Free-space style path loss `lambda^2 g_tx g_rx / ((4 pi)^2 d^chi)`.
pub fn path_loss(d: f64, chi: f64, g_tx: f64, g_rx: f64, lambda_c: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Domain(format!("path loss distance must be positive, got {d}")));
    }
    if !(g_tx > 0.0 && g_rx > 0.0 && lambda_c > 0.0) {
        return Err(Error::Domain(
            "antenna gains and wavelength must be positive".to_string(),
        ));
    }
    let four_pi = 4.0 * std::f64::consts::PI;
    Ok(lambda_c * lambda_c * g_tx * g_rx / (four_pi * four_pi * d.powf(chi)))
}

/// One draw of `CN(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Channels of one coherence block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Direct link PT -> PR, `M x N`.
    pub h_d: CMat,
    /// Cascaded link PT -> tag k -> PR, `M x N`, rank one.
    pub h_hat: Vec<CMat>,
}

impl ChannelRealization {
    pub fn m(&self) -> usize {
        self.h_d.nrows()
    }

    pub fn n(&self) -> usize {
        self.h_d.ncols()
    }

    pub fn k(&self) -> usize {
        self.h_hat.len()
    }

    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        let ok = self.m() == cfg.m
            && self.n() == cfg.n
            && self.k() == cfg.k
            && self
                .h_hat
                .iter()
                .all(|h| h.nrows() == cfg.m && h.ncols() == cfg.n);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "channel is {}x{} with {} tags, config wants {}x{} with {}",
                self.m(),
                self.n(),
                self.k(),
                cfg.m,
                cfg.n,
                cfg.k
            )))
        }
    }

    /// Same channel with the direct and cascaded links scaled by separate factors.
    pub fn scaled(&self, direct: f64, backscatter: f64) -> Self {
        ChannelRealization {
            h_d: self.h_d.map(|z| z * direct),
            h_hat: self.h_hat.iter().map(|h| h.map(|z| z * backscatter)).collect(),
        }
    }
}

/// Draw the channels for one realization.
///
/// `H_d` and the PT -> tag vectors are Rayleigh with their path losses. The
/// tag -> PR vector is a fixed unit-norm direction per tag, drawn from a
/// stream keyed by `(seed, tag index)`, scaled by the square root of its path loss.
/// The cascaded channel is `h_k g_k^H`.
pub fn generate_channel(
    cfg: &SystemConfig,
    topo: &Topology,
    seed: u64,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    topo.validate(cfg.k)?;
    let (m, n) = (cfg.m, cfg.n);

    let pl0 = path_loss(topo.d0(), topo.chi0, topo.g_t, topo.g_r, topo.lambda_c)?;
    let mut rng = stream(seed, Purpose::Channel, 0, 0);
    let s0 = pl0.sqrt();
    let h_d = CMat::from_fn(m, n, |_, _| complex_normal(&mut rng) * s0);

    let mut h_hat = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let pl_k = path_loss(topo.d_k(k), topo.chi_k[k], topo.g_t, topo.g_b[k], topo.lambda_c)?;
        let pl_bk = path_loss(topo.d_bk(k), topo.chi_bk[k], topo.g_b[k], topo.g_r, topo.lambda_c)?;
        let mut rng_k = stream(seed, Purpose::Channel, 1 + k as u64, 0);
        let h = CVec::from_fn(m, |_, _| complex_normal(&mut rng_k) * pl_k.sqrt());
        let g = tag_direction(seed, k, n) * Complex64::from(pl_bk.sqrt());
        h_hat.push(&h * g.adjoint());
    }
    Ok(ChannelRealization { h_d, h_hat })
}

/// Unit-norm tag -> PR direction for tag `k`.
pub fn tag_direction(seed: u64, k: usize, n: usize) -> CVec {
    let mut rng = stream(seed, Purpose::TagDirection, k as u64, 0);
    let g = CVec::from_fn(n, |_, _| complex_normal(&mut rng));
    let norm = g.norm();
    g / Complex64::from(norm)
}

/// `H_d + sum_k sqrt(alpha_k) b_k h_hat_k`.
pub fn effective_channel(ch: &ChannelRealization, b: &[bool], cfg: &SystemConfig) -> CMat {
    assert_eq!(b.len(), ch.k(), "tag symbol vector has wrong length");
    let mut h = ch.h_d.clone();
    for (k, &on) in b.iter().enumerate() {
        if on && cfg.alpha[k] != 0.0 {
            h += &ch.h_hat[k] * Complex64::from(cfg.alpha[k].sqrt());
        }
    }
    h
}

/// One random state: tag OOK symbols and the primary symbols of one timeslot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSample {
    pub b: Vec<bool>,
    pub s: Vec<Complex64>,
}

impl RandomSample {
    pub fn draw<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let b = cfg.rho.iter().map(|&r| rng.random::<f64>() < r).collect();
        let s = (0..cfg.l).map(|_| complex_normal(rng)).collect();
        RandomSample { b, s }
    }

    /// `||s||^2`, the only way the backscatter SINR depends on `s`.
    pub fn s_norm2(&self) -> f64 {
        self.s.iter().map(|z| z.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniBatch {
    pub samples: Vec<RandomSample>,
}

impl MiniBatch {
    pub fn draw<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        MiniBatch {
            samples: (0..cfg.batch).map(|_| RandomSample::draw(cfg, rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `J` independent states from the stream `(seed, Batch, 0, 0)`.
pub fn sample_states(cfg: &SystemConfig, seed: u64) -> MiniBatch {
    MiniBatch::draw(cfg, &mut stream(seed, Purpose::Batch, 0, 0))
}
