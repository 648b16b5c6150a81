//! The optimization variable and its real parameterization.
//!
//! [`ParamVector`] layout, for blocks in the order `v, u_s, u_1, .., u_K`:
//! each block contributes its real parts followed by its imaginary parts.
//! So `[Re v, Im v, Re u_s, Im u_s, Re u_1, Im u_1, ...]`, total length
//! `2M + 2N(K+1)`. All gradients in the crate are real gradients over this vector.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::CVec;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Transmit beamformer plus the `K + 1` receive beamformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transceiver {
    pub v: CVec,
    pub u_s: CVec,
    pub u: Vec<CVec>,
}

impl Transceiver {
    pub fn zeros(cfg: &SystemConfig) -> Self {
        Transceiver {
            v: CVec::zeros(cfg.m),
            u_s: CVec::zeros(cfg.n),
            u: vec![CVec::zeros(cfg.n); cfg.k],
        }
    }

    pub fn power(&self) -> f64 {
        self.v.norm_squared()
    }

    pub fn check(&self, cfg: &SystemConfig) -> Result<()> {
        if self.v.len() != cfg.m
            || self.u_s.len() != cfg.n
            || self.u.len() != cfg.k
            || self.u.iter().any(|u| u.len() != cfg.n)
        {
            return Err(Error::Dimension(format!(
                "transceiver shape (v {}, u_s {}, {} tag receivers) does not match M={}, N={}, K={}",
                self.v.len(),
                self.u_s.len(),
                self.u.len(),
                cfg.m,
                cfg.n,
                cfg.k
            )));
        }
        Ok(())
    }

    /// `(1 - w) self + w other`, blockwise.
    pub fn lerp(&self, other: &Transceiver, w: f64) -> Transceiver {
        let a = Complex64::from(1.0 - w);
        let b = Complex64::from(w);
        Transceiver {
            v: &self.v * a + &other.v * b,
            u_s: &self.u_s * a + &other.u_s * b,
            u: self
                .u
                .iter()
                .zip(&other.u)
                .map(|(x, y)| x * a + y * b)
                .collect(),
        }
    }

    /// Euclidean distance in the parameter space.
    pub fn distance(&self, other: &Transceiver) -> f64 {
        let mut d = (&self.v - &other.v).norm_squared() + (&self.u_s - &other.u_s).norm_squared();
        for (x, y) in self.u.iter().zip(&other.u) {
            d += (x - y).norm_squared();
        }
        d.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        let fin = |x: &CVec| x.iter().all(|z| z.re.is_finite() && z.im.is_finite());
        fin(&self.v) && fin(&self.u_s) && self.u.iter().all(fin)
    }
}

/// Real parameter vector, see the module docs for the layout.
pub type ParamVector = DVector<f64>;

/// Offsets of each block inside a [`ParamVector`].
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl Layout {
    pub fn of(cfg: &SystemConfig) -> Self {
        Layout {
            m: cfg.m,
            n: cfg.n,
            k: cfg.k,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.m + 2 * self.n * (self.k + 1)
    }

    /// Start of the `v` block.
    pub fn v(&self) -> usize {
        0
    }

    /// Start of the `u_s` block.
    pub fn u_s(&self) -> usize {
        2 * self.m
    }

    /// Start of the `u_k` block, `k` zero-based.
    pub fn u_k(&self, k: usize) -> usize {
        2 * self.m + 2 * self.n * (k + 1)
    }
}

pub(crate) fn write_block(p: &mut ParamVector, at: usize, x: &CVec) {
    let n = x.len();
    for (i, z) in x.iter().enumerate() {
        p[at + i] = z.re;
        p[at + n + i] = z.im;
    }
}

pub(crate) fn read_block(p: &ParamVector, at: usize, n: usize) -> CVec {
    CVec::from_fn(n, |i, _| Complex64::new(p[at + i], p[at + n + i]))
}

pub fn pack(theta: &Transceiver) -> ParamVector {
    let layout = Layout {
        m: theta.v.len(),
        n: theta.u_s.len(),
        k: theta.u.len(),
    };
    let mut p = ParamVector::zeros(layout.dim());
    write_block(&mut p, layout.v(), &theta.v);
    write_block(&mut p, layout.u_s(), &theta.u_s);
    for (k, u) in theta.u.iter().enumerate() {
        write_block(&mut p, layout.u_k(k), u);
    }
    p
}

pub fn unpack(p: &ParamVector, cfg: &SystemConfig) -> Result<Transceiver> {
    let layout = Layout::of(cfg);
    if p.len() != layout.dim() {
        return Err(Error::Dimension(format!(
            "parameter vector has length {}, expected {}",
            p.len(),
            layout.dim()
        )));
    }
    Ok(Transceiver {
        v: read_block(p, layout.v(), cfg.m),
        u_s: read_block(p, layout.u_s(), cfg.n),
        u: (0..cfg.k)
            .map(|k| read_block(p, layout.u_k(k), cfg.n))
            .collect(),
    })
}
