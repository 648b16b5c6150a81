//! System and topology parameters.
//!
//! Everything here is in linear units (watts, linear gains, meters). Conversion
//! from dB happens once, when a config document is loaded (see [`crate::settings`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and algorithmic scalars for one symbiotic-radio system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antennas at the primary transmitter.
    pub m: usize,
    /// Receive antennas at the primary receiver.
    pub n: usize,
    /// Number of tags.
    pub k: usize,
    /// Spreading length: primary symbols per tag symbol.
    pub l: usize,
    /// Reflection coefficient per tag, in `[0, 1]`.
    pub alpha: Vec<f64>,
    /// Probability that a tag backscatters (OOK "on"), in `(0, 1)`.
    pub rho: Vec<f64>,
    /// Receiver noise power, watts.
    pub sigma_w2: f64,
    /// Transmit power budget, watts.
    pub p_max: f64,
    /// Barrier price; the barrier term is weighted by `1 / psi`.
    pub psi: f64,
    /// Expected-SINR target per tag, linear.
    pub gamma0: Vec<f64>,
    /// Mini-batch size.
    pub batch: usize,
    /// Proximal weight on the transmit block.
    pub tau_v: f64,
    /// Proximal weight on the receive blocks.
    pub tau_u: f64,
    /// Floor applied to `gamma_k - gamma0_k` when differentiating the barrier.
    pub eps_bar: f64,
}

impl SystemConfig {
    /// Tag-symbol variance `rho (1 - rho)`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.rho[k] * (1.0 - self.rho[k])
    }

    /// `alpha_k * Lambda_k`, the power weight of tag `k` in the backscatter SINR.
    pub fn tag_weight(&self, k: usize) -> f64 {
        self.alpha[k] * self.lambda(k)
    }

    /// Length of the real parameter vector: `2M + 2N(K+1)`.
    pub fn param_dim(&self) -> usize {
        2 * self.m + 2 * self.n * (self.k + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("M", self.m),
            ("N", self.n),
            ("L", self.l),
            ("J", self.batch),
        ] {
            if v < 1 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        for (name, len) in [
            ("alpha", self.alpha.len()),
            ("rho", self.rho.len()),
            ("gamma0", self.gamma0.len()),
        ] {
            if len != self.k {
                problems.push(format!("{name} has {len} entries, expected K = {}", self.k));
            }
        }
        for (i, a) in self.alpha.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                problems.push(format!("alpha[{i}] = {a} not in [0, 1]"));
            }
        }
        for (i, r) in self.rho.iter().enumerate() {
            if !(*r > 0.0 && *r < 1.0) {
                problems.push(format!("rho[{i}] = {r} not in (0, 1)"));
            }
        }
        for (i, g) in self.gamma0.iter().enumerate() {
            if !(*g > 0.0 && g.is_finite()) {
                problems.push(format!("gamma0[{i}] = {g} must be positive"));
            }
        }
        for (name, v) in [
            ("sigma_w2", self.sigma_w2),
            ("p_max", self.p_max),
            ("psi", self.psi),
            ("tau_v", self.tau_v),
            ("tau_u", self.tau_u),
            ("eps_bar", self.eps_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be positive and finite"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Node placement and propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub pt_pos: [f64; 2],
    pub pr_pos: [f64; 2],
    pub tag_pos: Vec<[f64; 2]>,
    /// Path-loss exponent of the direct link.
    pub chi0: f64,
    /// Path-loss exponent PT -> tag, per tag.
    pub chi_k: Vec<f64>,
    /// Path-loss exponent tag -> PR, per tag.
    pub chi_bk: Vec<f64>,
    pub g_t: f64,
    pub g_r: f64,
    /// Antenna gain per tag.
    pub g_b: Vec<f64>,
    /// Carrier wavelength, meters.
    pub lambda_c: f64,
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Topology {
    pub fn d0(&self) -> f64 {
        distance(self.pt_pos, self.pr_pos)
    }

    /// PT -> tag `k` distance.
    pub fn d_k(&self, k: usize) -> f64 {
        distance(self.pt_pos, self.tag_pos[k])
    }

    /// Tag `k` -> PR distance.
    pub fn d_bk(&self, k: usize) -> f64 {
        distance(self.tag_pos[k], self.pr_pos)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let mut problems = Vec::new();
        for (name, len) in [
            ("tag_pos", self.tag_pos.len()),
            ("chi_k", self.chi_k.len()),
            ("chi_bk", self.chi_bk.len()),
            ("g_b", self.g_b.len()),
        ] {
            if len != k {
                problems.push(format!("{name} has {len} entries, expected K = {k}"));
            }
        }
        if !(self.d0() > 0.0) {
            problems.push("PT and PR coincide".to_string());
        }
        if self.tag_pos.len() == k {
            for i in 0..k {
                if !(self.d_k(i) > 0.0) {
                    problems.push(format!("tag {i} coincides with the PT"));
                }
                if !(self.d_bk(i) > 0.0) {
                    problems.push(format!("tag {i} coincides with the PR"));
                }
            }
        }
        for (name, v) in [
            ("g_t", self.g_t),
            ("g_r", self.g_r),
            ("lambda_c", self.lambda_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} = {v} must be positive"));
            }
        }
        for (i, g) in self.g_b.iter().enumerate() {
            if !(*g > 0.0) {
                problems.push(format!("g_b[{i}] = {g} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Axis-aligned rectangle tags are dropped into, `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::small_config;

    #[test]
    fn validate_lists_every_problem() {
        let mut cfg = small_config(2, 2, 2);
        cfg.alpha = vec![1.5, 0.1];
        cfg.rho = vec![0.0, 0.5];
        cfg.sigma_w2 = -1.0;
        match cfg.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 3, "{p:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn lambda_is_bernoulli_variance() {
        let cfg = small_config(1, 1, 1);
        assert_eq!(cfg.lambda(0), 0.25);
    }
}
