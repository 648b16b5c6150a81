//! Instantaneous and expected SINRs, the barrier utility, and analytic real
//! gradients with respect to the [`ParamVector`](crate::params::ParamVector).
//!
//! Gradient convention: for a real function `f` of a complex block `z`, the
//! real gradient over `(Re z, Im z)` is packed from the complex vector
//! `2 df/dz*`. All gradients below are built that way and then written with
//! the layout of [`crate::params`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, CVec, ChannelRealization, RandomSample};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::params::{write_block, Layout, Transceiver};
use crate::quadrature::ratio_moments;
use crate::rng::{stream, Purpose};

/// Largest tag count the enumeration oracle accepts.
pub const MAX_ENUM_TAGS: usize = 20;

/// Relative tolerance of the `||s||^2` quadrature.
pub const QUAD_RTOL: f64 = 1e-8;

/// SINRs ordered `(s, 1..K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrVector {
    pub gamma_s: f64,
    pub gamma: Vec<f64>,
}

impl SinrVector {
    pub fn zeros(k: usize) -> Self {
        SinrVector {
            gamma_s: 0.0,
            gamma: vec![0.0; k],
        }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        SinrVector {
            gamma_s: x[0],
            gamma: x[1..].to_vec(),
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.gamma.len() + 1,
            std::iter::once(self.gamma_s).chain(self.gamma.iter().copied()),
        )
    }

    pub fn worst_tag(&self) -> f64 {
        self.gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn dot(a: &CVec, b: &CVec) -> Complex64 {
    // a^H b
    a.dotc(b)
}

fn require_nonzero(u: &CVec, what: &str) -> Result<f64> {
    let n2 = u.norm_squared();
    if n2 > 0.0 && n2.is_finite() {
        Ok(n2)
    } else {
        Err(Error::Domain(format!("{what} receive beamformer is zero or non-finite")))
    }
}

/// Quantities of one transceiver that every SINR evaluation reuses:
/// `z_0 = H_d^H v` and `z_m = h_hat_m^H v`.
pub(crate) struct Projections {
    pub z0: CVec,
    pub z: Vec<CVec>,
}

impl Projections {
    pub fn new(theta: &Transceiver, ch: &ChannelRealization) -> Self {
        Projections {
            z0: ch.h_d.ad_mul(&theta.v),
            z: ch.h_hat.iter().map(|h| h.ad_mul(&theta.v)).collect(),
        }
    }

    /// `h_eq(b)^H v`.
    pub fn w(&self, b: &[bool], cfg: &SystemConfig) -> CVec {
        let mut w = self.z0.clone();
        for (k, &on) in b.iter().enumerate() {
            if on && cfg.alpha[k] != 0.0 {
                w.axpy(Complex64::from(cfg.alpha[k].sqrt()), &self.z[k], Complex64::from(1.0));
            }
        }
        w
    }
}

/// Backscatter SINR of tag `k` as `A X / (C X + D)`, `X = ||s||^2`.
pub(crate) struct TagRatio {
    pub a: f64,
    pub c: f64,
    pub d: f64,
    /// `c_km = u_k^H h_hat_m^H v` for every `m`.
    pub coupling: Vec<Complex64>,
}

impl TagRatio {
    pub fn new(theta: &Transceiver, proj: &Projections, cfg: &SystemConfig, k: usize) -> Result<Self> {
        let uk = &theta.u[k];
        let d = cfg.sigma_w2 * require_nonzero(uk, &format!("tag {k}"))?;
        let coupling: Vec<Complex64> = proj.z.iter().map(|z| dot(uk, z)).collect();
        let a = cfg.tag_weight(k) * coupling[k].norm_sqr();
        let c = (0..cfg.k)
            .filter(|&m| m != k)
            .map(|m| cfg.tag_weight(m) * coupling[m].norm_sqr())
            .sum();
        Ok(TagRatio { a, c, d, coupling })
    }

    pub fn at(&self, x: f64) -> f64 {
        self.a * x / (self.c * x + self.d)
    }

    /// Real gradients of `A`, `C`, `D` written into full-length vectors.
    pub fn grads(
        &self,
        theta: &Transceiver,
        proj: &Projections,
        ch: &ChannelRealization,
        cfg: &SystemConfig,
        k: usize,
    ) -> [DVector<f64>; 3] {
        let layout = Layout::of(cfg);
        let uk = &theta.u[k];
        let mut ga_v = CVec::zeros(cfg.m);
        let mut gc_v = CVec::zeros(cfg.m);
        let mut ga_u = CVec::zeros(cfg.n);
        let mut gc_u = CVec::zeros(cfg.n);
        for m in 0..cfg.k {
            let w = cfg.tag_weight(m);
            if w == 0.0 {
                continue;
            }
            let cm = self.coupling[m];
            let hu = &ch.h_hat[m] * uk;
            let two_w = Complex64::from(2.0 * w);
            if m == k {
                ga_v.axpy(two_w * cm, &hu, Complex64::from(1.0));
                ga_u.axpy(two_w * cm.conj(), &proj.z[m], Complex64::from(1.0));
            } else {
                gc_v.axpy(two_w * cm, &hu, Complex64::from(1.0));
                gc_u.axpy(two_w * cm.conj(), &proj.z[m], Complex64::from(1.0));
            }
        }
        let gd_u = uk * Complex64::from(2.0 * cfg.sigma_w2);
        let dim = layout.dim();
        let mut ga = DVector::zeros(dim);
        let mut gc = DVector::zeros(dim);
        let mut gd = DVector::zeros(dim);
        write_block(&mut ga, layout.v(), &ga_v);
        write_block(&mut ga, layout.u_k(k), &ga_u);
        write_block(&mut gc, layout.v(), &gc_v);
        write_block(&mut gc, layout.u_k(k), &gc_u);
        write_block(&mut gd, layout.u_k(k), &gd_u);
        [ga, gc, gd]
    }
}

/// Direct-link SINR `|u_s^H h_eq(b)^H v|^2 / (sigma^2 ||u_s||^2)`.
pub fn gamma_s_instant(
    theta: &Transceiver,
    b: &[bool],
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<f64> {
    let q = cfg.sigma_w2 * require_nonzero(&theta.u_s, "direct-link")?;
    let w = effective_channel(ch, b, cfg).ad_mul(&theta.v);
    Ok(dot(&theta.u_s, &w).norm_sqr() / q)
}

/// Backscatter SINR of tag `k` (zero-based) given the primary symbols `s`.
pub fn gamma_k_instant(
    theta: &Transceiver,
    s: &[Complex64],
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64> {
    let x: f64 = s.iter().map(|z| z.norm_sqr()).sum();
    gamma_k_given_norm(theta, x, ch, cfg, k)
}

/// Backscatter SINR of tag `k` for `||s||^2 = x`.
pub fn gamma_k_given_norm(
    theta: &Transceiver,
    x: f64,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64> {
    assert!(k < cfg.k, "tag index {k} out of range for K = {}", cfg.k);
    let proj = Projections::new(theta, ch);
    Ok(TagRatio::new(theta, &proj, cfg, k)?.at(x))
}

/// All instantaneous SINRs of one random state.
pub fn sinr_instant(
    theta: &Transceiver,
    sample: &RandomSample,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<SinrVector> {
    let proj = Projections::new(theta, ch);
    sinr_instant_with(theta, &proj, sample, cfg)
}

pub(crate) fn sinr_instant_with(
    theta: &Transceiver,
    proj: &Projections,
    sample: &RandomSample,
    cfg: &SystemConfig,
) -> Result<SinrVector> {
    let q = cfg.sigma_w2 * require_nonzero(&theta.u_s, "direct-link")?;
    let gamma_s = dot(&theta.u_s, &proj.w(&sample.b, cfg)).norm_sqr() / q;
    let x = sample.s_norm2();
    let gamma = (0..cfg.k)
        .map(|k| Ok(TagRatio::new(theta, proj, cfg, k)?.at(x)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SinrVector { gamma_s, gamma })
}

/// Calls `f(b, prob)` for every tag-symbol pattern.
fn for_each_pattern(cfg: &SystemConfig, mut f: impl FnMut(&[bool], f64)) -> Result<()> {
    if cfg.k > MAX_ENUM_TAGS {
        return Err(Error::UnsupportedSize {
            k: cfg.k,
            max: MAX_ENUM_TAGS,
        });
    }
    let mut b = vec![false; cfg.k];
    for mask in 0u64..(1u64 << cfg.k) {
        let mut p = 1.0;
        for (k, bk) in b.iter_mut().enumerate() {
            *bk = mask >> k & 1 == 1;
            p *= if *bk { cfg.rho[k] } else { 1.0 - cfg.rho[k] };
        }
        f(&b, p);
    }
    Ok(())
}

/// `E_b[gamma_s]` by enumerating all `2^K` tag patterns.
pub fn expected_gamma_s_exact(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<f64> {
    let q = cfg.sigma_w2 * require_nonzero(&theta.u_s, "direct-link")?;
    let proj = Projections::new(theta, ch);
    let mut acc = 0.0;
    for_each_pattern(cfg, |b, p| {
        acc += p * dot(&theta.u_s, &proj.w(b, cfg)).norm_sqr();
    })?;
    Ok(acc / q)
}

/// `E_s[gamma_k]` by quadrature over `||s||^2 ~ Gamma(L, 1)`.
pub fn expected_gamma_k_exact(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64> {
    assert!(k < cfg.k, "tag index {k} out of range for K = {}", cfg.k);
    let proj = Projections::new(theta, ch);
    let r = TagRatio::new(theta, &proj, cfg, k)?;
    if r.a == 0.0 {
        return Ok(0.0);
    }
    Ok(r.a * ratio_moments(cfg.l, r.c, r.d, QUAD_RTOL)[0])
}

/// The composite expected SINR vector from the exact oracles.
pub fn expected_sinr_exact(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<SinrVector> {
    Ok(SinrVector {
        gamma_s: expected_gamma_s_exact(theta, ch, cfg)?,
        gamma: (0..cfg.k)
            .map(|k| expected_gamma_k_exact(theta, ch, cfg, k))
            .collect::<Result<_>>()?,
    })
}

/// Exact expected SINRs and their Jacobian, `dim x (K+1)`, columns `(s, 1..K)`.
pub fn expected_sinr_jacobian_exact(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<(SinrVector, DMatrix<f64>)> {
    let layout = Layout::of(cfg);
    let proj = Projections::new(theta, ch);
    let mut jac = DMatrix::zeros(layout.dim(), cfg.k + 1);

    // direct link: average the per-pattern gradients
    let us = &theta.u_s;
    let q = cfg.sigma_w2 * require_nonzero(us, "direct-link")?;
    let mut gs = 0.0;
    let mut gv = CVec::zeros(cfg.m);
    let mut gu = CVec::zeros(cfg.n);
    for_each_pattern(cfg, |b, p| {
        let w = proj.w(b, cfg);
        let c = dot(us, &w);
        let gamma = c.norm_sqr() / q;
        gs += p * gamma;
        let heq_us = effective_channel(ch, b, cfg) * us;
        gv.axpy(Complex64::from(2.0 * p / q) * c, &heq_us, Complex64::from(1.0));
        gu.axpy(Complex64::from(2.0 * p / q) * c.conj(), &w, Complex64::from(1.0));
        gu.axpy(Complex64::from(-2.0 * p * gamma * cfg.sigma_w2 / q), us, Complex64::from(1.0));
    })?;
    let mut col = DVector::zeros(layout.dim());
    write_block(&mut col, layout.v(), &gv);
    write_block(&mut col, layout.u_s(), &gu);
    jac.set_column(0, &col);

    let mut gamma = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let r = TagRatio::new(theta, &proj, cfg, k)?;
        let [i1, i2, i3] = ratio_moments(cfg.l, r.c, r.d, QUAD_RTOL);
        gamma.push(r.a * i1);
        let [ga, gc, gd] = r.grads(theta, &proj, ch, cfg, k);
        let col = ga * i1 - gc * (r.a * i2) - gd * (r.a * i3);
        jac.set_column(k + 1, &col);
    }
    Ok((SinrVector { gamma_s: gs, gamma }, jac))
}

/// Monte Carlo estimate with per-component standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrEstimate {
    pub mean: SinrVector,
    /// Standard error of each mean; `NaN` when only one sample was drawn.
    pub stderr: SinrVector,
    pub n_samples: usize,
}

/// Sample mean of instantaneous SINRs over `n_samples` seeded draws of `(b, s)`.
pub fn expected_sinr_monte_carlo(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
    n_samples: usize,
    seed: u64,
) -> Result<SinrEstimate> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be >= 1".to_string()));
    }
    let proj = Projections::new(theta, ch);
    let ratios = (0..cfg.k)
        .map(|k| TagRatio::new(theta, &proj, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let q = cfg.sigma_w2 * require_nonzero(&theta.u_s, "direct-link")?;
    let mut rng = stream(seed, Purpose::MonteCarlo, 0, 0);
    let dim = cfg.k + 1;
    let mut sum = vec![0.0; dim];
    let mut sum2 = vec![0.0; dim];
    for _ in 0..n_samples {
        let sample = RandomSample::draw(cfg, &mut rng);
        let x = sample.s_norm2();
        let g0 = dot(&theta.u_s, &proj.w(&sample.b, cfg)).norm_sqr() / q;
        for (i, g) in std::iter::once(g0)
            .chain(ratios.iter().map(|r| r.at(x)))
            .enumerate()
        {
            sum[i] += g;
            sum2[i] += g * g;
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..dim)
        .map(|i| {
            if n_samples < 2 {
                f64::NAN
            } else {
                let var = (sum2[i] - n * mean[i] * mean[i]).max(0.0) / (n - 1.0);
                (var / n).sqrt()
            }
        })
        .collect();
    Ok(SinrEstimate {
        mean: SinrVector::from_slice(&mean),
        stderr: SinrVector::from_slice(&stderr),
        n_samples,
    })
}

/// A network utility of the expected SINR vector.
///
/// Everything that consumes a utility goes through this trait, so alternative
/// utilities only need a new implementation.
pub trait Utility {
    /// Exact value; errors outside the utility's domain.
    fn value(&self, gamma: &SinrVector) -> Result<f64>;

    /// Value continued outside the domain so that its gradient is
    /// [`Utility::grad_clamped`]. Equal to [`Utility::value`] well inside the domain.
    fn value_extended(&self, gamma: &SinrVector) -> f64;

    /// Gradient, erroring outside the domain.
    fn grad(&self, gamma: &SinrVector) -> Result<DVector<f64>>;

    /// Gradient with the barrier clamp applied; defined everywhere.
    fn grad_clamped(&self, gamma: &SinrVector) -> DVector<f64>;
}

/// `gamma_s + (1/psi) sum_k log(gamma_k - gamma0_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierUtility {
    pub psi: f64,
    pub gamma0: Vec<f64>,
    pub eps_bar: f64,
}

impl BarrierUtility {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        BarrierUtility {
            psi: cfg.psi,
            gamma0: cfg.gamma0.clone(),
            eps_bar: cfg.eps_bar,
        }
    }

    fn check_domain(&self, gamma: &SinrVector) -> Result<()> {
        for (k, (&g, &g0)) in gamma.gamma.iter().zip(&self.gamma0).enumerate() {
            if !(g > g0) {
                return Err(Error::BarrierDomain {
                    tag: k,
                    sinr: g,
                    target: g0,
                });
            }
        }
        Ok(())
    }
}

impl Utility for BarrierUtility {
    fn value(&self, gamma: &SinrVector) -> Result<f64> {
        self.check_domain(gamma)?;
        let barrier: f64 = gamma
            .gamma
            .iter()
            .zip(&self.gamma0)
            .map(|(g, g0)| (g - g0).ln())
            .sum();
        Ok(gamma.gamma_s + barrier / self.psi)
    }

    fn value_extended(&self, gamma: &SinrVector) -> f64 {
        // log continued linearly below eps: C1 and concave
        let eps = self.eps_bar;
        let barrier: f64 = gamma
            .gamma
            .iter()
            .zip(&self.gamma0)
            .map(|(g, g0)| {
                let x = g - g0;
                if x >= eps {
                    x.ln()
                } else {
                    eps.ln() + (x - eps) / eps
                }
            })
            .sum();
        gamma.gamma_s + barrier / self.psi
    }

    fn grad(&self, gamma: &SinrVector) -> Result<DVector<f64>> {
        self.check_domain(gamma)?;
        Ok(DVector::from_iterator(
            gamma.gamma.len() + 1,
            std::iter::once(1.0).chain(
                gamma
                    .gamma
                    .iter()
                    .zip(&self.gamma0)
                    .map(|(g, g0)| 1.0 / (self.psi * (g - g0))),
            ),
        ))
    }

    fn grad_clamped(&self, gamma: &SinrVector) -> DVector<f64> {
        DVector::from_iterator(
            gamma.gamma.len() + 1,
            std::iter::once(1.0).chain(
                gamma
                    .gamma
                    .iter()
                    .zip(&self.gamma0)
                    .map(|(g, g0)| 1.0 / (self.psi * (g - g0).max(self.eps_bar))),
            ),
        )
    }
}

/// Barrier utility of `gamma` under `cfg`.
pub fn utility(gamma: &SinrVector, cfg: &SystemConfig) -> Result<f64> {
    BarrierUtility::from_config(cfg).value(gamma)
}

/// Weight vector `nu = grad f`; `clamped` selects the barrier-clamped variant.
pub fn utility_grad(gamma: &SinrVector, cfg: &SystemConfig, clamped: bool) -> Result<DVector<f64>> {
    let u = BarrierUtility::from_config(cfg);
    if clamped {
        Ok(u.grad_clamped(gamma))
    } else {
        u.grad(gamma)
    }
}

/// Real gradients of every instantaneous SINR of `sample`, `dim x (K+1)`.
pub fn sinr_grad_instant(
    theta: &Transceiver,
    sample: &RandomSample,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<DMatrix<f64>> {
    let proj = Projections::new(theta, ch);
    let (_, jac) = sinr_and_grad_with(theta, &proj, sample, ch, cfg)?;
    Ok(jac)
}

/// Instantaneous SINRs and their Jacobian sharing one set of projections.
pub(crate) fn sinr_and_grad_with(
    theta: &Transceiver,
    proj: &Projections,
    sample: &RandomSample,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<(SinrVector, DMatrix<f64>)> {
    let layout = Layout::of(cfg);
    let mut jac = DMatrix::zeros(layout.dim(), cfg.k + 1);

    let us = &theta.u_s;
    let q = cfg.sigma_w2 * require_nonzero(us, "direct-link")?;
    let w = proj.w(&sample.b, cfg);
    let c = dot(us, &w);
    let gamma_s = c.norm_sqr() / q;
    let heq_us = effective_channel(ch, &sample.b, cfg) * us;
    let gv = heq_us * (c * (2.0 / q));
    let gu = (w * c.conj() - us * Complex64::from(gamma_s * cfg.sigma_w2)) * Complex64::from(2.0 / q);
    let mut col = DVector::zeros(layout.dim());
    write_block(&mut col, layout.v(), &gv);
    write_block(&mut col, layout.u_s(), &gu);
    jac.set_column(0, &col);

    let x = sample.s_norm2();
    let mut gamma = Vec::with_capacity(cfg.k);
    for k in 0..cfg.k {
        let r = TagRatio::new(theta, proj, cfg, k)?;
        let den = r.c * x + r.d;
        let g = r.a * x / den;
        gamma.push(g);
        let [ga, gc, gd] = r.grads(theta, proj, ch, cfg, k);
        // d(AX/(CX+D)) = (A' X - g (C' X + D')) / (CX+D)
        let col = (ga * x - (gc * x + gd) * g) / den;
        jac.set_column(k + 1, &col);
    }
    Ok((SinrVector { gamma_s, gamma }, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_transceiver, small_config, unit_channel};
    use crate::params::{pack, unpack};

    fn scalar_cfg(k: usize) -> SystemConfig {
        let mut cfg = small_config(1, 1, k);
        cfg.sigma_w2 = 1.0;
        cfg.alpha = vec![1.0; k];
        cfg.rho = vec![0.5; k];
        cfg
    }

    fn scalar_theta(v: f64, k: usize) -> Transceiver {
        Transceiver {
            v: CVec::from_element(1, Complex64::from(v)),
            u_s: CVec::from_element(1, Complex64::from(1.0)),
            u: vec![CVec::from_element(1, Complex64::from(1.0)); k],
        }
    }

    #[test]
    fn scalar_direct_link() {
        let cfg = scalar_cfg(0);
        let ch = ChannelRealization {
            h_d: crate::channel::CMat::from_element(1, 1, Complex64::from(1.0)),
            h_hat: vec![],
        };
        let theta = scalar_theta(2.0, 0);
        assert_eq!(gamma_s_instant(&theta, &[], &ch, &cfg).unwrap(), 4.0);
        let mut scaled = theta.clone();
        scaled.u_s *= Complex64::new(3.0, -4.0);
        assert!((gamma_s_instant(&scaled, &[], &ch, &cfg).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_backscatter_link() {
        let cfg = scalar_cfg(1);
        let one = crate::channel::CMat::from_element(1, 1, Complex64::from(1.0));
        let ch = ChannelRealization {
            h_d: one.clone(),
            h_hat: vec![one],
        };
        let theta = scalar_theta(1.0, 1);
        let s = [Complex64::new(2.0, 0.0)];
        assert_eq!(gamma_k_instant(&theta, &s, &ch, &cfg, 0).unwrap(), 1.0);
        let s2 = [Complex64::new(0.0, 2f64.sqrt()), Complex64::new(2f64.sqrt(), 0.0)];
        assert!((gamma_k_instant(&theta, &s2, &ch, &cfg, 0).unwrap() - 1.0).abs() < 1e-15);
        // K = 1 has no interference: E = a L / d exactly
        let e = expected_gamma_k_exact(&theta, &ch, &cfg, 0).unwrap();
        assert_eq!(e, 0.25 * cfg.l as f64);
    }

    #[test]
    fn zero_receiver_is_a_domain_error() {
        let cfg = small_config(2, 2, 1);
        let ch = unit_channel(&cfg, 1, 0.5);
        let mut theta = random_transceiver(&cfg, 1);
        theta.u_s.fill(Complex64::from(0.0));
        assert!(matches!(gamma_s_instant(&theta, &[false], &ch, &cfg), Err(Error::Domain(_))));
        theta.u[0].fill(Complex64::from(0.0));
        assert!(matches!(
            gamma_k_given_norm(&theta, 3.0, &ch, &cfg, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn tag_index_out_of_range_panics() {
        let cfg = small_config(2, 2, 1);
        let ch = unit_channel(&cfg, 1, 0.5);
        let theta = random_transceiver(&cfg, 1);
        let _ = gamma_k_given_norm(&theta, 1.0, &ch, &cfg, 1);
    }

    #[test]
    fn enumeration_matches_second_moment_closed_form() {
        // E|c0 + sum beta_k b_k|^2 = |c0 + sum beta_k rho_k|^2 + sum |beta_k|^2 rho_k (1 - rho_k)
        for seed in 0..10 {
            let cfg = small_config(3, 2, 4);
            let ch = unit_channel(&cfg, seed, 0.7);
            let theta = random_transceiver(&cfg, seed);
            let c0 = theta.u_s.dotc(&ch.h_d.ad_mul(&theta.v));
            let betas: Vec<Complex64> = (0..cfg.k)
                .map(|k| theta.u_s.dotc(&ch.h_hat[k].ad_mul(&theta.v)) * cfg.alpha[k].sqrt())
                .collect();
            let mean = betas
                .iter()
                .zip(&cfg.rho)
                .fold(c0, |acc, (b, r)| acc + b * *r);
            let second = mean.norm_sqr()
                + betas
                    .iter()
                    .zip(&cfg.rho)
                    .map(|(b, r)| b.norm_sqr() * r * (1.0 - r))
                    .sum::<f64>();
            let want = second / (cfg.sigma_w2 * theta.u_s.norm_squared());
            let got = expected_gamma_s_exact(&theta, &ch, &cfg).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn enumeration_bound_is_enforced() {
        let mut cfg = small_config(1, 1, MAX_ENUM_TAGS + 1);
        cfg.batch = 1;
        let ch = unit_channel(&cfg, 0, 0.1);
        let theta = random_transceiver(&cfg, 0);
        assert!(matches!(
            expected_gamma_s_exact(&theta, &ch, &cfg),
            Err(Error::UnsupportedSize { .. })
        ));
    }

    #[test]
    fn degenerate_expectations() {
        let mut cfg = small_config(3, 2, 2);
        let ch = unit_channel(&cfg, 3, 0.5);
        let theta = random_transceiver(&cfg, 3);
        cfg.alpha = vec![0.0, 0.0];
        let e = expected_gamma_s_exact(&theta, &ch, &cfg).unwrap();
        let i = gamma_s_instant(&theta, &[true, false], &ch, &cfg).unwrap();
        assert!((e - i).abs() <= 1e-13 * i);

        let cfg = small_config(3, 2, 2);
        let mut zero_v = theta.clone();
        zero_v.v.fill(Complex64::from(0.0));
        assert_eq!(expected_gamma_k_exact(&zero_v, &ch, &cfg, 1).unwrap(), 0.0);

        let mut one = small_config(3, 2, 1);
        one.rho = vec![0.5];
        let ch1 = unit_channel(&one, 4, 0.5);
        let t1 = random_transceiver(&one, 4);
        let e = expected_gamma_s_exact(&t1, &ch1, &one).unwrap();
        let avg = 0.5
            * (gamma_s_instant(&t1, &[false], &ch1, &one).unwrap()
                + gamma_s_instant(&t1, &[true], &ch1, &one).unwrap());
        assert!((e - avg).abs() <= 1e-13 * avg);
    }

    #[test]
    fn monte_carlo_is_seeded_and_single_sample_is_instantaneous() {
        let cfg = small_config(3, 2, 2);
        let ch = unit_channel(&cfg, 5, 0.5);
        let theta = random_transceiver(&cfg, 5);
        let a = expected_sinr_monte_carlo(&theta, &ch, &cfg, 50, 9).unwrap();
        let b = expected_sinr_monte_carlo(&theta, &ch, &cfg, 50, 9).unwrap();
        assert_eq!(a, b);
        let one = expected_sinr_monte_carlo(&theta, &ch, &cfg, 1, 9).unwrap();
        let sample = RandomSample::draw(&cfg, &mut stream(9, Purpose::MonteCarlo, 0, 0));
        let inst = sinr_instant(&theta, &sample, &ch, &cfg).unwrap();
        assert!((one.mean.gamma_s - inst.gamma_s).abs() <= 1e-14 * inst.gamma_s);
        for k in 0..cfg.k {
            assert!((one.mean.gamma[k] - inst.gamma[k]).abs() <= 1e-14 * inst.gamma[k]);
        }
        assert!(one.stderr.gamma_s.is_nan());
    }

    #[test]
    fn utility_reference_values() {
        let mut cfg = small_config(1, 1, 4);
        cfg.psi = 1.0;
        cfg.gamma0 = vec![5.0; 4];
        let g = SinrVector {
            gamma_s: 10.0,
            gamma: vec![6.0; 4],
        };
        assert_eq!(utility(&g, &cfg).unwrap(), 10.0);
        let e = SinrVector {
            gamma_s: 3.0,
            gamma: vec![5.0 + std::f64::consts::E; 4],
        };
        assert!((utility(&e, &cfg).unwrap() - 7.0).abs() < 1e-14);
        let bad = SinrVector {
            gamma_s: 3.0,
            gamma: vec![6.0, 5.0, 6.0, 6.0],
        };
        assert!(matches!(utility(&bad, &cfg), Err(Error::BarrierDomain { tag: 1, .. })));
    }

    #[test]
    fn weights_and_clamp() {
        let mut cfg = small_config(1, 1, 2);
        cfg.psi = 2.0;
        cfg.gamma0 = vec![5.0; 2];
        let g = SinrVector {
            gamma_s: 1.0,
            gamma: vec![6.0, 0.0],
        };
        assert!(utility_grad(&g, &cfg, false).is_err());
        let nu = utility_grad(&g, &cfg, true).unwrap();
        assert_eq!(nu[0], 1.0);
        assert_eq!(nu[1], 0.5);
        assert_eq!(nu[2], 1.0 / (2.0 * cfg.eps_bar));
    }

    #[test]
    fn extended_utility_matches_inside_and_is_c1_at_the_kink() {
        let cfg = small_config(1, 1, 1);
        let u = BarrierUtility::from_config(&cfg);
        let at = |x: f64| SinrVector {
            gamma_s: 0.0,
            gamma: vec![cfg.gamma0[0] + x],
        };
        assert!((u.value_extended(&at(0.7)) - u.value(&at(0.7)).unwrap()).abs() < 1e-15);
        let e = cfg.eps_bar;
        let h = 1e-9;
        let left = (u.value_extended(&at(e)) - u.value_extended(&at(e - h))) / h;
        let right = (u.value_extended(&at(e + h)) - u.value_extended(&at(e))) / h;
        assert!((left - right).abs() / left < 1e-4);
        assert!(u.value_extended(&at(-3.0)).is_finite());
    }

    #[test]
    fn sinr_gradients_separate_blocks() {
        let cfg = small_config(3, 2, 2);
        let ch = unit_channel(&cfg, 6, 0.5);
        let theta = random_transceiver(&cfg, 6);
        let sample = crate::channel::sample_states(&cfg, 6).samples[0].clone();
        let jac = sinr_grad_instant(&theta, &sample, &ch, &cfg).unwrap();
        let l = Layout::of(&cfg);
        for k in 0..cfg.k {
            for i in 0..2 * cfg.n {
                assert_eq!(jac[(l.u_k(k) + i, 0)], 0.0);
                assert_eq!(jac[(l.u_s() + i, k + 1)], 0.0);
            }
        }
        // a tag column ignores other tags' receivers
        for i in 0..2 * cfg.n {
            assert_eq!(jac[(l.u_k(1) + i, 1)], 0.0);
        }
    }

    #[test]
    fn exact_jacobian_matches_finite_differences() {
        let cfg = small_config(3, 2, 2);
        let ch = unit_channel(&cfg, 8, 0.6);
        let theta = random_transceiver(&cfg, 8);
        let (_, jac) = expected_sinr_jacobian_exact(&theta, &ch, &cfg).unwrap();
        let p = pack(&theta);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += h;
            b[i] -= h;
            let ga = expected_sinr_exact(&unpack(&a, &cfg).unwrap(), &ch, &cfg).unwrap().to_vector();
            let gb = expected_sinr_exact(&unpack(&b, &cfg).unwrap(), &ch, &cfg).unwrap().to_vector();
            for c in 0..=cfg.k {
                let fd = (ga[c] - gb[c]) / (2.0 * h);
                let scale = jac.column(c).amax().max(1e-12);
                assert!(
                    (fd - jac[(i, c)]).abs() <= 1e-5 * scale,
                    "param {i} column {c}: fd {fd} analytic {}",
                    jac[(i, c)]
                );
            }
        }
    }
}
