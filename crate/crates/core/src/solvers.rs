//! Exact maximization of the surrogate over the power ball.
//!
//! The surrogate separates into a transmit block and one block per receiver.
//! The transmit block is `max 2 Re{b^H v} - v^H A v` subject to
//! `||v||^2 <= P_max`, solved as `v(mu) = (A + mu I)^{-1} b` with `mu` found by
//! bisection. Each receive block is an unconstrained concave quadratic with a
//! closed-form maximizer.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{effective_channel, CMat, CVec, ChannelRealization, MiniBatch};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::params::{pack, read_block, unpack, Layout, Transceiver};
use crate::rng::{stream, Purpose};
use crate::surrogate::{surrogate_value, AuxiliaryPhi, RecursiveState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance on `||v||^2 - P_max` when the power constraint is active.
    pub mu_tol: f64,
    /// Initial upper bracket for `mu`, in units of `||b|| / sqrt(P_max)`.
    pub mu_hi_init: f64,
    /// Cap on bracket doublings and on bisection steps.
    pub max_bisect: usize,
    /// Agreement required between the two oracle runs.
    pub oracle_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mu_tol: 1e-12,
            mu_hi_init: 0.5,
            max_bisect: 200,
            oracle_tol: 1e-6,
        }
    }
}

/// Everything the surrogate maximization needs besides the variables.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateInputs<'a> {
    pub theta_prev: &'a Transceiver,
    pub state: &'a RecursiveState,
    pub batch: &'a MiniBatch,
    pub phi: &'a AuxiliaryPhi,
    pub xi_t: f64,
    pub ch: &'a ChannelRealization,
    pub cfg: &'a SystemConfig,
}

impl SurrogateInputs<'_> {
    /// Surrogate value at `theta`.
    pub fn value(&self, theta: &Transceiver) -> f64 {
        surrogate_value(
            theta,
            self.theta_prev,
            self.state,
            self.batch,
            self.phi,
            self.xi_t,
            self.ch,
            self.cfg,
        )
    }

    fn tracked_block(&self, at: usize, n: usize) -> CVec {
        // linear term gradient . dtheta is Re{g^H dz}; half of it enters b
        read_block(&self.state.gradient, at, n) * Complex64::from(0.5 * (1.0 - self.xi_t))
    }

    /// `(xi / J) * weight`, the factor in front of every batch term.
    fn scale(&self) -> f64 {
        self.xi_t / self.batch.len() as f64
    }
}

/// Transmit-block quadratic `2 Re{b^H v} - v^H A v`.
#[derive(Debug, Clone)]
pub struct TransmitBlock {
    pub a: CMat,
    pub b: CVec,
}

/// Solution of the transmit block.
#[derive(Debug, Clone)]
pub struct TransmitSolution {
    pub v: CVec,
    /// Power multiplier; zero when the constraint is inactive.
    pub mu: f64,
    pub active: bool,
}

impl TransmitBlock {
    pub fn assemble(inp: &SurrogateInputs) -> Self {
        let cfg = inp.cfg;
        let prev = inp.theta_prev;
        let nu = &inp.state.weights;
        let scale = inp.scale();
        let mut b = CVec::zeros(cfg.m);
        let mut a = CMat::zeros(cfg.m, cfg.m);

        // interference weights sum_j nu_k |phi_kj|^2 a_m X_j, per (k, m)
        let mut coupling = vec![vec![0.0; cfg.k]; cfg.k];
        for (j, sample) in inp.batch.samples.iter().enumerate() {
            let x = sample.s_norm2();
            let heq_us = effective_channel(inp.ch, &sample.b, cfg) * &prev.u_s;
            b.axpy(inp.phi.phi_s[j] * (scale * nu[0]), &heq_us, Complex64::from(1.0));
            for k in 0..cfg.k {
                let phi = inp.phi.phi_k[j][k];
                let hu = &inp.ch.h_hat[k] * &prev.u[k];
                b.axpy(
                    phi * (scale * nu[k + 1] * (cfg.tag_weight(k) * x).sqrt()),
                    &hu,
                    Complex64::from(1.0),
                );
                for m in (0..cfg.k).filter(|&m| m != k) {
                    coupling[k][m] += nu[k + 1] * phi.norm_sqr() * cfg.tag_weight(m) * x;
                }
            }
        }
        for k in 0..cfg.k {
            for m in (0..cfg.k).filter(|&m| m != k) {
                let w = scale * coupling[k][m];
                if w != 0.0 {
                    let hu = &inp.ch.h_hat[m] * &prev.u[k];
                    a.ger(Complex64::from(w), &hu, &hu.conjugate(), Complex64::from(1.0));
                }
            }
        }
        for i in 0..cfg.m {
            a[(i, i)] += Complex64::from(cfg.tau_v);
        }
        b += inp.tracked_block(Layout::of(cfg).v(), cfg.m) + &prev.v * Complex64::from(cfg.tau_v);
        TransmitBlock { a, b }
    }

    /// `(A + mu I)^{-1} b`.
    pub fn at(&self, mu: f64) -> Result<CVec> {
        let mut m = self.a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += Complex64::from(mu);
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Solver(format!("transmit block not positive definite at mu = {mu}")))?;
        Ok(chol.solve(&self.b))
    }

    pub fn power(&self, mu: f64) -> Result<f64> {
        Ok(self.at(mu)?.norm_squared())
    }

    pub fn value(&self, v: &CVec) -> f64 {
        2.0 * self.b.dotc(v).re - v.dotc(&(&self.a * v)).re
    }

    pub fn solve(&self, p_max: f64, opts: &SolverOptions) -> Result<TransmitSolution> {
        let v0 = self.at(0.0)?;
        if v0.norm_squared() <= p_max {
            return Ok(TransmitSolution {
                v: v0,
                mu: 0.0,
                active: false,
            });
        }
        let mut hi = opts.mu_hi_init * self.b.norm() / p_max.sqrt();
        let mut doublings = 0;
        let mut v_hi = self.at(hi)?;
        while v_hi.norm_squared() >= p_max {
            doublings += 1;
            if doublings > opts.max_bisect {
                return Err(Error::Solver(format!(
                    "no power bracket after {} doublings (mu = {hi})",
                    opts.max_bisect
                )));
            }
            hi *= 2.0;
            v_hi = self.at(hi)?;
        }
        let mut lo = 0.0;
        let mut p_lo = v0.norm_squared();
        for _ in 0..opts.max_bisect {
            let p_hi = v_hi.norm_squared();
            if p_max - p_hi <= opts.mu_tol * p_max || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let v_mid = self.at(mid)?;
            let p_mid = v_mid.norm_squared();
            debug_assert!(p_mid <= p_lo * (1.0 + 1e-12) && p_mid >= p_hi * (1.0 - 1e-12));
            if p_mid >= p_max {
                lo = mid;
                p_lo = p_mid;
            } else {
                hi = mid;
                v_hi = v_mid;
            }
        }
        Ok(TransmitSolution {
            v: v_hi,
            mu: hi,
            active: true,
        })
    }
}

/// Receive-block quadratic `2 Re{beta^H u} - u^H B u`.
#[derive(Debug, Clone)]
pub struct ReceiveBlock {
    pub a: CMat,
    pub b: CVec,
}

impl ReceiveBlock {
    pub fn solve(&self) -> Result<CVec> {
        let chol = self
            .a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Solver("receive block not positive definite".into()))?;
        Ok(chol.solve(&self.b))
    }

    pub fn value(&self, u: &CVec) -> f64 {
        2.0 * self.b.dotc(u).re - u.dotc(&(&self.a * u)).re
    }
}

/// Direct-link receiver block, then one block per tag.
pub fn receive_blocks(inp: &SurrogateInputs) -> (ReceiveBlock, Vec<ReceiveBlock>) {
    let cfg = inp.cfg;
    let prev = inp.theta_prev;
    let nu = &inp.state.weights;
    let scale = inp.scale();
    let layout = Layout::of(cfg);
    let z: Vec<CVec> = inp.ch.h_hat.iter().map(|h| h.ad_mul(&prev.v)).collect();

    let mut bs = CVec::zeros(cfg.n);
    let mut as_ = 0.0;
    for (j, sample) in inp.batch.samples.iter().enumerate() {
        let w = effective_channel(inp.ch, &sample.b, cfg).ad_mul(&prev.v);
        let phi = inp.phi.phi_s[j];
        bs.axpy(phi.conj() * (scale * nu[0]), &w, Complex64::from(1.0));
        as_ += scale * nu[0] * cfg.sigma_w2 * phi.norm_sqr();
    }
    bs += inp.tracked_block(layout.u_s(), cfg.n) + &prev.u_s * Complex64::from(cfg.tau_u);
    let direct = ReceiveBlock {
        a: CMat::identity(cfg.n, cfg.n) * Complex64::from(as_ + cfg.tau_u),
        b: bs,
    };

    let tags = (0..cfg.k)
        .map(|k| {
            let mut b = CVec::zeros(cfg.n);
            let mut a = CMat::zeros(cfg.n, cfg.n);
            let mut noise = 0.0;
            let mut coupling = vec![0.0; cfg.k];
            for (j, sample) in inp.batch.samples.iter().enumerate() {
                let x = sample.s_norm2();
                let phi = inp.phi.phi_k[j][k];
                let w = scale * nu[k + 1];
                b.axpy(
                    phi.conj() * (w * (cfg.tag_weight(k) * x).sqrt()),
                    &z[k],
                    Complex64::from(1.0),
                );
                noise += w * phi.norm_sqr() * cfg.sigma_w2;
                for (m, c) in coupling.iter_mut().enumerate() {
                    if m != k {
                        *c += w * phi.norm_sqr() * cfg.tag_weight(m) * x;
                    }
                }
            }
            for (m, &c) in coupling.iter().enumerate() {
                if m != k && c != 0.0 {
                    a.ger(Complex64::from(c), &z[m], &z[m].conjugate(), Complex64::from(1.0));
                }
            }
            for i in 0..cfg.n {
                a[(i, i)] += Complex64::from(noise + cfg.tau_u);
            }
            b += inp.tracked_block(layout.u_k(k), cfg.n) + &prev.u[k] * Complex64::from(cfg.tau_u);
            ReceiveBlock { a, b }
        })
        .collect();
    (direct, tags)
}

/// Maximizer of the transmit block.
pub fn solve_v(inp: &SurrogateInputs, opts: &SolverOptions) -> Result<TransmitSolution> {
    TransmitBlock::assemble(inp).solve(inp.cfg.p_max, opts)
}

/// Maximizers of the receive blocks, `(u_s, [u_1..u_K])`.
pub fn solve_u(inp: &SurrogateInputs) -> Result<(CVec, Vec<CVec>)> {
    let (direct, tags) = receive_blocks(inp);
    let u_s = direct.solve()?;
    let u = tags.iter().map(ReceiveBlock::solve).collect::<Result<Vec<_>>>()?;
    Ok((u_s, u))
}

/// Unique maximizer of the surrogate over the power ball.
pub fn solve_surrogate(inp: &SurrogateInputs, opts: &SolverOptions) -> Result<Transceiver> {
    let (tx, rx) = rayon::join(|| solve_v(inp, opts), || solve_u(inp));
    let (u_s, u) = rx?;
    Ok(Transceiver { v: tx?.v, u_s, u })
}

fn project(p: &mut DVector<f64>, m: usize, p_max: f64) {
    let norm2: f64 = p.rows(0, 2 * m).norm_squared();
    if norm2 > p_max {
        let s = (p_max / norm2).sqrt();
        p.rows_mut(0, 2 * m).scale_mut(s);
    }
}

fn fd_gradient(f: &impl Fn(&DVector<f64>) -> f64, p: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(p.len(), |i, _| {
        let h = 1e-5 * (1.0 + p[i].abs());
        let mut a = p.clone();
        let mut b = p.clone();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

/// Accelerated projected gradient ascent with backtracking, using only
/// surrogate evaluations (central differences). Returns the final point and
/// the norm of its gradient mapping.
fn projected_ascent(
    f: &impl Fn(&DVector<f64>) -> f64,
    start: DVector<f64>,
    m: usize,
    p_max: f64,
    tol: f64,
) -> (DVector<f64>, f64) {
    let mut x = start;
    project(&mut x, m, p_max);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut mapping = f64::INFINITY;
    for _ in 0..200_000 {
        let g = fd_gradient(f, &y);
        let fy = f(&y);
        let next = loop {
            let mut cand = &y + &g / lip;
            project(&mut cand, m, p_max);
            let d = &cand - &y;
            // quadratic lower model must hold for ascent
            if f(&cand) >= fy + g.dot(&d) - 0.5 * lip * d.norm_squared() - 1e-13 * fy.abs() {
                break cand;
            }
            lip *= 2.0;
        };
        mapping = lip * (&next - &y).norm();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let restart = f(&next) < f(&x);
        y = if restart {
            t = 1.0;
            next.clone()
        } else {
            t = t_next;
            &next + (&next - &x) * momentum
        };
        x = next;
        lip *= 0.9;
        if mapping <= tol {
            break;
        }
    }
    (x, mapping)
}

/// Independent maximizer of the surrogate for small instances, from two
/// starts: the previous iterate and a seeded random feasible point.
pub fn oracle_solve_surrogate(inp: &SurrogateInputs, opts: &SolverOptions) -> Result<Transceiver> {
    let cfg = inp.cfg;
    let f = |p: &DVector<f64>| inp.value(&unpack(p, cfg).expect("oracle dimension"));
    let start_a = pack(inp.theta_prev);
    let mut rng = stream(0, Purpose::Oracle, 77, 0);
    let start_b = DVector::from_fn(start_a.len(), |i, _| start_a[i] + rng.random::<f64>() - 0.5);
    let tol = opts.oracle_tol * 1e-3;
    let (a, _) = projected_ascent(&f, start_a, cfg.m, cfg.p_max, tol);
    let (b, _) = projected_ascent(&f, start_b, cfg.m, cfg.p_max, tol);
    let gap = (&a - &b).norm();
    if gap > opts.oracle_tol * (1.0 + a.norm()) {
        return Err(Error::Solver(format!("oracle starts disagree by {gap}")));
    }
    unpack(&a, cfg)
}
