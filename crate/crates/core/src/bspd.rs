//! The batch stochastic parallel decomposition loop.
//!
//! Each iteration draws a fresh mini-batch, refreshes the tracked SINRs,
//! Jacobian and weights, maximizes the surrogate built at the previous
//! iterate, and moves a fraction `omega` of the way to its maximizer.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{CVec, ChannelRealization, MiniBatch};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{normalized, principal_left_direction};
use crate::params::{pack, Layout, Transceiver};
use crate::rng::{stream, Purpose};
use crate::sinr::{expected_sinr_jacobian_exact, BarrierUtility, Utility};
use crate::solvers::{solve_surrogate, SolverOptions, SurrogateInputs};
use crate::surrogate::{compute_phi, update_recursive_state, RecursiveState};

/// Step sizes `xi` (tracking) and `omega` (averaging) as functions of `t >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    /// `xi = (1+t)^(-2/3)`, `omega = 20 / (20 + t)`.
    #[default]
    Standard,
    /// `xi = (1+t)^(-kappa1)`; `omega = (1+t)^(-kappa2)`, or `c / (c + t)`
    /// when `offset = Some(c)` (which requires `kappa2 = 1`).
    PowerLaw {
        kappa1: f64,
        kappa2: f64,
        #[serde(default)]
        offset: Option<f64>,
    },
    /// Explicit values for `t = 1, 2, ..`; the last entry repeats.
    Custom { xi: Vec<f64>, omega: Vec<f64> },
}

impl StepSchedule {
    pub fn power_law(kappa1: f64, kappa2: f64) -> Result<Self> {
        let s = StepSchedule::PowerLaw {
            kappa1,
            kappa2,
            offset: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn custom(xi: Vec<f64>, omega: Vec<f64>) -> Result<Self> {
        let s = StepSchedule::Custom { xi, omega };
        s.validate()?;
        Ok(s)
    }

    /// For power laws: `0.5 < kappa1 < kappa2 <= 1`, which makes both sums
    /// diverge, both sums of squares converge and `omega / xi -> 0`.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        match self {
            StepSchedule::Standard => {}
            StepSchedule::PowerLaw {
                kappa1,
                kappa2,
                offset,
            } => {
                if !(0.5 < *kappa1 && kappa1 < kappa2 && *kappa2 <= 1.0) {
                    problems.push(format!(
                        "power-law schedule needs 0.5 < kappa1 < kappa2 <= 1, got kappa1 = {kappa1}, kappa2 = {kappa2}"
                    ));
                }
                if let Some(c) = offset {
                    if !(*c > 0.0) {
                        problems.push(format!("schedule offset must be positive, got {c}"));
                    }
                    if *kappa2 != 1.0 {
                        problems.push("an offset schedule decays like 1/t and needs kappa2 = 1".into());
                    }
                }
            }
            StepSchedule::Custom { xi, omega } => {
                if xi.is_empty() || xi.len() != omega.len() {
                    problems.push("custom schedule needs equal, nonempty xi and omega tables".into());
                }
                if xi.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
                    problems.push("custom xi values must lie in (0, 1]".into());
                }
                if omega.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    problems.push("custom omega values must lie in [0, 1]".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// First `t` from which `omega / xi` is nonincreasing (power-law kinds).
    pub fn burn_in(&self) -> usize {
        let (k1, c) = match self {
            StepSchedule::Standard => (2.0 / 3.0, Some(20.0)),
            StepSchedule::PowerLaw { kappa1, offset, .. } => (*kappa1, *offset),
            StepSchedule::Custom { .. } => return 1,
        };
        match c {
            // d/dt log(omega/xi) = k1/(1+t) - 1/(c+t) <= 0  iff  t >= (k1 c - 1)/(1 - k1)
            Some(c) => (((k1 * c - 1.0) / (1.0 - k1)).ceil().max(1.0)) as usize,
            None => 1,
        }
    }
}

/// `(xi_t, omega_t)` for iteration `t >= 1`.
pub fn step_sizes(t: usize, sched: &StepSchedule) -> (f64, f64) {
    assert!(t >= 1, "step sizes are defined for t >= 1");
    let tf = t as f64;
    match sched {
        StepSchedule::Standard => ((1.0 + tf).powf(-2.0 / 3.0), 20.0 / (20.0 + tf)),
        StepSchedule::PowerLaw {
            kappa1,
            kappa2,
            offset,
        } => {
            let xi = (1.0 + tf).powf(-kappa1);
            let omega = match offset {
                Some(c) => c / (c + tf),
                None => (1.0 + tf).powf(-kappa2),
            };
            (xi, omega)
        }
        StepSchedule::Custom { xi, omega } => {
            let i = (t - 1).min(xi.len() - 1);
            (xi[i], omega[i])
        }
    }
}

/// Quantity watched by the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StopMetric {
    /// Utility of the tracked SINR vector, with the barrier continued
    /// linearly below the clamp so it is finite from the first iteration.
    #[default]
    TrackedUtility,
    /// Raw surrogate value at the new iterate. It carries a factor `xi_t`,
    /// so its relative change is roughly `(2/3)/t` under the default schedule.
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BspdOptions {
    pub max_iters: usize,
    /// Relative change below which an iteration counts as settled.
    pub rel_tol: f64,
    /// Consecutive settled iterations required to stop.
    pub window: usize,
    pub seed: u64,
    /// Record every `trace_every`-th iteration (the last one is always kept).
    pub trace_every: usize,
    pub stop_metric: StopMetric,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for BspdOptions {
    fn default() -> Self {
        BspdOptions {
            max_iters: 5000,
            rel_tol: 1e-4,
            window: 50,
            seed: 0,
            trace_every: 1,
            stop_metric: StopMetric::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl BspdOptions {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_iters == 0 {
            problems.push("max_iters must be >= 1".to_string());
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            problems.push(format!("rel_tol = {} not in (0, 1)", self.rel_tol));
        }
        if self.window == 0 {
            problems.push("window must be >= 1".to_string());
        }
        if self.trace_every == 0 {
            problems.push("trace_every must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// One recorded iteration. These names are the JSON-lines field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub t: usize,
    pub xi: f64,
    pub omega: f64,
    /// Surrogate value at the new iterate.
    pub surrogate: f64,
    /// Utility of the tracked SINRs (barrier continued below the clamp).
    pub tracked_utility: f64,
    /// `||theta_t - theta_{t-1}||`.
    pub step_norm: f64,
    /// `||v||^2`.
    pub power: f64,
    /// Power constraint binding at the surrogate maximizer.
    pub active: bool,
    /// Seconds since the run started.
    pub wall_s: f64,
}

pub fn write_trace_jsonl(trace: &[IterationTrace], mut out: impl Write) -> std::io::Result<()> {
    for rec in trace {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace_jsonl(input: impl BufRead) -> std::io::Result<Vec<IterationTrace>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(std::io::Error::other))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BspdRun {
    pub theta: Transceiver,
    pub trace: Vec<IterationTrace>,
    pub state: RecursiveState,
    pub iterations: usize,
    /// The stopping rule fired before `max_iters`.
    pub converged: bool,
}

/// A failed run with everything recorded before the failure.
#[derive(Debug)]
pub struct BspdAbort {
    pub error: Error,
    pub trace: Vec<IterationTrace>,
}

impl std::fmt::Display for BspdAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} recorded iterations: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for BspdAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for BspdAbort {
    fn from(error: Error) -> Self {
        BspdAbort { error, trace: Vec::new() }
    }
}

/// Matched-filter start: `v` along the strongest direct-link mode at full
/// power, each receiver matched to its own link.
pub fn initial_transceiver(ch: &ChannelRealization, cfg: &SystemConfig) -> Transceiver {
    let mut v = principal_left_direction(&ch.h_d);
    v *= Complex64::from(cfg.p_max.sqrt());
    let fallback = || {
        let mut e = CVec::zeros(cfg.n);
        e[0] = Complex64::from(1.0);
        e
    };
    let u_s = normalized(&ch.h_d.ad_mul(&v)).unwrap_or_else(fallback);
    let u = ch
        .h_hat
        .iter()
        .map(|h| normalized(&h.ad_mul(&v)).unwrap_or_else(fallback))
        .collect();
    Transceiver { v, u_s, u }
}

/// Iterates until the stopping rule or `max_iters`.
pub fn run_bspd(
    cfg: &SystemConfig,
    ch: &ChannelRealization,
    sched: &StepSchedule,
    opts: &BspdOptions,
    theta0: Option<Transceiver>,
) -> std::result::Result<BspdRun, BspdAbort> {
    cfg.validate()?;
    ch.check(cfg)?;
    sched.validate()?;
    opts.validate()?;
    let mut theta = theta0.unwrap_or_else(|| initial_transceiver(ch, cfg));
    theta.check(cfg)?;
    if theta.power() > cfg.p_max + 1e-9 || !theta.is_finite() {
        return Err(Error::Domain(format!(
            "initial point infeasible: ||v||^2 = {} > P_max = {}",
            theta.power(),
            cfg.p_max
        ))
        .into());
    }

    let utility = BarrierUtility::from_config(cfg);
    let start = Instant::now();
    let mut state = RecursiveState::new(cfg);
    let mut trace = Vec::new();
    let mut last_metric: Option<f64> = None;
    let mut settled = 0;
    let mut converged = false;
    let mut t = 0;

    while t < opts.max_iters {
        t += 1;
        let (xi, omega) = step_sizes(t, sched);
        let batch = MiniBatch::draw(cfg, &mut stream(opts.seed, Purpose::Batch, t as u64, 0));
        let step = (|| -> Result<_> {
            state = update_recursive_state(&state, &theta, &batch, ch, cfg, xi, omega)?;
            let phi = compute_phi(&theta, &batch, ch, cfg)?;
            let inp = SurrogateInputs {
                theta_prev: &theta,
                state: &state,
                batch: &batch,
                phi: &phi,
                xi_t: xi,
                ch,
                cfg,
            };
            let best = solve_surrogate(&inp, &opts.solver)?;
            let active = best.power() >= cfg.p_max * (1.0 - 1e-8);
            let next = theta.lerp(&best, omega);
            Ok((inp.value(&next), active, next))
        })();
        let (surrogate, active, next) = match step {
            Ok(x) => x,
            Err(error) => return Err(BspdAbort { error, trace }),
        };
        assert!(
            next.power() <= cfg.p_max + 1e-9,
            "iterate left the power ball: {} > {}",
            next.power(),
            cfg.p_max
        );
        let step_norm = next.distance(&theta);
        theta = next;

        let tracked = utility.value_extended(&state.sinr);
        let metric = match opts.stop_metric {
            StopMetric::TrackedUtility => tracked,
            StopMetric::Surrogate => surrogate,
        };
        if let Some(prev) = last_metric {
            let rel = (metric - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            settled = if rel <= opts.rel_tol { settled + 1 } else { 0 };
        }
        last_metric = Some(metric);
        converged = settled >= opts.window;
        let last = converged || t == opts.max_iters;
        if t % opts.trace_every == 0 || last {
            trace.push(IterationTrace {
                t,
                xi,
                omega,
                surrogate,
                tracked_utility: tracked,
                step_norm,
                power: theta.power(),
                active,
                wall_s: start.elapsed().as_secs_f64(),
            });
        }
        if converged {
            break;
        }
    }
    log::debug!("bspd stopped after {t} iterations (converged: {converged})");
    Ok(BspdRun {
        theta,
        trace,
        state,
        iterations: t,
        converged,
    })
}

/// Exact gradient of the utility of the expected SINRs, by chain rule.
/// Outside the barrier domain the barrier is continued linearly below the
/// clamp, so the gradient is always defined.
pub fn exact_utility_gradient(
    theta: &Transceiver,
    ch: &ChannelRealization,
    cfg: &SystemConfig,
) -> Result<DVector<f64>> {
    let (gamma, jac) = expected_sinr_jacobian_exact(theta, ch, cfg)?;
    let nu = BarrierUtility::from_config(cfg).grad_clamped(&gamma);
    Ok(jac * nu)
}

/// `||P(theta + d grad) - theta|| / d` with `d = 1e-6` and `P` the radial
/// projection of the transmit block onto the power ball. Zero exactly at
/// first-order stationary points.
pub fn stationarity_residual(theta: &Transceiver, ch: &ChannelRealization, cfg: &SystemConfig) -> Result<f64> {
    const DELTA: f64 = 1e-6;
    let grad = exact_utility_gradient(theta, ch, cfg)?;
    let p = pack(theta);
    let mut moved = &p + &grad * DELTA;
    let layout = Layout::of(cfg);
    let mut v = moved.rows_mut(layout.v(), 2 * cfg.m);
    let norm2 = v.norm_squared();
    if norm2 > cfg.p_max {
        v.scale_mut((cfg.p_max / norm2).sqrt());
    }
    Ok((moved - p).norm() / DELTA)
}
