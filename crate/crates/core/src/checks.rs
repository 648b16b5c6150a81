//! Self-checks run by `bspd validate`.
//!
//! Each check exercises one property of the library on small seeded
//! instances and reports pass/fail with a one-line detail.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::baselines::{baseline1, baseline2, baseline3};
use crate::bspd::{run_bspd, stationarity_residual, step_sizes, BspdOptions, StepSchedule};
use crate::channel::{generate_channel, sample_states, MiniBatch, RandomSample};
use crate::config::SystemConfig;
use crate::error::Result;
use crate::fixtures::{random_transceiver, small_config, unit_channel};
use crate::harness::{read_records, run_experiment, write_records, ExperimentSpec, Format, Scheme};
use crate::params::{pack, unpack};
use crate::rng::{stream, Purpose};
use crate::settings::Settings;
use crate::sinr::{expected_sinr_exact, expected_sinr_monte_carlo, sinr_grad_instant, sinr_instant};
use crate::solvers::{oracle_solve_surrogate, solve_surrogate, solve_v, SolverOptions, SurrogateInputs};
use crate::surrogate::{compute_phi, gamma_bar_k, gamma_bar_s, update_recursive_state, RecursiveState};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn instance(seed: u64, m: usize, n: usize, k: usize, j: usize) -> (SystemConfig, crate::channel::ChannelRealization) {
    let mut cfg = small_config(m, n, k);
    cfg.batch = j;
    let ch = unit_channel(&cfg, seed, 0.6);
    (cfg, ch)
}

fn transform_tightness() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let (cfg, ch) = instance(seed, 1 + seed as usize % 6, 1 + seed as usize % 4, 1 + seed as usize % 3, 5);
        let theta = random_transceiver(&cfg, seed);
        let batch = sample_states(&cfg, seed);
        let phi = compute_phi(&theta, &batch, &ch, &cfg)?;
        for (j, sample) in batch.samples.iter().enumerate() {
            let exact = sinr_instant(&theta, sample, &ch, &cfg)?;
            let s = gamma_bar_s(&theta, &sample.b, phi.phi_s[j], &ch, &cfg);
            worst = worst.max((s - exact.gamma_s).abs() / exact.gamma_s.abs().max(1e-300));
            for k in 0..cfg.k {
                let g = gamma_bar_k(&theta, sample.s_norm2(), phi.phi_k[j][k], &ch, &cfg, k);
                worst = worst.max((g - exact.gamma[k]).abs() / exact.gamma[k].abs().max(1e-300));
            }
        }
    }
    Ok((worst <= 1e-12, format!("max relative gap {worst:.2e}")))
}

fn gradient_differences() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (cfg, ch) = instance(100 + seed, 2 + seed as usize % 4, 1 + seed as usize % 3, 1 + seed as usize % 3, 1);
        let theta = random_transceiver(&cfg, seed);
        let sample = RandomSample::draw(&cfg, &mut stream(seed, Purpose::Oracle, 9, 0));
        let jac = sinr_grad_instant(&theta, &sample, &ch, &cfg)?;
        let p0 = pack(&theta);
        let f = |p: &DVector<f64>| sinr_instant(&unpack(p, &cfg).unwrap(), &sample, &ch, &cfg).unwrap().to_vector();
        for i in 0..p0.len() {
            let h = 1e-6 * (1.0 + p0[i].abs());
            let mut a = p0.clone();
            let mut b = p0.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            for c in 0..fd.len() {
                let scale = jac.column(c).amax().max(1e-12);
                worst = worst.max((fd[c] - jac[(i, c)]).abs() / scale);
            }
        }
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:.2e}")))
}

fn solver_oracle() -> Result<(bool, String)> {
    let opts = SolverOptions::default();
    let (mut obj_gap, mut arg_gap, mut slack) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..4 {
        let (cfg, ch) = instance(200 + seed, 4, 2, 2, 2);
        let prev = random_transceiver(&cfg, seed);
        let batch = sample_states(&cfg, seed);
        let phi = compute_phi(&prev, &batch, &ch, &cfg)?;
        let mut state = RecursiveState::new(&cfg);
        let mut rng = stream(seed, Purpose::Oracle, 5, 0);
        state.gradient = DVector::from_fn(cfg.param_dim(), |_, _| rng.random::<f64>() - 0.5);
        let inp = SurrogateInputs { theta_prev: &prev, state: &state, batch: &batch, phi: &phi, xi_t: 0.5, ch: &ch, cfg: &cfg };
        let ours = solve_surrogate(&inp, &opts)?;
        let oracle = oracle_solve_surrogate(&inp, &opts)?;
        obj_gap = obj_gap.max((inp.value(&ours) - inp.value(&oracle)).abs());
        arg_gap = arg_gap.max(ours.distance(&oracle));
        let tx = solve_v(&inp, &opts)?;
        slack = slack.max(tx.mu * (cfg.p_max - tx.v.norm_squared()).abs());
    }
    let ok = obj_gap <= 1e-6 && arg_gap <= 1e-4 && slack <= 1e-6;
    Ok((ok, format!("objective gap {obj_gap:.2e}, argument gap {arg_gap:.2e}, slackness {slack:.2e}")))
}

fn exact_vs_monte_carlo() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let (cfg, ch) = instance(300 + seed, 3, 2, 3, 1);
        let theta = random_transceiver(&cfg, seed);
        let exact = expected_sinr_exact(&theta, &ch, &cfg)?.to_vector();
        let mc = expected_sinr_monte_carlo(&theta, &ch, &cfg, 20_000, seed)?;
        let (m, s) = (mc.mean.to_vector(), mc.stderr.to_vector());
        for i in 0..m.len() {
            worst = worst.max((m[i] - exact[i]).abs() / s[i].max(1e-300));
        }
    }
    Ok((worst <= 5.0, format!("largest deviation {worst:.2} standard errors")))
}

fn frozen_tracking() -> Result<(bool, String)> {
    let (mut cfg, ch) = instance(400, 4, 2, 2, 10);
    cfg.batch = 10;
    let theta = random_transceiver(&cfg, 400);
    let exact = expected_sinr_exact(&theta, &ch, &cfg)?.to_vector();
    let mut state = RecursiveState::new(&cfg);
    for t in 1..=2000 {
        let (xi, omega) = step_sizes(t, &StepSchedule::Standard);
        let batch = MiniBatch::draw(&cfg, &mut stream(400, Purpose::Batch, t as u64, 0));
        state = update_recursive_state(&state, &theta, &batch, &ch, &cfg, xi, omega)?;
    }
    let tracked = state.sinr.to_vector();
    let worst = (0..exact.len()).map(|i| (tracked[i] - exact[i]).abs() / exact[i]).fold(0.0, f64::max);
    Ok((worst < 0.02, format!("largest relative tracking error {worst:.2e} after 2000 iterations")))
}

fn reduced(settings: &Settings) -> ExperimentSpec {
    let mut spec = settings.experiment.clone();
    spec.cfg.m = spec.cfg.m.min(8);
    spec.cfg.n = spec.cfg.n.min(4);
    spec.sweep = None;
    spec.n_realizations = 2;
    spec.ber_slots = spec.ber_slots.min(2000);
    spec.bspd = BspdOptions { max_iters: spec.bspd.max_iters.min(300), ..spec.bspd };
    spec.schemes = Scheme::ALL.to_vec();
    spec
}

fn configured_run(settings: &Settings) -> Result<(bool, String)> {
    let spec = reduced(settings);
    let cfg = &spec.cfg;
    let ch = generate_channel(cfg, &crate::harness::realization_topology(&spec, 0), spec.seed)?;
    let run = run_bspd(cfg, &ch, &spec.schedule, &spec.bspd, None).map_err(|a| a.error)?;
    let r0 = stationarity_residual(&crate::bspd::initial_transceiver(&ch, cfg), &ch, cfg)?;
    let r1 = stationarity_residual(&run.theta, &ch, cfg)?;
    let max_power = run.trace.iter().map(|t| t.power).fold(0.0, f64::max);
    let baselines = [baseline1(&ch, cfg), baseline2(&ch, cfg), baseline3(&ch, cfg)];
    let feasible = max_power <= cfg.p_max + 1e-9 && baselines.iter().all(|b| b.power() <= cfg.p_max + 1e-9);
    Ok((
        feasible && r1 < r0,
        format!(
            "M={} N={} K={}: {} iterations, residual {r0:.3e} -> {r1:.3e}, max ||v||^2/P_max {:.6}",
            cfg.m,
            cfg.n,
            cfg.k,
            run.iterations,
            max_power / cfg.p_max
        ),
    ))
}

fn experiment_round_trip(settings: &Settings) -> Result<(bool, String)> {
    let spec = reduced(settings);
    let spec = ExperimentSpec { bspd: BspdOptions { max_iters: 20, ..spec.bspd }, ..spec };
    let out = run_experiment(&spec)?;
    let dir = std::env::temp_dir().join(format!("bspd-validate-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
    let mut ok = out.failures.is_empty();
    for fmt in [Format::Csv, Format::Json] {
        let p = dir.join(format!("records.{}", if fmt == Format::Csv { "csv" } else { "json" }));
        write_records(&out.records, &p, fmt)?;
        ok &= read_records(&p, fmt)? == out.records;
    }
    let _ = std::fs::remove_dir_all(&dir);
    let bounded = out
        .records
        .iter()
        .all(|r| r.gamma_s >= 0.0 && r.gamma_tags.iter().all(|&g| g >= 0.0) && (0.0..=0.5).contains(&r.worst_ber));
    Ok((ok && bounded, format!("{} records, {} failures", out.records.len(), out.failures.len())))
}

/// Runs every check. The last two use `settings` at reduced antenna counts.
pub fn run_all(settings: &Settings) -> Vec<CheckResult> {
    vec![
        check("quadratic transform is tight at the previous iterate", transform_tightness),
        check("instantaneous SINR gradients match central differences", gradient_differences),
        check("surrogate maximizer matches projected-gradient oracle", solver_oracle),
        check("exact expectations agree with Monte Carlo", exact_vs_monte_carlo),
        check("tracked SINRs converge with the iterate frozen", frozen_tracking),
        check("configured run is feasible and lowers the residual", || configured_run(settings)),
        check("experiment records are bounded and round-trip", || experiment_round_trip(settings)),
    ]
}
