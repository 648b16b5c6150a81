use bspd::baselines::{baseline1, baseline2, baseline3};
use bspd::bspd::{run_bspd, BspdOptions, StepSchedule};
use bspd::channel::{generate_channel, sample_states};
use bspd::fixtures::{default_topology, random_transceiver, small_config, unit_channel};
use bspd::harness::worst_tag_ber;
use bspd::rng::{stream, Purpose};
use bspd::sinr::{expected_sinr_exact, utility, BarrierUtility, SinrVector, Utility};
use bspd::solvers::{solve_surrogate, SolverOptions, SurrogateInputs};
use bspd::surrogate::{compute_phi, RecursiveState};
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn receiver_scaling_leaves_sinr_unchanged(
        seed in 0u64..1000,
        m in 1usize..6, n in 1usize..4, k in 1usize..4,
        re in -3.0f64..3.0, im in -3.0f64..3.0,
    ) {
        prop_assume!(re.hypot(im) > 1e-2);
        let cfg = small_config(m, n, k);
        let ch = unit_channel(&cfg, seed, 0.5);
        let theta = random_transceiver(&cfg, seed);
        let c = Complex64::new(re, im);
        let mut scaled = theta.clone();
        scaled.u_s *= c;
        for u in &mut scaled.u {
            *u *= c;
        }
        let a = expected_sinr_exact(&theta, &ch, &cfg).unwrap().to_vector();
        let b = expected_sinr_exact(&scaled, &ch, &cfg).unwrap().to_vector();
        for i in 0..a.len() {
            prop_assert!((a[i] - b[i]).abs() <= 1e-10 * a[i].abs().max(1e-300), "{} vs {}", a[i], b[i]);
            prop_assert!(a[i] >= 0.0);
        }
    }

    #[test]
    fn surrogate_maximizer_is_feasible(seed in 0u64..1000, m in 1usize..6, n in 1usize..4, k in 1usize..3, p in 0.05f64..50.0) {
        let mut cfg = small_config(m, n, k);
        cfg.p_max = p;
        cfg.batch = 3;
        let ch = unit_channel(&cfg, seed, 0.5);
        let prev = random_transceiver(&cfg, seed);
        let batch = sample_states(&cfg, seed);
        let phi = compute_phi(&prev, &batch, &ch, &cfg).unwrap();
        let mut state = RecursiveState::new(&cfg);
        let mut rng = stream(seed, Purpose::Oracle, 1, 0);
        state.gradient = DVector::from_fn(cfg.param_dim(), |_, _| rng.random::<f64>() - 0.5);
        let inp = SurrogateInputs { theta_prev: &prev, state: &state, batch: &batch, phi: &phi, xi_t: 0.5, ch: &ch, cfg: &cfg };
        let next = solve_surrogate(&inp, &SolverOptions::default()).unwrap();
        prop_assert!(next.is_finite());
        prop_assert!(next.power() <= cfg.p_max + 1e-9, "{} > {}", next.power(), cfg.p_max);
    }

    #[test]
    fn baselines_spend_exactly_the_budget(seed in 0u64..1000, m in 1usize..8, n in 1usize..5, k in 1usize..4, p in 1e-3f64..10.0) {
        let mut cfg = small_config(m, n, k);
        cfg.p_max = p;
        let ch = unit_channel(&cfg, seed, 0.5);
        for t in [baseline1(&ch, &cfg), baseline2(&ch, &cfg), baseline3(&ch, &cfg)] {
            prop_assert!((t.power() - p).abs() <= 1e-9 * p);
        }
    }

    #[test]
    fn utility_never_decreases_with_sinr(seed in 0u64..1000, k in 1usize..5, which in 0usize..5, bump in 0.0f64..10.0) {
        let cfg = small_config(2, 2, k);
        let mut rng = stream(seed, Purpose::Oracle, 2, 0);
        let base: Vec<f64> = (0..=k).map(|_| rng.random::<f64>() * 2.0 + 1e-3).collect();
        let mut up = base.clone();
        up[which % (k + 1)] += bump;
        let (base, up) = (SinrVector::from_slice(&base), SinrVector::from_slice(&up));
        if let (Ok(a), Ok(b)) = (utility(&base, &cfg), utility(&up, &cfg)) {
            prop_assert!(b >= a);
        }
        let f = BarrierUtility::from_config(&cfg);
        prop_assert!(f.value_extended(&up) >= f.value_extended(&base));
    }

    #[test]
    fn ber_is_a_probability(seed in 0u64..1000, k in 1usize..4) {
        let cfg = small_config(3, 2, k);
        let ch = unit_channel(&cfg, seed, 0.5);
        let theta = random_transceiver(&cfg, seed);
        let est = worst_tag_ber(&theta, &ch, &cfg, 500, seed).unwrap();
        prop_assert!((0.0..=0.5).contains(&est.worst));
        prop_assert!(est.per_tag.iter().all(|b| (0.0..=1.0).contains(b)));
        let raw = est.per_tag.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(est.worst, raw.min(0.5));
        prop_assert!(est.halfwidth >= 0.0);
    }
}

#[test]
fn channels_depend_only_on_the_seed() {
    let cfg = small_config(4, 3, 2);
    let topo = default_topology(2);
    let a = generate_channel(&cfg, &topo, 11).unwrap();
    let b = generate_channel(&cfg, &topo, 11).unwrap();
    let c = generate_channel(&cfg, &topo, 12).unwrap();
    assert_eq!(a.h_d, b.h_d);
    assert_eq!(a.h_hat, b.h_hat);
    assert_ne!(a.h_d, c.h_d);
}

#[test]
fn every_iterate_is_feasible() {
    for seed in 0..4 {
        let mut cfg = small_config(4, 2, 2);
        cfg.batch = 4;
        let ch = unit_channel(&cfg, seed, 0.5);
        let opts = BspdOptions { max_iters: 60, trace_every: 1, seed, ..BspdOptions::default() };
        let run = run_bspd(&cfg, &ch, &StepSchedule::Standard, &opts, None).unwrap();
        assert_eq!(run.trace.len(), run.iterations);
        assert!(run.trace.iter().all(|t| t.power <= cfg.p_max + 1e-9));
    }
}
