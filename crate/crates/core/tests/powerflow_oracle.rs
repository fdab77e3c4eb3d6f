mod support;

use std::time::Instant;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safevolt_core::grid::NetworkModel;
use safevolt_core::powerflow::{line_loss, residuals, solve, solve_warm, InjectionProfile, PowerFlowSolution, SolverOptions};

use support::{gauss_seidel, net2, net6, random_network};

fn random_profile<R: Rng>(net: &NetworkModel, scale: f64, rng: &mut R) -> InjectionProfile {
    let n = net.n_bus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 1..n {
        p[i] = rng.random_range(-scale..scale);
        q[i] = rng.random_range(-scale..scale);
    }
    InjectionProfile::new(p, q).unwrap()
}

/// Largest violation of Ohm's law, nodal current balance and nodal power
/// balance, each recomputed from the returned phasors.
fn physics_residual(net: &NetworkModel, inj: &InjectionProfile, sol: &PowerFlowSolution) -> f64 {
    let n = net.n_bus();
    let v: Vec<Complex64> = (0..n).map(|i| sol.phasor(i)).collect();
    let mut worst: f64 = 0.0;
    let mut leaving = vec![Complex64::new(0.0, 0.0); n];
    for (k, b) in net.branches().iter().enumerate() {
        let ohm = (v[b.from] - v[b.to]) / Complex64::new(b.r, b.x);
        worst = worst.max((ohm - sol.i_branch[k]).norm());
        leaving[b.from] += sol.i_branch[k];
        leaving[b.to] -= sol.i_branch[k];
    }
    for i in 1..n {
        let s = Complex64::new(inj.p()[i], inj.q()[i]);
        worst = worst.max((leaving[i] - (s / v[i]).conj()).norm());
        worst = worst.max((v[i] * leaving[i].conj() - s).norm());
    }
    // Slack supplies the net demand plus the losses.
    let total: f64 = (0..n).map(|i| (v[i] * leaving[i].conj()).re).sum();
    worst.max((total - sol.p_loss).abs())
}

fn assert_matches_oracle(net: &NetworkModel, inj: &InjectionProfile) {
    let sol = solve(net, inj, &SolverOptions::default()).unwrap();
    let oracle = gauss_seidel(net, inj.p(), inj.q(), 1e-12, 200_000).expect("oracle converges");
    for i in 0..net.n_bus() {
        assert!((sol.v[i] - oracle[i].norm()).abs() < 1e-8, "bus {i}: {} vs {}", sol.v[i], oracle[i].norm());
        assert!((sol.theta[i] - oracle[i].arg()).abs() < 1e-8, "bus {i} angle");
    }
}

#[test]
fn newton_matches_gauss_seidel_on_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for net in [net2(), net6()] {
        for _ in 0..20 {
            let inj = random_profile(&net, 0.3, &mut rng);
            assert_matches_oracle(&net, &inj);
        }
    }
}

#[test]
fn physics_residuals_on_random_profiles() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = net6();
    for _ in 0..100 {
        let inj = random_profile(&net, 0.3, &mut rng);
        let sol = solve(&net, &inj, &SolverOptions::default()).unwrap();
        assert!(physics_residual(&net, &inj, &sol) <= 1e-6);
    }
    assert!(started.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn zero_injection_is_exactly_flat() {
    for net in [net2(), net6()] {
        let sol = solve(&net, &InjectionProfile::zeros(net.n_bus()), &SolverOptions::default()).unwrap();
        assert!(sol.v.iter().all(|&v| v == net.v0()));
        assert!(sol.theta.iter().all(|&t| t == 0.0));
        assert_eq!(sol.p_loss, 0.0);
        assert_eq!(line_loss(&net, &sol), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_networks_satisfy_balance(n in 2usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(n, &mut rng);
        let inj = random_profile(&net, 0.1, &mut rng);
        let sol = solve(&net, &inj, &SolverOptions::default()).unwrap();
        prop_assert!(physics_residual(&net, &inj, &sol) <= 1e-6);
        let res = residuals(&net, &inj, &sol.v, &sol.theta).unwrap();
        prop_assert!(res.values().all(|(dp, dq)| dp.abs() <= 1e-8 && dq.abs() <= 1e-8));
        let oracle = gauss_seidel(&net, inj.p(), inj.q(), 1e-12, 200_000).unwrap();
        for i in 0..n {
            prop_assert!((sol.v[i] - oracle[i].norm()).abs() < 1e-8);
        }
    }

    #[test]
    fn warm_start_agrees_with_flat_start(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = net6();
        let first = random_profile(&net, 0.3, &mut rng);
        let second = random_profile(&net, 0.3, &mut rng);
        let opts = SolverOptions::default();
        let prev = solve(&net, &first, &opts).unwrap();
        let flat = solve(&net, &second, &opts).unwrap();
        let warm = solve_warm(&net, &second, &opts, &prev).unwrap();
        for i in 0..net.n_bus() {
            prop_assert!((flat.v[i] - warm.v[i]).abs() < 1e-8);
            prop_assert!((flat.theta[i] - warm.theta[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn solving_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = net6();
        let inj = random_profile(&net, 0.3, &mut rng);
        let a = solve(&net, &inj, &SolverOptions::default()).unwrap();
        let b = solve(&net, &inj, &SolverOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}
