mod support;

use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safevolt_core::nn::{soft_update, Activation, Adam, Checkpoint, Gradients, Mlp};

#[test]
fn backprop_matches_central_differences() {
    let started = Instant::now();
    support::gradcheck::check_many(2024, 60);
    assert!(started.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn accumulation_sums_per_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[3, 5, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
    let xs = [[0.1, -0.3, 0.5], [1.0, 0.2, -0.7]];
    let up = [0.4, -1.1];
    let mut acc = Gradients::zeros_like(&net);
    let mut separate = Vec::new();
    for x in &xs {
        let (_, tape) = net.forward(x).unwrap();
        net.backward_accumulate(&tape, &up, &mut acc).unwrap();
        separate.push(net.backward(&tape, &up).unwrap().0);
    }
    let summed: Vec<f64> = separate[0].iter().zip(separate[1].iter()).map(|(a, b)| a + b).collect();
    for (a, b) in acc.iter().zip(summed) {
        assert!((a - b).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The target moves toward the online network by exactly a factor
    /// `(1 - tau)` of the remaining distance.
    #[test]
    fn soft_update_contracts(seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = Mlp::new(&[3, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let target = Mlp::new(&[3, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let next = soft_update(&target, &online, tau).unwrap();
        let dist = |a: &Mlp, b: &Mlp| a.params().zip(b.params()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let before = dist(&target, &online);
        let after = dist(&next, &online);
        prop_assert!((after - (1.0 - tau) * before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&[4, 7, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let ck = Checkpoint { nets: vec![("n".into(), net.clone())], scalars: vec![("alpha".into(), rng.random())] };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.get("n").unwrap(), &net);
        prop_assert_eq!(back.scalar("alpha").unwrap().to_bits(), ck.scalars[0].1.to_bits());
    }
}

#[test]
fn adam_fits_a_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Mlp::new(&[2, 1], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let mut opt = Adam::new(&net);
    let data: Vec<([f64; 2], f64)> = (0..32)
        .map(|_| {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            (x, 2.0 * x[0] - x[1] + 0.5)
        })
        .collect();
    for _ in 0..3000 {
        let mut g = Gradients::zeros_like(&net);
        for (x, y) in &data {
            let (out, tape) = net.forward(x).unwrap();
            net.backward_accumulate(&tape, &[2.0 * (out[0] - y) / data.len() as f64], &mut g).unwrap();
        }
        opt.step(&mut net, &g, 1e-2).unwrap();
    }
    let l = &net.layers()[0];
    assert!((l.weights[0] - 2.0).abs() < 1e-3 && (l.weights[1] + 1.0).abs() < 1e-3 && (l.bias[0] - 0.5).abs() < 1e-3);
}
