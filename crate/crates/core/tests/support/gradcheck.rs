//! Central finite-difference check of the hand-written backpropagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safevolt_core::nn::{Activation, Mlp};

use super::rel_err;

const H: f64 = 1e-6;

fn random_net(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=8));
    }
    let hidden = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let output = match rng.random_range(0..3) {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        _ => Activation::Relu,
    };
    let mut net = Mlp::new(&sizes, hidden, output, rng).unwrap();
    // Larger output weights than the default init so that the check sees
    // non-trivial curvature in the head.
    for l in net.layers_mut() {
        for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *w += rng.random_range(-0.5..0.5);
        }
    }
    net
}

fn objective(net: &Mlp, x: &[f64], up: &[f64]) -> f64 {
    net.predict(x).unwrap().iter().zip(up).map(|(y, u)| y * u).sum()
}

/// ReLU kinks make central differences meaningless within `H` of zero.
fn near_kink(net: &Mlp, x: &[f64]) -> bool {
    let mut a = x.to_vec();
    for l in net.layers() {
        let mut z = l.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            for (i, ai) in a.iter().enumerate() {
                *zo += l.weights[o * l.in_dim + i] * ai;
            }
        }
        if l.activation == Activation::Relu && z.iter().any(|v| v.abs() < 1e-4) {
            return true;
        }
        a = z
            .iter()
            .map(|&v| match l.activation {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
                Activation::Identity => v,
            })
            .collect();
    }
    false
}

/// Checks `draws` random (architecture, input, upstream) triples; panics on
/// the first mismatch. Draws that sit on a ReLU kink are skipped.
pub fn check_many(seed: u64, draws: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < draws {
        if check_draw(&mut rng) {
            checked += 1;
        }
    }
}

/// Writes parameter `j` of layer `li` (weights first, then biases) and
/// returns the previous value.
fn set_param(net: &mut Mlp, li: usize, j: usize, value: f64) -> f64 {
    let l = &mut net.layers_mut()[li];
    let nw = l.weights.len();
    let slot = if j < nw { &mut l.weights[j] } else { &mut l.bias[j - nw] };
    std::mem::replace(slot, value)
}

pub fn check_draw(rng: &mut ChaCha8Rng) -> bool {
    let mut net = random_net(rng);
    let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    let up: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    if near_kink(&net, &x) {
        return false;
    }
    let (_, tape) = net.forward(&x).unwrap();
    let (grads, dx) = net.backward(&tape, &up).unwrap();
    assert_eq!(dx, net.input_gradient(&tape, &up).unwrap());

    let analytic: Vec<f64> = grads.iter().collect();
    let mut k = 0;
    for li in 0..net.layers().len() {
        let nw = net.layers()[li].weights.len();
        let nb = net.layers()[li].bias.len();
        for j in 0..nw + nb {
            let orig = set_param(&mut net, li, j, 0.0);
            set_param(&mut net, li, j, orig + H);
            let plus = objective(&net, &x, &up);
            set_param(&mut net, li, j, orig - H);
            let minus = objective(&net, &x, &up);
            set_param(&mut net, li, j, orig);
            let fd = (plus - minus) / (2.0 * H);
            assert!(
                rel_err(analytic[k], fd, 1e-6) < 1e-4 || (analytic[k] - fd).abs() < 1e-6,
                "param {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
            k += 1;
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += H;
        let mut xm = x.clone();
        xm[i] -= H;
        let fd = (objective(&net, &xp, &up) - objective(&net, &xm, &up)) / (2.0 * H);
        assert!(
            rel_err(dx[i], fd, 1e-6) < 1e-4 || (dx[i] - fd).abs() < 1e-6,
            "input {i}: analytic {} vs fd {fd}",
            dx[i]
        );
    }
    true
}

