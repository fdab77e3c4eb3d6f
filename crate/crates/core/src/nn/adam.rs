use super::mlp::{Gradients, Mlp};
use super::NnError;

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` along `-grads`.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        let n = params.param_count();
        if grads.iter().count() != n || self.m.iter().count() != n {
            return Err(NnError::ShapeMismatch("optimizer state does not match network".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m_iter = self.m.layers.iter_mut().flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()));
        let v_iter = self.v.layers.iter_mut().flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()));
        for (((p, g), m), v) in params.param_slices_mut().zip(grads.iter()).zip(m_iter).zip(v_iter) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{Activation, Layer};

    fn scalar(w: f64) -> Mlp {
        Mlp::from_layers(vec![Layer {
            in_dim: 1,
            out_dim: 1,
            weights: vec![w],
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut net = scalar(0.7);
        let before = net.clone();
        let mut opt = Adam::new(&net);
        let g = Gradients::zeros_like(&net);
        for _ in 0..10 {
            opt.step(&mut net, &g, 1e-3).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn positive_gradient_descends() {
        let mut net = scalar(0.7);
        let mut opt = Adam::new(&net);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].0[0] = 2.5;
        let mut last = 0.7;
        for _ in 0..5 {
            opt.step(&mut net, &g, 1e-2).unwrap();
            let w = net.layers()[0].weights[0];
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut net = scalar(0.1);
            let mut opt = Adam::new(&net);
            let mut g = Gradients::zeros_like(&net);
            let mut out = Vec::new();
            for k in 0..20 {
                g.layers[0].0[0] = (k as f64).sin();
                g.layers[0].1[0] = (k as f64).cos();
                opt.step(&mut net, &g, 1e-2).unwrap();
                out.push(net.clone());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_state_errors() {
        let mut big = Mlp::from_layers(vec![Layer::zeros(2, 2, Activation::Identity)]).unwrap();
        let small = scalar(0.0);
        let mut opt = Adam::new(&small);
        let g = Gradients::zeros_like(&big);
        assert!(opt.step(&mut big, &g, 1e-3).is_err());
    }
}
