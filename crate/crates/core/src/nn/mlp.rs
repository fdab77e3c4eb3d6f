use rand::Rng;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense layer, weights row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim.max(1))
            .zip(&self.bias)
            .map(|(row, b)| {
                let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
                self.activation.apply(z)
            })
            .collect()
    }
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Mlp::forward`]: the input to every layer and
/// the final output.
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Per-parameter partial derivatives, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    fn congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|((w, b), l)| w.len() == l.weights.len() && b.len() == l.bias.len())
    }
}

impl Mlp {
    /// Builds a network from explicit layers, checking dimension chaining.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::ShapeMismatch("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(NnError::ShapeMismatch(format!("layer {k} storage does not match its dims")));
            }
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(NnError::ShapeMismatch(format!(
                    "layer output {} feeds input {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Randomly initialised network. `sizes` lists every width including
    /// input and output. Hidden layers use He-uniform weights; the output
    /// layer starts within `±3e-3` so initial outputs are near zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::ShapeMismatch(format!("invalid layer sizes {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { output } else { hidden };
                let bound = if k == last { 3e-3 } else { (6.0 / w[0] as f64).sqrt() };
                let mut layer = Layer::zeros(w[0], w[1], act);
                for x in &mut layer.weights {
                    *x = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output only, without recording activations.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.forward(&h);
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for l in &self.layers {
            let next = l.forward(values.last().expect("non-empty"));
            values.push(next);
        }
        let out = values.last().expect("non-empty").clone();
        Ok((out, Tape { values }))
    }

    /// Gradients of `upstream · output` w.r.t. parameters and input.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_accumulate(tape, upstream, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but adds into an existing gradient buffer.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        if !grads.congruent(self) {
            return Err(NnError::ShapeMismatch("gradient buffer shape".into()));
        }
        self.backprop(tape, upstream, Some(grads))
    }

    /// Gradient of `upstream · output` w.r.t. the input only.
    pub fn input_gradient(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        self.backprop(tape, upstream, None)
    }

    fn backprop(
        &self,
        tape: &Tape,
        upstream: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>, NnError> {
        if tape.values.len() != self.layers.len() + 1
            || tape.values.iter().zip(self.layers.iter()).any(|(v, l)| v.len() != l.in_dim)
        {
            return Err(NnError::ShapeMismatch("tape does not belong to this network".into()));
        }
        if upstream.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch(format!(
                "upstream has {} values, network outputs {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut delta = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.values[k];
            let output = &tape.values[k + 1];
            for (d, &y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(y);
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
                if let Some(g) = grads.as_deref_mut() {
                    let (gw, gb) = &mut g.layers[k];
                    gb[o] += d;
                    let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gi, xi) in grow.iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// In place `self = (1 - tau) * self + tau * online`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<(), NnError> {
        if !self.same_shape(online) {
            return Err(NnError::ShapeMismatch("soft update between different shapes".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (a, b) in t.weights.iter_mut().zip(&o.weights).chain(t.bias.iter_mut().zip(&o.bias)) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.activation == b.activation
            })
    }

    /// Plain gradient descent step, mainly for tests.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        if !grads.congruent(self) {
            return Err(NnError::ShapeMismatch("gradient buffer shape".into()));
        }
        for (l, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, g) in l.weights.iter_mut().zip(gw).chain(l.bias.iter_mut().zip(gb)) {
                *p -= lr * g;
            }
        }
        Ok(())
    }

    pub(crate) fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

/// Returns `(1 - tau) * target + tau * online`.
pub fn soft_update(target: &Mlp, online: &Mlp, tau: f64) -> Result<Mlp, NnError> {
    let mut out = target.clone();
    out.soft_update_from(online, tau)?;
    Ok(out)
}
