//! Dense feed-forward networks with hand-rolled reverse-mode gradients.
//!
//! Everything is 64-bit floats so analytic gradients can be checked against
//! central finite differences to tight tolerances. Hidden layers use tanh,
//! the output layer is linear. Parameters flatten in a fixed canonical order
//! (per layer: weights row-major, then biases) shared by the optimizer and
//! the checkpoint format.

use rand::Rng;

/// One dense layer: y = W x + b with W stored row-major (n_out × n_in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn new(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        // Uniform ±1/√n_in for weights and biases (torch Linear default).
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { n_in, n_out, w, b }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.n_in);
        out.clear();
        for i in 0..self.n_out {
            let row = &self.w[i * self.n_in..(i + 1) * self.n_in];
            let mut acc = self.b[i];
            for (wij, xj) in row.iter().zip(x) {
                acc += wij * xj;
            }
            out.push(acc);
        }
    }
}

/// Gradient of one layer, same shapes as [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// Gradient of a whole network, layer by layer.
pub type Grads = Vec<LayerGrads>;

/// Multi-layer perceptron; tanh on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Intermediate activations saved by [`Mlp::forward_cached`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (inputs[0] is the network input).
    inputs: Vec<Vec<f64>>,
    /// Post-tanh output of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

impl Mlp {
    /// Build a network with the given widths (input, hidden..., output).
    /// Draws parameters layer by layer, weights before biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        assert!(sizes.iter().all(|&s| s > 0), "zero-width layer");
        let layers = sizes
            .windows(2)
            .map(|w| Layer::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    /// Layer widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass that records activations for a later [`backward`](Self::backward).
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            layer.apply(&cur, &mut next);
            if i < last {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
                hidden.push(next.clone());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (cur, ForwardCache { inputs, hidden })
    }

    /// Reverse-mode pass: given dL/d(output), return parameter gradients and
    /// dL/d(input). `cache` must come from `forward_cached` on this network.
    pub fn backward(&self, cache: &ForwardCache, dl_dout: &[f64]) -> (Grads, Vec<f64>) {
        let last = self.layers.len() - 1;
        let mut grads: Grads = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                dw: vec![0.0; l.w.len()],
                db: vec![0.0; l.b.len()],
            })
            .collect();
        let mut delta = dl_dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                // Through tanh: d/dz tanh(z) = 1 - tanh²(z).
                let h = &cache.hidden[i];
                for (d, hv) in delta.iter_mut().zip(h) {
                    *d *= 1.0 - hv * hv;
                }
            }
            let x = &cache.inputs[i];
            let g = &mut grads[i];
            for r in 0..layer.n_out {
                let d = delta[r];
                g.db[r] = d;
                let row = &mut g.dw[r * layer.n_in..(r + 1) * layer.n_in];
                for (gw, xv) in row.iter_mut().zip(x) {
                    *gw = d * xv;
                }
            }
            let mut prev = vec![0.0; layer.n_in];
            for r in 0..layer.n_out {
                let d = delta[r];
                let row = &layer.w[r * layer.n_in..(r + 1) * layer.n_in];
                for (p, wv) in prev.iter_mut().zip(row) {
                    *p += d * wv;
                }
            }
            delta = prev;
        }
        (grads, delta)
    }

    pub fn zero_grads(&self) -> Grads {
        self.layers
            .iter()
            .map(|l| LayerGrads {
                dw: vec![0.0; l.w.len()],
                db: vec![0.0; l.b.len()],
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in canonical flat order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Overwrite parameters from canonical flat order.
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter count mismatch");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|v| v.is_finite()))
    }
}

/// Accumulate `other` into `acc` (same shapes).
pub fn add_grads(acc: &mut Grads, other: &Grads) {
    for (a, o) in acc.iter_mut().zip(other) {
        for (x, y) in a.dw.iter_mut().zip(&o.dw) {
            *x += y;
        }
        for (x, y) in a.db.iter_mut().zip(&o.db) {
            *x += y;
        }
    }
}

/// Scale every gradient entry in place.
pub fn scale_grads(g: &mut Grads, factor: f64) {
    for l in g {
        for v in l.dw.iter_mut().chain(l.db.iter_mut()) {
            *v *= factor;
        }
    }
}

/// Adam optimizer state for one network (flat-order moments).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam step on `mlp` along `grads` with step size `lr`.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut at = 0;
        for (layer, g) in mlp.layers.iter_mut().zip(grads) {
            for (p, gv) in layer
                .w
                .iter_mut()
                .chain(layer.b.iter_mut())
                .zip(g.dw.iter().chain(g.db.iter()))
            {
                let m = &mut self.m[at];
                let v = &mut self.v[at];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
                at += 1;
            }
        }
        debug_assert_eq!(at, self.m.len());
    }
}
