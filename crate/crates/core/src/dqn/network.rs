//! Dueling feed-forward Q approximator with hand-written backpropagation.
//!
//! All parameters live in one flat vector so that optimiser state, target
//! synchronisation, checkpoints and gradient checks share a single layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::StateVector;
use crate::error::{Error, Result};

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Shape of a [`QNetwork`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_actions: usize,
}

impl Architecture {
    /// Total parameter count, or `None` on overflow.
    pub fn param_count(&self) -> Option<usize> {
        let dense = |i: usize, o: usize| i.checked_mul(o)?.checked_add(o);
        let mut total = 0usize;
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            total = total.checked_add(dense(prev, h)?)?;
            prev = h;
        }
        total = total.checked_add(dense(prev, 1)?)?;
        total.checked_add(dense(prev, self.num_actions)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.num_actions == 0
            || self.hidden.is_empty()
            || self.hidden.contains(&0)
        {
            return Err(Error::Config(format!(
                "invalid approximator shape {self:?}"
            )));
        }
        Ok(())
    }
}

/// `input → hidden… (ReLU) → {value (1), advantage (k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Architecture,
    hidden_layers: Vec<Dense>,
    value_head: Dense,
    advantage_head: Dense,
    params: Vec<f64>,
}

/// Activations retained from a training forward pass.
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[i]` the output of hidden layer `i`.
    acts: Vec<Vec<f64>>,
    advantages: Vec<f64>,
    masks: Vec<bool>,
}

fn layout(arch: &Architecture) -> (Vec<Dense>, Dense, Dense, usize) {
    let mut offset = 0;
    let mut make = |inputs: usize, outputs: usize| {
        let d = Dense {
            inputs,
            outputs,
            weights: offset,
            bias: offset + inputs * outputs,
        };
        offset += d.len();
        d
    };
    let mut prev = arch.input_dim;
    let mut hidden = Vec::with_capacity(arch.hidden.len());
    for &h in &arch.hidden {
        hidden.push(make(prev, h));
        prev = h;
    }
    let value = make(prev, 1);
    let adv = make(prev, arch.num_actions);
    (hidden, value, adv, offset)
}

/// `c = a · b (+ c)`, row-major; `a` is `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above and the strides describe
    // row-major matrices that fit inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Index of the largest unmasked value; ties go to the lowest index.
pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in values.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

impl QNetwork {
    /// Fan-in uniform initialisation on hidden layers; both heads start at zero.
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (hidden_layers, value_head, advantage_head, total) = layout(&arch);
        let mut params = vec![0.0; total];
        for d in &hidden_layers {
            let bound = 1.0 / (d.inputs as f64).sqrt();
            for p in &mut params[d.weights..d.weights + d.len()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(QNetwork {
            arch,
            hidden_layers,
            value_head,
            advantage_head,
            params,
        })
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = arch
            .param_count()
            .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?;
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        let (hidden_layers, value_head, advantage_head, _) = layout(&arch);
        Ok(QNetwork {
            arch,
            hidden_layers,
            value_head,
            advantage_head,
            params,
        })
    }

    /// Re-draws the head parameters uniformly; used to exercise gradients
    /// through the full network.
    pub fn randomize_heads<R: Rng>(&mut self, rng: &mut R) {
        for d in [self.value_head, self.advantage_head] {
            let bound = 1.0 / (d.inputs as f64).sqrt();
            for p in &mut self.params[d.weights..d.weights + d.len()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_actions(&self) -> usize {
        self.arch.num_actions
    }

    /// Overwrites parameters with another network's (target synchronisation).
    pub fn copy_from(&mut self, other: &QNetwork) {
        debug_assert_eq!(self.arch, other.arch);
        self.params.copy_from_slice(&other.params);
    }

    fn dense_forward(&self, d: &Dense, input: &[f64], batch: usize, relu: bool) -> Vec<f64> {
        let mut out = vec![0.0; batch * d.outputs];
        let bias = &self.params[d.bias..d.bias + d.outputs];
        for row in out.chunks_exact_mut(d.outputs) {
            row.copy_from_slice(bias);
        }
        if batch == 1 {
            // Packing the weights costs more than the product for a single row.
            let weights = &self.params[d.weights..d.bias];
            for (&x, w) in input.iter().zip(weights.chunks_exact(d.outputs)) {
                if x != 0.0 {
                    for (o, &wj) in out.iter_mut().zip(w) {
                        *o += x * wj;
                    }
                }
            }
        } else {
            gemm(
                batch,
                d.inputs,
                d.outputs,
                input,
                false,
                &self.params[d.weights..d.bias],
                false,
                &mut out,
                true,
            );
        }
        if relu {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        out
    }

    fn check_batch(&self, states: &[f64], masks: &[bool], batch: usize) {
        assert_eq!(
            states.len(),
            batch * self.arch.input_dim,
            "state batch has wrong length"
        );
        assert_eq!(
            masks.len(),
            batch * self.arch.num_actions,
            "mask batch has wrong length"
        );
    }

    fn forward_impl(
        &self,
        states: &[f64],
        masks: &[bool],
        batch: usize,
        keep: bool,
    ) -> (Vec<f64>, Option<ForwardCache>) {
        self.check_batch(states, masks, batch);
        let k = self.arch.num_actions;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut current = states.to_vec();
        for d in &self.hidden_layers {
            let next = self.dense_forward(d, &current, batch, true);
            acts.push(std::mem::replace(&mut current, next));
        }
        let values = self.dense_forward(&self.value_head, &current, batch, false);
        let advantages = self.dense_forward(&self.advantage_head, &current, batch, false);
        acts.push(current);
        let mut q = vec![f64::NEG_INFINITY; batch * k];
        for i in 0..batch {
            let (adv, mask) = (&advantages[i * k..(i + 1) * k], &masks[i * k..(i + 1) * k]);
            let n_valid = mask.iter().filter(|&&m| m).count();
            if n_valid == 0 {
                continue;
            }
            let mean = adv
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(a, _)| a)
                .sum::<f64>()
                / n_valid as f64;
            for j in 0..k {
                if mask[j] {
                    q[i * k + j] = values[i] + adv[j] - mean;
                }
            }
        }
        let cache = keep.then(|| ForwardCache {
            batch,
            acts,
            advantages,
            masks: masks.to_vec(),
        });
        (q, cache)
    }

    /// Q-values for a batch, row-major `batch × num_actions`; masked slots are `-∞`.
    pub fn forward(&self, states: &[f64], masks: &[bool], batch: usize) -> Vec<f64> {
        self.forward_impl(states, masks, batch, false).0
    }

    pub fn forward_with_cache(
        &self,
        states: &[f64],
        masks: &[bool],
        batch: usize,
    ) -> (Vec<f64>, ForwardCache) {
        let (q, c) = self.forward_impl(states, masks, batch, true);
        (q, c.expect("cache requested"))
    }

    pub fn q_values(&self, s: &StateVector) -> Vec<f64> {
        self.forward(&s.features, &s.mask, 1)
    }

    /// Raw head outputs `(value, advantages)` for one state.
    pub fn heads(&self, s: &StateVector) -> (f64, Vec<f64>) {
        let (_, cache) = self.forward_with_cache(&s.features, &s.mask, 1);
        let hidden = cache.acts.last().expect("at least one activation");
        let v = self.dense_forward(&self.value_head, hidden, 1, false)[0];
        (v, cache.advantages)
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂Q` (`batch × num_actions`,
    /// zero on masked slots).
    pub fn backward(&self, cache: &ForwardCache, dq: &[f64], grad: &mut [f64]) {
        let (b, k) = (cache.batch, self.arch.num_actions);
        assert_eq!(dq.len(), b * k);
        assert_eq!(grad.len(), self.params.len());
        let mut dv = vec![0.0; b];
        let mut da = vec![0.0; b * k];
        for i in 0..b {
            let mask = &cache.masks[i * k..(i + 1) * k];
            let n_valid = mask.iter().filter(|&&m| m).count();
            if n_valid == 0 {
                continue;
            }
            let row = &dq[i * k..(i + 1) * k];
            let total: f64 = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(g, _)| g)
                .sum();
            dv[i] = total;
            let shift = total / n_valid as f64;
            for j in 0..k {
                if mask[j] {
                    da[i * k + j] = row[j] - shift;
                }
            }
        }
        let hidden = cache.acts.last().expect("at least one activation");
        let width = self.value_head.inputs;
        let mut dh = vec![0.0; b * width];
        for (head, d_out) in [(self.value_head, &dv), (self.advantage_head, &da)] {
            let o = head.outputs;
            gemm(
                width,
                b,
                o,
                hidden,
                true,
                d_out,
                false,
                &mut grad[head.weights..head.bias],
                true,
            );
            for row in d_out.chunks_exact(o) {
                for (g, x) in grad[head.bias..head.bias + o].iter_mut().zip(row) {
                    *g += x;
                }
            }
            gemm(
                b,
                o,
                width,
                d_out,
                false,
                &self.params[head.weights..head.bias],
                true,
                &mut dh,
                true,
            );
        }
        let mut upstream = dh;
        for (li, d) in self.hidden_layers.iter().enumerate().rev() {
            let out = &cache.acts[li + 1];
            for (g, &a) in upstream.iter_mut().zip(out) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = &cache.acts[li];
            gemm(
                d.inputs,
                b,
                d.outputs,
                input,
                true,
                &upstream,
                false,
                &mut grad[d.weights..d.bias],
                true,
            );
            for row in upstream.chunks_exact(d.outputs) {
                for (g, x) in grad[d.bias..d.bias + d.outputs].iter_mut().zip(row) {
                    *g += x;
                }
            }
            if li > 0 {
                let mut down = vec![0.0; b * d.inputs];
                gemm(
                    b,
                    d.outputs,
                    d.inputs,
                    &upstream,
                    false,
                    &self.params[d.weights..d.bias],
                    true,
                    &mut down,
                    false,
                );
                upstream = down;
            }
        }
    }

    /// Mean squared TD error of `Q(s_i, a_i)` against `targets`.
    pub fn td_loss(
        &self,
        states: &[f64],
        masks: &[bool],
        actions: &[usize],
        targets: &[f64],
    ) -> f64 {
        let b = actions.len();
        let k = self.arch.num_actions;
        let q = self.forward(states, masks, b);
        actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&a, &y))| (q[i * k + a] - y).powi(2))
            .sum::<f64>()
            / b as f64
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn td_loss_and_grad(
        &self,
        states: &[f64],
        masks: &[bool],
        actions: &[usize],
        targets: &[f64],
    ) -> (f64, Vec<f64>) {
        let b = actions.len();
        let k = self.arch.num_actions;
        let (q, cache) = self.forward_with_cache(states, masks, b);
        let mut dq = vec![0.0; b * k];
        let mut loss = 0.0;
        for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = q[i * k + a] - y;
            loss += err * err;
            dq[i * k + a] = 2.0 * err / b as f64;
        }
        let mut grad = vec![0.0; self.params.len()];
        self.backward(&cache, &dq, &mut grad);
        (loss / b as f64, grad)
    }

    /// Sign pattern of every hidden pre-activation (for kink detection in
    /// finite-difference checks).
    pub fn activation_pattern(&self, states: &[f64], masks: &[bool], batch: usize) -> Vec<bool> {
        let (_, cache) = self.forward_with_cache(states, masks, batch);
        cache.acts[1..].iter().flatten().map(|&a| a > 0.0).collect()
    }
}

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step_size = self.learning_rate * c2.sqrt() / c1;
        let eps = self.epsilon * c2.sqrt();
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps);
        }
    }
}
