//! Small fully-connected Q-network with inverted dropout on the hidden
//! layers, one-step Q-learning updates from a replay buffer, and dropout
//! sampling for Thompson policies.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::belief::{argmax, thompson_from_dropout, ActionPolicy};
use crate::error::{FetsError, Result};

const MAGIC: &[u8; 4] = b"FQN1";

pub const DEFAULT_DROPOUT_PASSES: usize = 100;

/// Multi-layer perceptron with tanh hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    // per layer, row-major `out x in`
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    dropout: f64,
}

/// Per-hidden-layer multipliers: 0 for dropped units, 1/(1-p) for kept ones.
type Masks = Vec<Vec<f64>>;

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, dropout)?;
        for (l, w) in net.weights.iter_mut().enumerate() {
            let limit = (6.0 / (sizes[l] + sizes[l + 1]) as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], dropout: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(FetsError::invalid(format!(
                "network needs at least two non-empty layers, got {sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(FetsError::invalid(format!(
                "dropout rate must lie in [0,1), got {dropout}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|n| vec![0.0; *n]).collect(),
            dropout,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(FetsError::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FetsError::invalid("non-finite network parameter"));
        }
        let mut rest = params;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (pw, r) = rest.split_at(w.len());
            w.copy_from_slice(pw);
            let (pb, r) = r.split_at(b.len());
            b.copy_from_slice(pb);
            rest = r;
        }
        Ok(())
    }

    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let last = self.biases.last_mut().unwrap();
        if bias.len() != last.len() {
            return Err(FetsError::invalid("output bias length mismatch"));
        }
        last.copy_from_slice(bias);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.inputs() {
            return Err(FetsError::invalid(format!(
                "network expects {} inputs, got {}",
                self.inputs(),
                x.len()
            )));
        }
        Ok(())
    }

    fn draw_masks<R: Rng + ?Sized>(&self, rng: &mut R) -> Masks {
        let keep = 1.0 / (1.0 - self.dropout);
        self.sizes[1..self.sizes.len() - 1]
            .iter()
            .map(|n| {
                (0..*n)
                    .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { keep })
                    .collect()
            })
            .collect()
    }

    /// Activations of every layer (input first). Hidden activations are
    /// already masked.
    fn activations(&self, x: &[f64], masks: Option<&Masks>) -> Vec<Vec<f64>> {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let input = &acts[l];
            let n_in = self.sizes[l];
            let mut out = self.biases[l].clone();
            for (o, row) in out.iter_mut().zip(self.weights[l].chunks_exact(n_in)) {
                *o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < layers {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = o.tanh();
                    if let Some(m) = masks {
                        *o *= m[l][j];
                    }
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Action values for `x`. With `dropout_on`, each hidden unit is zeroed
    /// with the dropout probability and survivors are scaled by 1/(1-p).
    pub fn forward<R: Rng + ?Sized>(&self, x: &[f64], dropout_on: bool, rng: &mut R) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let masks = (dropout_on && self.dropout > 0.0).then(|| self.draw_masks(rng));
        Ok(self.activations(x, masks.as_ref()).pop().unwrap())
    }

    /// Deterministic forward pass without dropout.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x, None).pop().unwrap())
    }

    /// Loss `0.5 (Q(x,a) - target)^2` and its gradient in [`Mlp::params`]
    /// order, accumulated into `grad`.
    fn accumulate_grad(
        &self,
        x: &[f64],
        action: usize,
        target: f64,
        masks: Option<&Masks>,
        grad: &mut [f64],
    ) -> f64 {
        let acts = self.activations(x, masks);
        let layers = self.weights.len();
        let err = acts[layers][action] - target;
        let mut delta = vec![0.0; self.outputs()];
        delta[action] = err;

        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, w| {
                let start = *acc;
                *acc += (w[0] + 1) * w[1];
                Some(start)
            })
            .collect();
        for l in (0..layers).rev() {
            let n_in = self.sizes[l];
            let input = &acts[l];
            let base = offsets[l];
            let w_len = self.weights[l].len();
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[base + w_len + o] += d;
            }
            if l == 0 {
                break;
            }
            // back through the masked tanh of layer l-1's output
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (j, p) in prev.iter_mut().enumerate() {
                let m = masks.map_or(1.0, |m| m[l - 1][j]);
                if m == 0.0 {
                    *p = 0.0;
                    continue;
                }
                // acts[l][j] = m * tanh(z)
                let t = input[j] / m;
                *p *= m * (1.0 - t * t);
            }
            delta = prev;
        }
        0.5 * err * err
    }

    /// Loss and gradient for one sample with dropout disabled.
    pub fn loss_and_grad(&self, x: &[f64], action: usize, target: f64) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        if action >= self.outputs() {
            return Err(FetsError::invalid(format!("action {action} out of range")));
        }
        let mut grad = vec![0.0; self.param_count()];
        let loss = self.accumulate_grad(x, action, target, None, &mut grad);
        Ok((loss, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| FetsError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| FetsError::io(path, e))
    }

    pub fn load(path: &Path, dropout: f64) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| FetsError::io(path, e))?;
        Self::from_bytes(&buf, dropout)
    }

    /// Checkpoint bytes: magic, layer count (u32), layer sizes (u32), then
    /// parameters as f64, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.sizes.len() + 8 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], dropout: f64) -> Result<Self> {
        let bad = |m: &str| FetsError::invalid(format!("malformed network checkpoint: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing FQN1 header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let layers = u32_at(4);
        if bytes.len() < 8 + 4 * layers {
            return Err(bad("truncated layer sizes"));
        }
        let sizes: Vec<usize> = (0..layers).map(|i| u32_at(8 + 4 * i)).collect();
        let mut net = Self::zeros(&sizes, dropout)?;
        let body = &bytes[8 + 4 * layers..];
        if body.len() != 8 * net.param_count() {
            return Err(bad("parameter block has the wrong length"));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_params(&params)?;
        Ok(net)
    }
}

/// Dropout Thompson policy: the fraction of `passes` dropout forwards in
/// which each action has the largest value (ties to the lowest index).
pub fn dropout_ts<R: Rng + ?Sized>(net: &Mlp, x: &[f64], passes: usize, rng: &mut R) -> Result<ActionPolicy> {
    if passes == 0 {
        return Err(FetsError::invalid("dropout sampling needs at least one pass"));
    }
    net.check_input(x)?;
    let mut counts = vec![0u64; net.outputs()];
    if net.dropout == 0.0 {
        counts[argmax(&net.predict(x)?)] = passes as u64;
    } else {
        for _ in 0..passes {
            let masks = net.draw_masks(rng);
            let out = net.activations(x, Some(&masks)).pop().unwrap();
            counts[argmax(&out)] += 1;
        }
    }
    thompson_from_dropout(&counts, passes as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(FetsError::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement; `None` until `batch` items are held.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(
            (0..batch)
                .map(|_| &self.items[rng.random_range(0..self.items.len())])
                .collect(),
        )
    }
}

/// One SGD step on the mean of `0.5 (Q(s,a) - y)^2` over the batch, where
/// `y = r + gamma max_a' Q(s', a')` is computed without dropout and the
/// online prediction uses fresh dropout masks. Returns the batch loss.
pub fn train_step<R: Rng + ?Sized>(
    net: &mut Mlp,
    batch: &[&Transition],
    gamma: f64,
    learning_rate: f64,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(FetsError::invalid("empty training batch"));
    }
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for t in batch {
        net.check_input(&t.obs)?;
        if t.action >= net.outputs() {
            return Err(FetsError::invalid(format!("action {} out of range", t.action)));
        }
        let target = if t.terminal {
            t.reward
        } else {
            let next = net.predict(&t.next_obs)?;
            t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let masks = (net.dropout > 0.0).then(|| net.draw_masks(rng));
        loss += net.accumulate_grad(&t.obs, t.action, target, masks.as_ref(), &mut grad);
    }
    let scale = learning_rate / batch.len() as f64;
    let mut off = 0;
    for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
        for x in w.iter_mut().chain(b.iter_mut()) {
            *x -= scale * grad[off];
            off += 1;
        }
    }
    Ok(loss / batch.len() as f64)
}
