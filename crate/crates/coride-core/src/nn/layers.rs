//! Fixed network architectures with hand-written backward passes: affine
//! layers, ReLU MLPs, a tanh recurrent cell, a dilated recurrent cell that
//! rotates through a ring of hidden slots, and a grid embedding table.
//!
//! Layers do not own their tensors; they hold names into a [`ParamStore`]
//! so soft updates, checkpoints, and the optimizer can treat every network
//! uniformly.

use rand_chacha::ChaCha8Rng;

use super::{Matrix, ParamStore};

fn key(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Affine map `y = W x (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        store.register(&key(prefix, "w"), Matrix::xavier(out_dim, in_dim, rng));
        let b = if bias {
            let name = key(prefix, "b");
            store.register(&name, Matrix::zeros(out_dim, 1));
            Some(name)
        } else {
            None
        };
        Linear {
            w: key(prefix, "w"),
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim, "{}", self.w);
        let mut y = store.value(&self.w).matvec(x);
        if let Some(b) = &self.b {
            for (yi, bi) in y.iter_mut().zip(&store.value(b).data) {
                *yi += bi;
            }
        }
        y
    }

    /// Accumulates dL/dW (and dL/db) into the store and returns dL/dx.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], d_out: &[f64]) -> Vec<f64> {
        let d_x = store.value(&self.w).matvec_t(d_out);
        store.grad_mut(&self.w).add_outer(d_out, x);
        if let Some(b) = &self.b {
            let grad = store.grad_mut(b);
            for (g, d) in grad.data.iter_mut().zip(d_out) {
                *g += d;
            }
        }
        d_x
    }
}

/// Affine/ReLU stack; the final layer is affine with no activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Preactivations of the hidden layers (needed for the ReLU gate).
    hidden_pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `sizes` lists [input, hidden..., output].
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden_pre = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let pre = layer.forward(store, &cur);
            if i < last {
                hidden_pre.push(pre.clone());
                cur = pre.into_iter().map(|v| v.max(0.0)).collect();
            } else {
                cur = pre;
            }
        }
        (cur, MlpCache { inputs, hidden_pre })
    }

    /// Backward from dL/d_output; accumulates parameter gradients and
    /// returns dL/d_input.
    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, d_out: &[f64]) -> Vec<f64> {
        let mut d = d_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            d = layer.backward(store, &cache.inputs[i], &d);
            if i > 0 {
                // Gate through the ReLU that fed this layer.
                for (dj, pre) in d.iter_mut().zip(&cache.hidden_pre[i - 1]) {
                    if *pre <= 0.0 {
                        *dj = 0.0;
                    }
                }
            }
        }
        d
    }
}

/// Tanh recurrent cell: `h' = tanh(W_ih x + W_hh h + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    pub w_ih: String,
    pub w_hh: String,
    pub b: String,
    pub in_dim: usize,
    pub hidden: usize,
}

pub struct RnnCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    h_new: Vec<f64>,
}

impl RnnCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        store.register(&key(prefix, "w_ih"), Matrix::xavier(hidden, in_dim, rng));
        store.register(&key(prefix, "w_hh"), Matrix::xavier(hidden, hidden, rng));
        store.register(&key(prefix, "b"), Matrix::zeros(hidden, 1));
        RnnCell {
            w_ih: key(prefix, "w_ih"),
            w_hh: key(prefix, "w_hh"),
            b: key(prefix, "b"),
            in_dim,
            hidden,
        }
    }

    pub fn step(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> (Vec<f64>, RnnCache) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(h.len(), self.hidden);
        let mut pre = store.value(&self.w_ih).matvec(x);
        let hh = store.value(&self.w_hh).matvec(h);
        let b = &store.value(&self.b).data;
        for i in 0..self.hidden {
            pre[i] = (pre[i] + hh[i] + b[i]).tanh();
        }
        let cache = RnnCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            h_new: pre.clone(),
        };
        (pre, cache)
    }

    /// Backward through one step; returns (dL/dx, dL/dh_prev).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &RnnCache,
        d_hnew: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        // d pre = d_hnew * (1 - h'^2)
        let d_pre: Vec<f64> = d_hnew
            .iter()
            .zip(&cache.h_new)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        let d_x = store.value(&self.w_ih).matvec_t(&d_pre);
        let d_h = store.value(&self.w_hh).matvec_t(&d_pre);
        store.grad_mut(&self.w_ih).add_outer(&d_pre, &cache.x);
        store.grad_mut(&self.w_hh).add_outer(&d_pre, &cache.h_prev);
        let grad_b = store.grad_mut(&self.b);
        for (g, d) in grad_b.data.iter_mut().zip(&d_pre) {
            *g += d;
        }
        (d_x, d_h)
    }
}

/// Hidden state of a dilated recurrent cell: a ring of `r` hidden vectors
/// and the phase of the next slot to update.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedState {
    pub ring: Vec<Vec<f64>>,
    pub phase: usize,
}

impl DilatedState {
    pub fn zeros(dilation: usize, hidden: usize) -> Self {
        assert!(dilation >= 1);
        DilatedState {
            ring: vec![vec![0.0; hidden]; dilation],
            phase: 0,
        }
    }
}

/// Recurrent cell at a slower effective timescale: each step updates only
/// the ring slot at the current phase (via the inner tanh cell against that
/// slot's hidden vector) and emits the mean of all slots.
#[derive(Clone, Debug)]
pub struct DilatedRnn {
    pub cell: RnnCell,
    pub dilation: usize,
}

pub struct DilatedCache {
    inner: RnnCache,
    slot: usize,
}

impl DilatedRnn {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dilation >= 1, "dilation ring needs at least one slot");
        DilatedRnn {
            cell: RnnCell::new(store, prefix, in_dim, hidden, rng),
            dilation,
        }
    }

    pub fn hidden(&self) -> usize {
        self.cell.hidden
    }

    pub fn step(
        &self,
        store: &ParamStore,
        state: &DilatedState,
        x: &[f64],
    ) -> (DilatedState, Vec<f64>, DilatedCache) {
        debug_assert_eq!(state.ring.len(), self.dilation);
        let slot = state.phase;
        let (h_new, inner) = self.cell.step(store, x, &state.ring[slot]);
        let mut ring = state.ring.clone();
        ring[slot] = h_new;
        let mut output = vec![0.0; self.cell.hidden];
        for h in &ring {
            for (o, v) in output.iter_mut().zip(h) {
                *o += v;
            }
        }
        let scale = 1.0 / self.dilation as f64;
        output.iter_mut().for_each(|o| *o *= scale);
        let next = DilatedState {
            ring,
            phase: (slot + 1) % self.dilation,
        };
        (next, output, DilatedCache { inner, slot })
    }

    /// Backward through one step from a zero-history state: gradients flow
    /// through the updated slot only (the untouched slots are inputs).
    /// Returns dL/dx.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DilatedCache,
        d_out: &[f64],
    ) -> Vec<f64> {
        let scale = 1.0 / self.dilation as f64;
        let d_slot: Vec<f64> = d_out.iter().map(|d| d * scale).collect();
        let (d_x, _d_hprev) = self.cell.backward(store, &cache.inner, &d_slot);
        let _ = cache.slot;
        d_x
    }
}

/// Learned per-grid embedding table; one row per grid.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub name: String,
    pub count: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        count: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        store.register(&key(prefix, "table"), Matrix::xavier(count, dim, rng));
        EmbeddingTable {
            name: key(prefix, "table"),
            count,
            dim,
        }
    }

    pub fn lookup<'s>(&self, store: &'s ParamStore, id: usize) -> &'s [f64] {
        let table = store.value(&self.name);
        &table.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn accumulate_grad(&self, store: &mut ParamStore, id: usize, d: &[f64]) {
        let grad = store.grad_mut(&self.name);
        let row = &mut grad.data[id * self.dim..(id + 1) * self.dim];
        for (g, dv) in row.iter_mut().zip(d) {
            *g += dv;
        }
    }
}
