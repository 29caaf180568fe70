//! Multi-head attention messaging between peer agents.
//!
//! For every head `n`, the interaction value between target `i` and source
//! `j` is `(h_i W_T^n) . (h_j W_S^n)`, normalized by a temperature softmax
//! over the target's neighborhood. The message for agent `i` is
//! `sigmoid(W_q * (1/H * sum_n sum_j alpha_ij^n (h_j W_C^n)) + b_q)`.

use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;
use crate::nn::{Matrix, ParamStore};

#[derive(Clone, Debug)]
pub struct AttentionNet {
    pub heads: usize,
    pub d_h: usize,
    /// Per-head subspace dimension (`d_h / heads`).
    pub d_k: usize,
    w_t: Vec<String>,
    w_s: Vec<String>,
    w_c: Vec<String>,
    w_q: String,
    b_q: String,
}

/// One normalized attention weight, reported for export.
#[derive(Clone, Copy, Debug)]
pub struct AttentionAlpha {
    pub head: usize,
    /// Index of the target agent (message receiver) in the input slice.
    pub source: usize,
    /// Index of the attended agent in the input slice.
    pub target: usize,
    pub weight: f64,
}

pub struct AttentionCache {
    inputs: Vec<Vec<f64>>,
    neighborhoods: Vec<Vec<usize>>,
    proj_t: Vec<Vec<Vec<f64>>>,
    proj_s: Vec<Vec<Vec<f64>>>,
    proj_c: Vec<Vec<Vec<f64>>>,
    alphas: Vec<Vec<Vec<f64>>>,
    pooled: Vec<Vec<f64>>,
    msgs: Vec<Vec<f64>>,
    iota: f64,
}

impl AttentionNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_h: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(heads >= 1 && d_h % heads == 0, "head count must divide d_h");
        let d_k = d_h / heads;
        let mut w_t = Vec::new();
        let mut w_s = Vec::new();
        let mut w_c = Vec::new();
        for n in 0..heads {
            let t = format!("{prefix}.h{n}.w_t");
            let s = format!("{prefix}.h{n}.w_s");
            let c = format!("{prefix}.h{n}.w_c");
            store.register(&t, Matrix::xavier(d_k, d_h, rng));
            store.register(&s, Matrix::xavier(d_k, d_h, rng));
            store.register(&c, Matrix::xavier(d_k, d_h, rng));
            w_t.push(t);
            w_s.push(s);
            w_c.push(c);
        }
        let w_q = format!("{prefix}.w_q");
        let b_q = format!("{prefix}.b_q");
        store.register(&w_q, Matrix::xavier(d_h, d_k, rng));
        store.register(&b_q, Matrix::zeros(d_h, 1));
        AttentionNet {
            heads,
            d_h,
            d_k,
            w_t,
            w_s,
            w_c,
            w_q,
            b_q,
        }
    }

    /// Computes the peer message for every agent. `neighborhoods[i]` lists
    /// indices into `inputs` and must contain `i` itself.
    pub fn exchange(
        &self,
        store: &ParamStore,
        inputs: &[Vec<f64>],
        neighborhoods: &[Vec<usize>],
        iota: f64,
    ) -> Result<(Vec<Vec<f64>>, Vec<AttentionAlpha>, AttentionCache), CoreError> {
        if neighborhoods.len() != inputs.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} neighborhoods for {} agents",
                neighborhoods.len(),
                inputs.len()
            )));
        }
        for (i, hood) in neighborhoods.iter().enumerate() {
            if hood.is_empty() || !hood.contains(&i) {
                return Err(CoreError::InvalidConfig(format!(
                    "neighborhood of agent {i} must be nonempty and include itself"
                )));
            }
        }
        for h in inputs {
            if h.len() != self.d_h {
                return Err(CoreError::ShapeMismatch(format!(
                    "attention input length {} != d_h {}",
                    h.len(),
                    self.d_h
                )));
            }
        }

        let n_agents = inputs.len();
        let mut proj_t = Vec::with_capacity(self.heads);
        let mut proj_s = Vec::with_capacity(self.heads);
        let mut proj_c = Vec::with_capacity(self.heads);
        for n in 0..self.heads {
            let wt = store.value(&self.w_t[n]);
            let ws = store.value(&self.w_s[n]);
            let wc = store.value(&self.w_c[n]);
            proj_t.push(inputs.iter().map(|h| wt.matvec(h)).collect::<Vec<_>>());
            proj_s.push(inputs.iter().map(|h| ws.matvec(h)).collect::<Vec<_>>());
            proj_c.push(inputs.iter().map(|h| wc.matvec(h)).collect::<Vec<_>>());
        }

        let mut alphas = vec![vec![Vec::new(); n_agents]; self.heads];
        let mut pooled = vec![vec![0.0; self.d_k]; n_agents];
        let mut alpha_rows = Vec::new();
        for i in 0..n_agents {
            for n in 0..self.heads {
                let logits: Vec<f64> = neighborhoods[i]
                    .iter()
                    .map(|&j| dot(&proj_t[n][i], &proj_s[n][j]) / iota)
                    .collect();
                let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = exp.iter().sum();
                let alpha: Vec<f64> = exp.iter().map(|e| e / total).collect();
                for (pos, &j) in neighborhoods[i].iter().enumerate() {
                    alpha_rows.push(AttentionAlpha {
                        head: n,
                        source: i,
                        target: j,
                        weight: alpha[pos],
                    });
                    for (p, c) in pooled[i].iter_mut().zip(&proj_c[n][j]) {
                        *p += alpha[pos] * c / self.heads as f64;
                    }
                }
                alphas[n][i] = alpha;
            }
        }

        let wq = store.value(&self.w_q);
        let bq = store.value(&self.b_q);
        let msgs: Vec<Vec<f64>> = pooled
            .iter()
            .map(|p| {
                let mut pre = wq.matvec(p);
                for (v, b) in pre.iter_mut().zip(&bq.data) {
                    *v = sigmoid(*v + b);
                }
                pre
            })
            .collect();

        let cache = AttentionCache {
            inputs: inputs.to_vec(),
            neighborhoods: neighborhoods.to_vec(),
            proj_t,
            proj_s,
            proj_c,
            alphas,
            pooled,
            msgs: msgs.clone(),
            iota,
        };
        Ok((msgs, alpha_rows, cache))
    }

    /// Backward through the whole exchange; accumulates parameter gradients
    /// and returns dL/d_inputs.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttentionCache,
        d_msgs: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let n_agents = cache.inputs.len();
        let mut d_inputs = vec![vec![0.0; self.d_h]; n_agents];
        let mut d_pooled = vec![vec![0.0; self.d_k]; n_agents];

        // Through the sigmoid head.
        for i in 0..n_agents {
            let d_pre: Vec<f64> = d_msgs[i]
                .iter()
                .zip(&cache.msgs[i])
                .map(|(d, m)| d * m * (1.0 - m))
                .collect();
            store
                .grad_mut(&self.w_q)
                .add_outer(&d_pre, &cache.pooled[i]);
            {
                let gb = store.grad_mut(&self.b_q);
                for (g, d) in gb.data.iter_mut().zip(&d_pre) {
                    *g += d;
                }
            }
            d_pooled[i] = store.value(&self.w_q).matvec_t(&d_pre);
        }

        let scale = 1.0 / self.heads as f64;
        let mut d_t = vec![vec![vec![0.0; self.d_k]; n_agents]; self.heads];
        let mut d_s = vec![vec![vec![0.0; self.d_k]; n_agents]; self.heads];
        let mut d_c = vec![vec![vec![0.0; self.d_k]; n_agents]; self.heads];

        for i in 0..n_agents {
            for n in 0..self.heads {
                let hood = &cache.neighborhoods[i];
                let alpha = &cache.alphas[n][i];
                // d alpha_j and d c_j from pooled_i = (1/H) sum_j alpha_j c_j.
                let mut d_alpha = vec![0.0; hood.len()];
                for (pos, &j) in hood.iter().enumerate() {
                    d_alpha[pos] = scale * dot(&d_pooled[i], &cache.proj_c[n][j]);
                    for (dc, dp) in d_c[n][j].iter_mut().zip(&d_pooled[i]) {
                        *dc += scale * alpha[pos] * dp;
                    }
                }
                // Softmax backward with temperature.
                let inner: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                for (pos, &j) in hood.iter().enumerate() {
                    let d_logit = alpha[pos] * (d_alpha[pos] - inner) / cache.iota;
                    for (dt, s) in d_t[n][i].iter_mut().zip(&cache.proj_s[n][j]) {
                        *dt += d_logit * s;
                    }
                    for (ds, t) in d_s[n][j].iter_mut().zip(&cache.proj_t[n][i]) {
                        *ds += d_logit * t;
                    }
                }
            }
        }

        for n in 0..self.heads {
            for a in 0..n_agents {
                store
                    .grad_mut(&self.w_t[n])
                    .add_outer(&d_t[n][a], &cache.inputs[a]);
                store
                    .grad_mut(&self.w_s[n])
                    .add_outer(&d_s[n][a], &cache.inputs[a]);
                store
                    .grad_mut(&self.w_c[n])
                    .add_outer(&d_c[n][a], &cache.inputs[a]);
                add_assign(
                    &mut d_inputs[a],
                    &store.value(&self.w_t[n]).matvec_t(&d_t[n][a]),
                );
                add_assign(
                    &mut d_inputs[a],
                    &store.value(&self.w_s[n]).matvec_t(&d_s[n][a]),
                );
                add_assign(
                    &mut d_inputs[a],
                    &store.value(&self.w_c[n]).matvec_t(&d_c[n][a]),
                );
            }
        }
        d_inputs
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
