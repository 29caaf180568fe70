//! Minimal differentiable building blocks: dense matrices, a named
//! parameter store with gradient buffers, fixed-architecture layers with
//! hand-written backward passes, soft target updates, and an adaptive
//! first/second-moment optimizer. CPU only, f64 throughout.

pub mod checkpoint;
pub mod layers;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::CoreError;

/// Row-major dense matrix. Vectors are `n x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Xavier-uniform init: U(-sqrt(6/(fan_in+fan_out)), +...).
    pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..limit))
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `y = A x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        y
    }

    /// `y = A^T x` for a column vector `x` of length `rows`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xr = x[r];
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += a * xr;
            }
        }
        y
    }

    /// Accumulates the rank-1 update `self += g x^T`.
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let gr = g[r];
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (a, b) in row.iter_mut().zip(x) {
                *a += gr * b;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// One named parameter: value plus a gradient buffer of the same shape.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named parameter tensors with gradient buffers. Shapes are fixed once
/// registered; iteration order is deterministic (BTreeMap).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, value: Matrix) {
        assert!(
            !self.params.contains_key(name),
            "parameter `{name}` registered twice"
        );
        let grad = Matrix::zeros(value.rows, value.cols);
        self.params.insert(name.to_string(), Param { value, grad });
    }

    pub fn value(&self, name: &str) -> &Matrix {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Matrix {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    pub fn grad_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self
            .params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|p| p.value.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.value.data.iter().all(|v| v.is_finite()))
    }
}

/// `target <- tau * source + (1 - tau) * target`, elementwise over every
/// parameter. Both stores must hold identical names and shapes.
pub fn soft_update(
    target: &mut ParamStore,
    source: &ParamStore,
    tau: f64,
) -> Result<(), CoreError> {
    if target.len() != source.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "target has {} tensors, source has {}",
            target.len(),
            source.len()
        )));
    }
    for (name, src) in source.iter() {
        let dst = target
            .params
            .get_mut(name)
            .ok_or_else(|| CoreError::ShapeMismatch(format!("target is missing `{name}`")))?;
        if !dst.value.same_shape(&src.value) {
            return Err(CoreError::ShapeMismatch(format!(
                "`{name}`: {}x{} vs {}x{}",
                dst.value.rows, dst.value.cols, src.value.rows, src.value.cols
            )));
        }
        for (d, s) in dst.value.data.iter_mut().zip(&src.value.data) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    }
    Ok(())
}

/// Stochastic gradient with per-parameter first/second moment scaling.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One descent step on the accumulated gradients. Gradients are left in
    /// place; callers zero them before the next accumulation.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, param) in store.params.iter_mut() {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(param.value.rows, param.value.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(param.value.rows, param.value.cols));
            for i in 0..param.value.data.len() {
                let g = param.grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bias1;
                let v_hat = v.data[i] / bias2;
                param.value.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn matvec_and_transpose() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(a.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn soft_update_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut src = ParamStore::new();
        src.register("w", Matrix::xavier(3, 2, &mut rng));
        src.register("b", Matrix::from_vec(2, 1, vec![2.0, 2.0]));
        let mut tgt = ParamStore::new();
        tgt.register("w", Matrix::zeros(3, 2));
        tgt.register("b", Matrix::zeros(2, 1));

        // tau = 0 leaves the target unchanged.
        soft_update(&mut tgt, &src, 0.0).unwrap();
        assert!(tgt.value("w").data.iter().all(|&x| x == 0.0));

        // tau = 0.5 is the midpoint.
        soft_update(&mut tgt, &src, 0.5).unwrap();
        assert_eq!(tgt.value("b").data, vec![1.0, 1.0]);

        // tau = 1 is a hard copy.
        soft_update(&mut tgt, &src, 1.0).unwrap();
        assert_eq!(tgt.value("w").data, src.value("w").data);
        assert_eq!(tgt.value("b").data, src.value("b").data);

        let mut wrong = ParamStore::new();
        wrong.register("w", Matrix::zeros(2, 2));
        wrong.register("b", Matrix::zeros(2, 1));
        assert!(soft_update(&mut wrong, &src, 0.5).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.register("x", Matrix::from_vec(1, 1, vec![5.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let x = store.value("x").data[0];
            store.grad_mut("x").data[0] = 2.0 * x;
            opt.step(&mut store);
            store.zero_grads();
        }
        assert!(store.value("x").data[0].abs() < 1e-3);
    }
}
