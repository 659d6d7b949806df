use std::collections::HashMap;

use rayon::prelude::*;

use crate::matrix::{squared_distance, Matrix};

/// Largest training set whose full Gram matrix is kept in memory.
pub const FULL_CACHE_MAX_ROWS: usize = 5000;
const ROW_CACHE_BYTES: usize = 256 << 20;
const PARALLEL_ROW_MIN: usize = 2048;

/// Gaussian RBF kernel `exp(-gamma ||a - b||²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rbf {
    pub gamma: f64,
}

impl Rbf {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        (-self.gamma * squared_distance(a, b)).exp()
    }

    pub fn gram(&self, x: &Matrix) -> Matrix {
        let n = x.nrows();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            k.set(i, i, 1.0);
            for j in 0..i {
                let v = self.eval(x.row(i), x.row(j));
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }
}

/// Kernel rows over the training set, computed on demand and kept in an LRU cache.
pub(crate) struct KernelCache<'a> {
    x: &'a Matrix,
    kernel: Rbf,
    capacity: usize,
    rows: HashMap<usize, (Vec<f64>, u64)>,
    clock: u64,
    pub(crate) misses: u64,
}

impl<'a> KernelCache<'a> {
    pub(crate) fn new(x: &'a Matrix, kernel: Rbf) -> Self {
        let n = x.nrows();
        let capacity = if n <= FULL_CACHE_MAX_ROWS {
            n
        } else {
            (ROW_CACHE_BYTES / (8 * n)).clamp(2, n)
        };
        Self {
            x,
            kernel,
            capacity,
            rows: HashMap::with_capacity(capacity.min(1024)),
            clock: 0,
            misses: 0,
        }
    }

    fn compute(&self, i: usize) -> Vec<f64> {
        let xi = self.x.row(i);
        let n = self.x.nrows();
        if n >= PARALLEL_ROW_MIN {
            (0..n)
                .into_par_iter()
                .map(|j| self.kernel.eval(xi, self.x.row(j)))
                .collect()
        } else {
            (0..n)
                .map(|j| self.kernel.eval(xi, self.x.row(j)))
                .collect()
        }
    }

    /// Row `i` of the Gram matrix.
    pub(crate) fn row(&mut self, i: usize) -> &[f64] {
        self.clock += 1;
        let clock = self.clock;
        if !self.rows.contains_key(&i) {
            self.misses += 1;
            if self.rows.len() >= self.capacity {
                let oldest = self
                    .rows
                    .iter()
                    .min_by_key(|(_, (_, t))| *t)
                    .map(|(k, _)| *k)
                    .expect("cache is full, so non-empty");
                self.rows.remove(&oldest);
            }
            let r = self.compute(i);
            self.rows.insert(i, (r, clock));
        }
        let entry = self.rows.get_mut(&i).expect("row present");
        entry.1 = clock;
        &entry.0
    }
}
