//! Dense per-path storage.

use crate::par;

/// Row-major `n_paths x n_cols` array; row `p` holds one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathArray {
    n_paths: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl PathArray {
    pub fn zeros(n_paths: usize, n_cols: usize) -> Self {
        PathArray {
            n_paths,
            n_cols,
            data: vec![0.0; n_paths * n_cols],
        }
    }

    pub fn from_fn<F>(n_paths: usize, n_cols: usize, f: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let mut out = Self::zeros(n_paths, n_cols);
        par::fill_rows(&mut out.data, n_cols, f);
        out
    }

    /// Every path carries the same row.
    pub fn broadcast(n_paths: usize, row: &[f64]) -> Self {
        let mut data = Vec::with_capacity(n_paths * row.len());
        for _ in 0..n_paths {
            data.extend_from_slice(row);
        }
        PathArray {
            n_paths,
            n_cols: row.len(),
            data,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, path: usize, col: usize) -> f64 {
        self.data[path * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, path: usize, col: usize, v: f64) {
        self.data[path * self.n_cols + col] = v;
    }

    #[inline]
    pub fn row(&self, path: usize) -> &[f64] {
        &self.data[path * self.n_cols..(path + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, path: usize) -> &mut [f64] {
        &mut self.data[path * self.n_cols..(path + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.get(p, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_paths);
        for (p, v) in values.iter().enumerate() {
            self.set(p, col, *v);
        }
    }

    pub fn column_mean(&self, col: usize) -> f64 {
        par::mean(self.n_paths, |p| self.get(p, col))
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_paths.max(1) as f64;
        par::sum_vec(self.n_paths, self.n_cols, |p, acc| {
            for (a, v) in acc.iter_mut().zip(self.row(p)) {
                *a += v;
            }
        })
        .into_iter()
        .map(|s| s / n)
        .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Elementwise `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &PathArray, b: f64) -> PathArray {
        assert_eq!(self.data.len(), other.data.len());
        PathArray {
            n_paths: self.n_paths,
            n_cols: self.n_cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> PathArray {
        PathArray {
            n_paths: self.n_paths,
            n_cols: self.n_cols,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    /// First non-finite entry as `(path, col, value)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize, f64)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|k| (k / self.n_cols, k % self.n_cols, self.data[k]))
    }
}
