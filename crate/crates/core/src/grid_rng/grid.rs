use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid `t_i = i*T/N`, `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

pub fn make_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    if n_steps < 2 {
        return Err(Error::config(format!("n_steps must be at least 2, got {n_steps}")));
    }
    Ok(TimeGrid { horizon, n_steps })
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of steps `N`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes `N + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.t(i)).collect()
    }

    /// Left-point quadrature weights for `int_0^T f(t) dt`: `dt` on nodes
    /// `0..N`, zero on the terminal node.
    pub fn left_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt(); self.n_nodes()];
        w[self.n_steps] = 0.0;
        w
    }

    /// Left-point quadrature of node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes());
        values[..self.n_steps].iter().sum::<f64>() * self.dt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_grid_nodes() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn rejects_single_step() {
        assert!(matches!(make_grid(1.0, 1), Err(Error::Config(_))));
        assert!(make_grid(0.0, 4).is_err());
        assert!(make_grid(-1.0, 4).is_err());
    }

    #[test]
    fn step_size() {
        let g = make_grid(2.0, 8).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.t(8), 2.0);
    }

    #[test]
    fn nodes_increasing_and_exact_endpoints() {
        for n in 2..200 {
            let g = make_grid(0.7, n).unwrap();
            let nodes = g.nodes();
            assert_eq!(nodes[0], 0.0);
            assert_eq!(*nodes.last().unwrap(), 0.7);
            assert!(nodes.windows(2).all(|w| w[1] > w[0]));
            assert!((g.dt() * n as f64 - 0.7).abs() <= f64::EPSILON);
        }
    }
}
