//! Conditional expectations `E[. | F_{t_i}]` by ridge least-squares regression
//! on polynomial features of the Brownian level (and optionally the forward
//! state) at node `i`.
//!
//! The design matrix of each node is standardized and factorized once; each
//! regression afterwards costs one pass over the paths for `Phi^T v` and one
//! for the fitted values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::BrownianBundle;
use crate::linalg;
use crate::par;

/// Feature configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    /// Maximal total degree of the polynomial features.
    pub degree: usize,
    /// Ridge penalty on the standardized non-constant features.
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 2,
            ridge: 1e-8,
        }
    }
}

/// Exponent tuples of all monomials of total degree `1..=degree` in `n_vars`
/// variables, in a fixed order.
fn monomials(n_vars: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(var: usize, n_vars: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if var == n_vars {
            if cur.iter().any(|&e| e > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for e in 0..=left {
            cur.push(e as u32);
            rec(var + 1, n_vars, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n_vars, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|m| (m.iter().sum::<u32>(), std::cmp::Reverse(m.clone())));
    out
}

#[derive(Debug, Clone)]
struct NodeDesign {
    k: usize,
    /// Start of this node's features within a path's row; the first one is
    /// the constant 1.
    offset: usize,
    chol: Vec<f64>,
    degenerate: bool,
}

/// Regression coefficients at one node.
pub type Coef = Vec<f64>;

/// Per-node least-squares projections for one bundle (and optional state).
#[derive(Debug, Clone)]
pub struct Regressor {
    basis: RegressionBasis,
    n_paths: usize,
    /// Features per path over all nodes.
    stride: usize,
    /// Row-major `n_paths x stride`.
    features: Vec<f64>,
    nodes: Vec<NodeDesign>,
}

impl Regressor {
    /// Features built from the Brownian levels only.
    pub fn new(bundle: &BrownianBundle, basis: RegressionBasis) -> Result<Self> {
        Self::build(bundle, None, basis)
    }

    /// Features built from the Brownian levels and a scalar state `X[path][node]`.
    pub fn with_state(bundle: &BrownianBundle, state: &PathArray, basis: RegressionBasis) -> Result<Self> {
        if state.n_paths() != bundle.n_paths() || state.n_cols() != bundle.grid().n_nodes() {
            return Err(Error::config("state field does not match the bundle"));
        }
        Self::build(bundle, Some(state), basis)
    }

    fn build(bundle: &BrownianBundle, state: Option<&PathArray>, basis: RegressionBasis) -> Result<Self> {
        if basis.degree == 0 {
            return Err(Error::config("regression degree must be at least 1"));
        }
        if !(basis.ridge >= 0.0) {
            return Err(Error::config("ridge parameter must be non-negative"));
        }
        let n_paths = bundle.n_paths();
        let d = bundle.dim();
        let n_vars = d + usize::from(state.is_some());
        let monos = monomials(n_vars, basis.degree);
        let k_full = 1 + monos.len();
        if k_full * 20 > n_paths {
            return Err(Error::config(format!(
                "{k_full} regression features need at least {} paths",
                k_full * 20
            )));
        }
        let var_at = |p: usize, node: usize, v: usize| -> f64 {
            if v < d {
                bundle.b(p, node, v)
            } else {
                state.map_or(0.0, |s| s.get(p, node))
            }
        };
        let eval_monos = |p: usize, node: usize, out: &mut [f64]| {
            let mut vars = [0.0f64; 8];
            for (v, slot) in vars.iter_mut().enumerate().take(n_vars) {
                *slot = var_at(p, node, v);
            }
            for (m, o) in monos.iter().zip(out.iter_mut()) {
                *o = m
                    .iter()
                    .enumerate()
                    .map(|(v, &e)| vars[v].powi(e as i32))
                    .product();
            }
        };
        if n_vars > 8 {
            return Err(Error::config("too many regression variables"));
        }

        let mut nodes = Vec::with_capacity(bundle.grid().n_nodes());
        let mut per_node = Vec::with_capacity(bundle.grid().n_nodes());
        let mut stride = 0;
        let nm = monos.len();
        let n = n_paths as f64;
        for node in 0..bundle.grid().n_nodes() {
            // First and second moments of the raw monomials.
            let sums = par::sum_vec(n_paths, 2 * nm, |p, acc| {
                let mut buf = [0.0f64; 64];
                eval_monos(p, node, &mut buf[..nm]);
                for c in 0..nm {
                    acc[c] += buf[c];
                    acc[nm + c] += buf[c] * buf[c];
                }
            });
            let mut keep = Vec::new();
            let mut centers = Vec::new();
            let mut scales = Vec::new();
            for c in 0..nm {
                let mean = sums[c] / n;
                let var = (sums[nm + c] / n - mean * mean).max(0.0);
                let sd = var.sqrt();
                if sd > 1e-10 * (1.0 + mean.abs()) {
                    keep.push(c);
                    centers.push(mean);
                    scales.push(sd);
                }
            }
            let k = 1 + keep.len();
            let mut features = vec![0.0; n_paths * k];
            par::fill_rows(&mut features, k, |p, row| {
                let mut buf = [0.0f64; 64];
                eval_monos(p, node, &mut buf[..nm]);
                row[0] = 1.0;
                for (slot, (&c, (&mu, &sd))) in keep.iter().zip(centers.iter().zip(&scales)).enumerate() {
                    row[slot + 1] = (buf[c] - mu) / sd;
                }
            });
            let gram_sum = par::sum_vec(n_paths, k * k, |p, acc| {
                let row = &features[p * k..(p + 1) * k];
                for a in 0..k {
                    let ra = row[a];
                    for b in 0..=a {
                        acc[a * k + b] += ra * row[b];
                    }
                }
            });
            let mut gram = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..=a {
                    let v = gram_sum[a * k + b] / n;
                    gram[a * k + b] = v;
                    gram[b * k + a] = v;
                }
                if a > 0 {
                    gram[a * k + a] += basis.ridge;
                }
            }
            let chol = linalg::cholesky(&gram, k)
                .ok_or(Error::Conditioning { path: 0, pivot: 0.0 })?;
            nodes.push(NodeDesign {
                k,
                offset: stride,
                chol,
                degenerate: node > 0 && k == 1,
            });
            per_node.push(features);
            stride += k;
        }
        // Path-major layout: every node's features of one path are adjacent.
        let mut features = vec![0.0; n_paths * stride];
        par::fill_rows(&mut features, stride, |p, row| {
            for (nd, f) in nodes.iter().zip(&per_node) {
                row[nd.offset..nd.offset + nd.k].copy_from_slice(&f[p * nd.k..(p + 1) * nd.k]);
            }
        });
        Ok(Regressor {
            basis,
            n_paths,
            stride,
            features,
            nodes,
        })
    }

    pub fn basis(&self) -> RegressionBasis {
        self.basis
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Number of active features (including the constant) at `node`.
    pub fn n_features(&self, node: usize) -> usize {
        self.nodes[node].k
    }

    /// True when every feature at a non-initial node was constant, so that the
    /// projection fell back to the sample mean.
    pub fn is_degenerate(&self, node: usize) -> bool {
        self.nodes[node].degenerate
    }

    pub fn degenerate_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].degenerate).collect()
    }

    #[inline]
    fn row(&self, nd: &NodeDesign, p: usize) -> &[f64] {
        let start = p * self.stride + nd.offset;
        &self.features[start..start + nd.k]
    }

    /// Coefficients of the projection of `value(p)` at `node`.
    pub fn fit<F>(&self, node: usize, value: F) -> Coef
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let nd = &self.nodes[node];
        let k = nd.k;
        let rhs = par::sum_vec(self.n_paths, k, |p, acc| {
            let v = value(p);
            let row = self.row(nd, p);
            for (a, r) in acc.iter_mut().zip(row) {
                *a += r * v;
            }
        });
        let n = self.n_paths as f64;
        let rhs: Vec<f64> = rhs.into_iter().map(|s| s / n).collect();
        linalg::cholesky_solve(&nd.chol, k, &rhs)
    }

    /// Coefficients of several projections in one pass over the paths.
    /// `values(p, out)` writes the value of projection `b` (taken at
    /// `nodes[b]`) into `out[b]`.
    pub fn fit_batch<F>(&self, nodes: &[usize], values: F) -> Vec<Coef>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        // (feature offset in a path row, width, offset in the accumulator)
        let mut layout = Vec::with_capacity(nodes.len());
        let mut dim = 0;
        for &node in nodes {
            let nd = &self.nodes[node];
            layout.push((nd.offset, nd.k, dim));
            dim += nd.k;
        }
        let stride = self.stride;
        let sums = par::sum_vec_scratch(self.n_paths, dim, nodes.len(), |p, vals, acc| {
            values(p, vals);
            let prow = &self.features[p * stride..(p + 1) * stride];
            for (&(fo, k, ao), &v) in layout.iter().zip(vals.iter()) {
                for (a, r) in acc[ao..ao + k].iter_mut().zip(&prow[fo..fo + k]) {
                    *a += r * v;
                }
            }
        });
        let n = self.n_paths as f64;
        nodes
            .iter()
            .zip(&layout)
            .map(|(&node, &(_, k, ao))| {
                let rhs: Vec<f64> = sums[ao..ao + k].iter().map(|s| s / n).collect();
                linalg::cholesky_solve(&self.nodes[node].chol, k, &rhs)
            })
            .collect()
    }

    /// Features of every node on path `p`, concatenated; node `i` starts at
    /// [`Regressor::feature_offset`].
    #[inline]
    pub fn path_features(&self, p: usize) -> &[f64] {
        &self.features[p * self.stride..(p + 1) * self.stride]
    }

    pub fn feature_offset(&self, node: usize) -> usize {
        self.nodes[node].offset
    }

    /// Fitted value on path `p`.
    #[inline]
    pub fn predict(&self, node: usize, coef: &[f64], p: usize) -> f64 {
        let nd = &self.nodes[node];
        self.row(nd, p)
            .iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// Fitted values on all paths.
    pub fn predict_all(&self, node: usize, coef: &[f64]) -> Vec<f64> {
        par::map_paths(self.n_paths, |p| self.predict(node, coef, p))
    }

    /// `E[value | F_{t_node}]` on every path.
    pub fn project<F>(&self, node: usize, value: F) -> Vec<f64>
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let coef = self.fit(node, value);
        self.predict_all(node, &coef)
    }
}

/// `E[values | F_{t_node}]`; node 0 yields the sample mean on every path.
pub fn cond_expect(values: &[f64], node: usize, regressor: &Regressor) -> Result<Vec<f64>> {
    if values.len() != regressor.n_paths() {
        return Err(Error::config("one value per path required"));
    }
    Ok(regressor.project(node, |p| values[p]))
}

/// Martingale density `pi_j` of an `F_T`-measurable value and its reconstruction
/// diagnostics.
#[derive(Debug, Clone)]
pub struct MartingaleDensity {
    /// Row `p`, column `step*dim + k`.
    pub pi: PathArray,
    pub mean: f64,
    /// `Var(values - mean - sum_j pi_j dB_j) / Var(values)` (zero for constant values).
    pub residual_ratio: f64,
}

impl MartingaleDensity {
    #[inline]
    pub fn at(&self, path: usize, step: usize, dim: usize, n_dim: usize) -> f64 {
        self.pi.get(path, step * n_dim + dim)
    }
}

/// `pi_j = E[(values - mean) * dB_j | F_{t_j}] / dt` for every step and coordinate.
pub fn martingale_density(values: &[f64], regressor: &Regressor, bundle: &BrownianBundle) -> Result<MartingaleDensity> {
    let n_paths = bundle.n_paths();
    if values.len() != n_paths {
        return Err(Error::config("one value per path required"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("terminal values must be finite".into()));
    }
    let n = bundle.grid().n_steps();
    let d = bundle.dim();
    let dt = bundle.grid().dt();
    let mean = par::mean(n_paths, |p| values[p]);
    let nodes: Vec<usize> = (0..n * d).map(|c| c / d).collect();
    let coefs = regressor.fit_batch(&nodes, |p, out| {
        let v = (values[p] - mean) / dt;
        for (c, o) in out.iter_mut().enumerate() {
            *o = v * bundle.db(p, c / d, c % d);
        }
    });
    let mut pi = PathArray::zeros(n_paths, n * d);
    par::fill_rows(pi.as_mut_slice(), n * d, |p, row| {
        for (c, r) in row.iter_mut().enumerate() {
            *r = regressor.predict(nodes[c], &coefs[c], p);
        }
    });
    let var = par::mean(n_paths, |p| (values[p] - mean).powi(2));
    let resid = |p: usize| {
        let mut r = values[p] - mean;
        for step in 0..n {
            for k in 0..d {
                r -= pi.get(p, step * d + k) * bundle.db(p, step, k);
            }
        }
        r
    };
    let r_mean = par::mean(n_paths, resid);
    let r_var = par::mean(n_paths, |p| (resid(p) - r_mean).powi(2));
    let residual_ratio = if var > 1e-300 { r_var / var } else { 0.0 };
    Ok(MartingaleDensity {
        pi,
        mean,
        residual_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};

    fn setup(m: usize, n: usize) -> (BrownianBundle, Regressor) {
        let g = make_grid(1.0, n).unwrap();
        let b = sample_brownian(&g, m, 1, 2024).unwrap();
        let r = Regressor::new(&b, RegressionBasis::default()).unwrap();
        (b, r)
    }

    #[test]
    fn monomial_count() {
        assert_eq!(monomials(1, 2).len(), 2);
        assert_eq!(monomials(2, 2).len(), 5);
        assert_eq!(monomials(3, 3).len(), 19);
    }

    #[test]
    fn constants_are_reproduced() {
        let (b, r) = setup(2000, 8);
        let v = vec![3.5; b.n_paths()];
        for node in 0..=8 {
            let f = cond_expect(&v, node, &r).unwrap();
            assert!(f.iter().all(|x| (x - 3.5).abs() < 1e-9));
        }
    }

    #[test]
    fn node_zero_is_sample_mean() {
        let (b, r) = setup(2000, 8);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 8, 0).powi(3)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let f = cond_expect(&v, 0, &r).unwrap();
        assert!(f.iter().all(|x| (x - mean).abs() < 1e-10));
        assert_eq!(r.n_features(0), 1);
        assert!(!r.is_degenerate(0));
    }

    #[test]
    fn terminal_level_projects_to_current_level() {
        let (b, r) = setup(100_000, 16);
        for node in [4, 8, 12] {
            let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 16, 0)).collect();
            let f = cond_expect(&v, node, &r).unwrap();
            let rms = (par::mean(b.n_paths(), |p| (f[p] - b.b(p, node, 0)).powi(2))).sqrt();
            let tol = 3.0 * (1.0 - b.grid().t(node)).sqrt() / (b.n_paths() as f64).sqrt() * 3.0;
            assert!(rms <= tol, "node {node}: rms {rms} > {tol}");
        }
    }

    #[test]
    fn squared_level_conditional_moment() {
        let (b, r) = setup(100_000, 16);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 16, 0).powi(2)).collect();
        for node in [2, 8, 14] {
            let f = cond_expect(&v, node, &r).unwrap();
            let t = b.grid().t(node);
            // Bulk of the distribution; the extreme tails are pure extrapolation.
            let bound = 2.5 * t.sqrt();
            let max_err = (0..b.n_paths())
                .filter(|&p| b.b(p, node, 0).abs() <= bound)
                .map(|p| (f[p] - b.b(p, node, 0).powi(2) - (1.0 - t)).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= 0.05, "node {node}: max err {max_err}");
        }
    }

    #[test]
    fn projection_contracts_variance() {
        let (b, r) = setup(20_000, 8);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| (b.b(p, 8, 0)).sin() + b.b(p, 3, 0)).collect();
        let var = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / x.len() as f64
        };
        for node in 0..=8 {
            let f = cond_expect(&v, node, &r).unwrap();
            assert!(var(&f) <= var(&v) + 1e-12);
        }
    }

    #[test]
    fn tower_property_within_noise() {
        let (b, r) = setup(50_000, 8);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 8, 0).powi(2) + b.b(p, 8, 0)).collect();
        let inner = cond_expect(&v, 6, &r).unwrap();
        let outer = cond_expect(&inner, 3, &r).unwrap();
        let direct = cond_expect(&v, 3, &r).unwrap();
        let sd = (par::mean(b.n_paths(), |p| v[p].powi(2))).sqrt();
        let se = sd / (b.n_paths() as f64).sqrt();
        let rms = par::mean(b.n_paths(), |p| (outer[p] - direct[p]).powi(2)).sqrt();
        assert!(rms <= 3.0 * se, "rms {rms} vs 3 se {}", 3.0 * se);
    }

    #[test]
    fn constant_has_zero_density() {
        let (b, r) = setup(5_000, 8);
        let md = martingale_density(&vec![2.0; b.n_paths()], &r, &b).unwrap();
        assert!(md.pi.as_slice().iter().all(|x| x.abs() < 1e-9));
        assert_eq!(md.residual_ratio, 0.0);
    }

    #[test]
    fn density_of_terminal_level_is_one() {
        let (b, r) = setup(100_000, 32);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 32, 0)).collect();
        let md = martingale_density(&v, &r, &b).unwrap();
        let mad = par::mean(b.n_paths(), |p| {
            (0..32).map(|j| (md.pi.get(p, j) - 1.0).abs()).sum::<f64>() / 32.0
        });
        assert!(mad <= 0.05, "mean abs deviation {mad}");
        assert!(md.residual_ratio <= 0.05);
    }

    #[test]
    fn density_of_squared_level_is_twice_level() {
        let (b, r) = setup(100_000, 32);
        let v: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 32, 0).powi(2)).collect();
        let md = martingale_density(&v, &r, &b).unwrap();
        let mse = par::mean(b.n_paths(), |p| {
            (0..32).map(|j| (md.pi.get(p, j) - 2.0 * b.b(p, j, 0)).powi(2)).sum::<f64>() / 32.0
        });
        assert!(mse.sqrt() <= 0.1, "rms {}", mse.sqrt());
        assert!(md.residual_ratio <= 0.05, "residual {}", md.residual_ratio);
    }

    #[test]
    fn too_many_features_rejected() {
        let g = make_grid(1.0, 4).unwrap();
        let b = sample_brownian(&g, 40, 1, 1).unwrap();
        assert!(Regressor::new(&b, RegressionBasis { degree: 2, ridge: 1e-8 }).is_err());
    }
}
