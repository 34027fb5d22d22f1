//! Adapted M-solutions of backward Volterra equations by regression.
//!
//! Scheme on the grid `t_0..t_N`:
//! `V_i = psi_i + dt sum_{j=i+1..N} g_{ij}(Y_j, Z_{j,i})`, `Y_i = P_i[V_i]`, `Y_N = psi_N`,
//! where `P_i` is the regression projection at node `i`. The sub-diagonal
//! field needed by the driver comes from the M-condition
//! `Z_{j,i} = P_i[(Y_j - E Y_j) dB_i] / dt` (`i < j`); it is refreshed at the
//! start of step `i` from the already computed `Y_j`, so one backward sweep
//! solves the coupled system. The upper field is
//! `Z_{i,j} = P_j[(V_i - Y_i) dB_j] / dt` (`j >= i`).

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::condexp::{Coef, Regressor};
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::forward::ForwardField;
use crate::grid_rng::BrownianBundle;
use crate::par;
use crate::problem::{ProblemSpec, RealizedControl};

/// Driver `g(t_i, t_j, ..., y, z)` on path `p` for `i < j`.
pub trait Driver: Sync {
    fn g(&self, p: usize, i: usize, j: usize, y: f64, z: f64) -> f64;

    /// False when the driver ignores `z`, so the sub-diagonal field is not
    /// needed to advance the scheme.
    fn uses_z(&self) -> bool {
        true
    }
}

/// Driver given by a closure.
pub struct FnDriver<F> {
    f: F,
    uses_z: bool,
}

impl<F> FnDriver<F>
where
    F: Fn(usize, usize, usize, f64, f64) -> f64 + Sync,
{
    pub fn new(f: F, uses_z: bool) -> Self {
        FnDriver { f, uses_z }
    }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(usize, usize, usize, f64, f64) -> f64 + Sync,
{
    #[inline]
    fn g(&self, p: usize, i: usize, j: usize, y: f64, z: f64) -> f64 {
        (self.f)(p, i, j, y, z)
    }

    fn uses_z(&self) -> bool {
        self.uses_z
    }
}

/// Which parts of the `Z` field to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackwardOptions {
    /// Keep the sub-diagonal field even when the driver ignores `z`.
    pub sub_z: bool,
    /// Compute the upper field `Z_{i,j}`, `j >= i`.
    pub upper_z: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            sub_z: true,
            upper_z: false,
        }
    }
}

/// `Y` per path and node; `Z` stored as regression coefficients.
#[derive(Debug, Clone)]
pub struct BackwardField {
    pub y: PathArray,
    regressor: Arc<Regressor>,
    /// `sub[j][i]`, `i < j`: coefficients of `Z_{j,i}` at node `i`.
    sub: Option<Vec<Vec<Coef>>>,
    /// `upper[i][j - i]`, `i <= j < N`: coefficients of `Z_{i,j}` at node `j`.
    upper: Option<Vec<Vec<Coef>>>,
}

impl BackwardField {
    pub fn n_paths(&self) -> usize {
        self.y.n_paths()
    }

    pub fn n_nodes(&self) -> usize {
        self.y.n_cols()
    }

    #[inline]
    pub fn y_at(&self, path: usize, node: usize) -> f64 {
        self.y.get(path, node)
    }

    pub fn regressor(&self) -> &Arc<Regressor> {
        &self.regressor
    }

    pub fn has_sub(&self) -> bool {
        self.sub.is_some()
    }

    pub fn has_upper(&self) -> bool {
        self.upper.is_some()
    }

    /// `Z(t_a, t_b)` on `path`, for `b < N`, `a != b` or `a == b` with the
    /// upper field present (the diagonal belongs to the upper rule).
    pub fn z(&self, path: usize, a: usize, b: usize) -> f64 {
        if b < a {
            let sub = self.sub.as_ref().expect("sub-diagonal Z field not computed");
            self.regressor.predict(b, &sub[a][b], path)
        } else {
            let up = self.upper.as_ref().expect("upper Z field not computed");
            self.regressor.predict(b, &up[a][b - a], path)
        }
    }

    /// `Z(t_a, t_b)` for every `b < a`, written to `out[..a]`.
    pub fn z_sub_row(&self, path: usize, a: usize, out: &mut [f64]) {
        let sub = self.sub.as_ref().expect("sub-diagonal Z field not computed");
        let phi = self.regressor.path_features(path);
        for (b, (o, c)) in out[..a].iter_mut().zip(&sub[a]).enumerate() {
            let fo = self.regressor.feature_offset(b);
            *o = phi[fo..fo + c.len()].iter().zip(c).map(|(x, y)| x * y).sum();
        }
    }

    pub fn y_means(&self) -> Vec<f64> {
        self.y.column_means()
    }

    /// CSV of `Y` with header `path,node,coord,value`.
    pub fn write_y_csv<W: Write>(&self, w: W) -> Result<()> {
        crate::forward::write_node_csv(&self.y, w)
    }

    /// CSV of `Z` on the given paths with header `path,i,j,row,col,value`.
    pub fn write_z_csv<W: Write>(&self, paths: &[usize], mut w: W) -> Result<()> {
        writeln!(w, "path,i,j,row,col,value")?;
        let nn = self.n_nodes();
        for &p in paths {
            for a in 0..nn {
                for b in 0..nn - 1 {
                    let present = if b < a { self.has_sub() } else { self.has_upper() };
                    if present {
                        writeln!(w, "{p},{a},{b},0,0,{:e}", self.z(p, a, b))?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Solves the backward equation with terminal process `psi` (`n_paths x (N+1)`).
pub fn solve_bsvie<D: Driver>(
    driver: &D,
    psi: &PathArray,
    regressor: Arc<Regressor>,
    bundle: &BrownianBundle,
    opts: BackwardOptions,
) -> Result<BackwardField> {
    let grid = bundle.grid();
    let n = grid.n_steps();
    let n_paths = bundle.n_paths();
    if psi.n_paths() != n_paths || psi.n_cols() != n + 1 {
        return Err(Error::config("terminal process does not match the bundle"));
    }
    if regressor.n_paths() != n_paths {
        return Err(Error::config("regressor was built on a different bundle"));
    }
    if let Some((path, node, value)) = psi.first_non_finite() {
        return Err(Error::Divergence { path, node, value });
    }
    let dt = grid.dt();
    let need_sub = driver.uses_z() || opts.sub_z;

    let mut y = PathArray::zeros(n_paths, n + 1);
    y.set_column(n, &psi.column(n));
    let mut y_mean = vec![0.0; n + 1];
    y_mean[n] = y.column_mean(n);
    let mut sub: Vec<Vec<Coef>> = vec![Vec::new(); n + 1];
    let mut upper: Vec<Vec<Coef>> = vec![Vec::new(); n + 1];

    for i in (0..n).rev() {
        // Z_{j,i} for every j > i, from the current Y_j.
        let mut zc: Vec<Coef> = Vec::new();
        if need_sub {
            let yref = &y;
            let ym = &y_mean;
            zc = regressor.fit_batch(&vec![i; n - i], |p, out| {
                let db = bundle.db(p, i, 0) / dt;
                for (o, j) in out.iter_mut().zip(i + 1..=n) {
                    *o = (yref.get(p, j) - ym[j]) * db;
                }
            });
        }
        let yref = &y;
        let reg = regressor.as_ref();
        let (fo, k) = (reg.feature_offset(i), reg.n_features(i));
        let v: Vec<f64> = par::map_paths(n_paths, |p| {
            let phi = &reg.path_features(p)[fo..fo + k];
            let yrow = yref.row(p);
            let mut acc = 0.0;
            for j in i + 1..=n {
                let z = if need_sub {
                    phi.iter().zip(&zc[j - i - 1]).map(|(a, b)| a * b).sum()
                } else {
                    0.0
                };
                acc += driver.g(p, i, j, yrow[j], z);
            }
            psi.get(p, i) + acc * dt
        });
        if let Some(p) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                path: p,
                node: i,
                value: v[p],
            });
        }
        let coef = regressor.fit(i, |p| v[p]);
        let yi = regressor.predict_all(i, &coef);
        if opts.upper_z {
            let nodes: Vec<usize> = (i..n).collect();
            upper[i] = regressor.fit_batch(&nodes, |p, out| {
                let r = (v[p] - yi[p]) / dt;
                for (o, j) in out.iter_mut().zip(i..n) {
                    *o = r * bundle.db(p, j, 0);
                }
            });
        }
        y.set_column(i, &yi);
        y_mean[i] = y.column_mean(i);
        if need_sub {
            for (j, c) in (i + 1..=n).zip(zc) {
                sub[j].push(c);
            }
        }
    }
    // sub[j] was filled for i = j-1 down to 0; store it in increasing i.
    for row in sub.iter_mut() {
        row.reverse();
    }
    if opts.upper_z {
        upper.truncate(n);
    }
    Ok(BackwardField {
        y,
        regressor,
        sub: need_sub.then_some(sub),
        upper: opts.upper_z.then_some(upper),
    })
}

/// The problem's driver `g(t_i, t_j, X_j, y, z, u_{j-1})` along a solved
/// forward field. The control of the interval ending at `t_j` is used.
pub struct ProblemDriver<'a> {
    spec: &'a ProblemSpec,
    forward: &'a ForwardField,
    ctrl: &'a RealizedControl,
    times: Vec<f64>,
}

impl<'a> ProblemDriver<'a> {
    pub fn new(spec: &'a ProblemSpec, forward: &'a ForwardField, ctrl: &'a RealizedControl, bundle: &BrownianBundle) -> Self {
        ProblemDriver {
            spec,
            forward,
            ctrl,
            times: bundle.grid().nodes(),
        }
    }
}

impl Driver for ProblemDriver<'_> {
    #[inline]
    fn g(&self, p: usize, i: usize, j: usize, y: f64, z: f64) -> f64 {
        self.spec
            .model
            .g(self.times[i], self.times[j], self.forward.at(p, j), y, z, self.ctrl.u.get(p, j - 1))
            .v
    }
}

/// Backward part of the controlled system.
pub fn solve_backward(
    spec: &ProblemSpec,
    ctrl: &RealizedControl,
    forward: &ForwardField,
    regressor: Arc<Regressor>,
    bundle: &BrownianBundle,
    opts: BackwardOptions,
) -> Result<BackwardField> {
    let driver = ProblemDriver::new(spec, forward, ctrl, bundle);
    solve_bsvie(&driver, &ctrl.psi, regressor, bundle, opts)
}

/// `r_i = mean |Y_i - E Y_i - sum_{j<i} Z_{i,j} dB_j|^2 / Var Y_i`, with `r_i = 0`
/// when `Var Y_i <= 1e-12`.
pub fn mcondition_residual(field: &BackwardField, bundle: &BrownianBundle) -> Result<Vec<f64>> {
    const FLOOR: f64 = 1e-12;
    if field.n_paths() == 0 || field.n_nodes() == 0 {
        return Err(Error::Precondition("empty backward field".into()));
    }
    if !field.has_sub() {
        return Err(Error::Precondition("sub-diagonal Z field was not computed".into()));
    }
    let n_paths = field.n_paths();
    let means = field.y_means();
    Ok((0..field.n_nodes())
        .map(|i| {
            let var = par::mean(n_paths, |p| (field.y_at(p, i) - means[i]).powi(2));
            let resid = par::mean(n_paths, |p| {
                let mut r = field.y_at(p, i) - means[i];
                for j in 0..i {
                    r -= field.z(p, i, j) * bundle.db(p, j, 0);
                }
                r * r
            });
            if var <= FLOOR {
                0.0
            } else {
                resid / var
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
