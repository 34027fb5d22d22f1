use serde::{Deserialize, Serialize};

use super::LinearFunctional;
use crate::backward::{solve_bsvie, BackwardField, BackwardOptions, FnDriver};
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::BrownianBundle;
use crate::par;
use crate::problem::{ControlPair, ProblemSpec, UpperLimit};
use crate::system::{Solver, Trajectory};

/// First-order response `(dX, dY, dZ)` to a direction `(dpsi, du)`.
#[derive(Debug, Clone)]
pub struct VariationField {
    pub dx: PathArray,
    /// `dY` and `dZ`.
    pub dy: BackwardField,
    pub du: PathArray,
    pub dpsi: PathArray,
}

/// Linearizes the discrete system at `star` and solves it along `dir`.
/// Coefficients are frozen on the starred trajectory and the starred
/// regression design is reused, so the result is the exact derivative of the
/// discrete scheme.
pub fn solve_variation(spec: &ProblemSpec, star: &Trajectory, dir: &ControlPair, bundle: &BrownianBundle) -> Result<VariationField> {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let model = spec.model.as_ref();
    let d = dir.realize(bundle, None)?;
    let (du, dpsi) = (d.u, d.psi);
    let x = &star.forward;
    let u = &star.realized.u;
    let full = spec.forward_limit == UpperLimit::Horizon;
    let times = grid.nodes();

    let dx = PathArray::from_fn(bundle.n_paths(), n + 1, |p, row| {
        for i in 0..=n {
            let ti = times[i];
            let mut acc = 0.0;
            for j in 0..i {
                let tj = times[j];
                let b = model.b(ti, tj, x.at(p, j), u.get(p, j));
                let s = model.sigma(ti, tj, x.at(p, j), u.get(p, j));
                acc += (b.x * row[j] + b.u * du.get(p, j)) * dt;
                acc += (s.x * row[j] + s.u * du.get(p, j)) * bundle.db(p, j, 0);
            }
            if full {
                for j in i..n {
                    let s = model.sigma(ti, times[j], 0.0, u.get(p, j));
                    acc += s.u * du.get(p, j) * bundle.db(p, j, 0);
                }
            }
            row[i] = acc;
        }
    });
    if let Some((path, node, value)) = dx.first_non_finite() {
        return Err(Error::Divergence { path, node, value });
    }

    let bw = &star.backward;
    let driver = FnDriver::new(
        |p: usize, i: usize, j: usize, y: f64, z: f64| {
            let g = model.g(times[i], times[j], x.at(p, j), bw.y_at(p, j), bw.z(p, j, i), u.get(p, j - 1));
            g.x * dx.get(p, j) + g.y * y + g.z * z + g.u * du.get(p, j - 1)
        },
        true,
    );
    let opts = BackwardOptions { sub_z: true, upper_z: false };
    let dy = solve_bsvie(&driver, &dpsi, bw.regressor().clone(), bundle, opts)?;
    Ok(VariationField { dx, dy, du, dpsi })
}

/// Derivative of the functional along the variation, assembled from
/// `(dX, dY, dZ)` with the cost quadratures.
pub fn apply_functional(spec: &ProblemSpec, star: &Trajectory, var: &VariationField, lf: &LinearFunctional, bundle: &BrownianBundle) -> f64 {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let w = grid.left_weights();
    let kw = spec.k_weights.weights(&grid);
    let model = spec.model.as_ref();
    let x = &star.forward;
    let u = &star.realized.u;
    let psi = &star.realized.psi;
    let bw = &star.backward;
    par::mean(bundle.n_paths(), |p| {
        let mut acc = 0.0;
        for i in 0..=n {
            acc += lf.w_q * w[i] * model.q(psi.get(p, i)).d * var.dpsi.get(p, i);
            acc += (lf.w_k * kw[i] * model.k(bw.y_at(p, i)).d + lf.constraint_weight(i, w[i], dt)) * var.dy.y_at(p, i);
        }
        acc += lf.w_h * model.h(x.at(p, n)).d * var.dx.get(p, n);
        if lf.w_l1 != 0.0 {
            for i in 0..n {
                for j in 0..i {
                    let l = model.l1(grid.t(i), grid.t(j), x.at(p, j), u.get(p, j));
                    acc += lf.w_l1 * dt * dt * (l.x * var.dx.get(p, j) + l.u * var.du.get(p, j));
                }
            }
        }
        if lf.w_l2 != 0.0 {
            for i in 0..n {
                for j in i + 1..=n {
                    let l = model.l2(grid.t(i), grid.t(j), x.at(p, j), bw.y_at(p, j), bw.z(p, j, i), u.get(p, j - 1));
                    acc += lf.w_l2
                        * dt
                        * dt
                        * (l.x * var.dx.get(p, j) + l.y * var.dy.y_at(p, j) + l.z * var.dy.z(p, j, i) + l.u * var.du.get(p, j - 1));
                }
            }
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateauxReport {
    pub problem: String,
    pub p_list: Vec<f64>,
    /// `E int |X~^p|^2 dt` per `p`.
    pub x: Vec<f64>,
    /// `E int |Y~^p|^2 dt` per `p`.
    pub y: Vec<f64>,
    /// `E int int_{s>t} |Z~^p(s, t)|^2 ds dt` per `p`.
    pub z: Vec<f64>,
    /// Residual ratios between consecutive `p`, per norm `[x, y, z]`.
    pub ratios: Vec<[f64; 3]>,
    /// Empirical decay orders `log(r_k / r_{k+1}) / log(p_k / p_{k+1})`.
    pub orders: Vec<[f64; 3]>,
    /// True where the perturbed control had to be projected or clipped.
    pub projected: Vec<bool>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

/// Remainders `(S^p - S*)/p - dS` of the perturbed states against the
/// variation, for each `p` in `p_list`.
pub fn gateaux_check(solver: &Solver, star: &Trajectory, dir: &ControlPair, p_list: &[f64]) -> Result<GateauxReport> {
    if p_list.is_empty() || p_list.iter().any(|&p| !(p > 0.0)) || p_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("p_list must be positive and strictly decreasing"));
    }
    let spec = solver.spec;
    let bundle = solver.bundle;
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let var = solve_variation(spec, star, dir, bundle)?;
    let mut report = GateauxReport {
        problem: spec.name.clone(),
        p_list: p_list.to_vec(),
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        ratios: Vec::new(),
        orders: Vec::new(),
        projected: Vec::new(),
        n_paths: bundle.n_paths(),
        n_steps: n,
        seed: bundle.seed(),
    };
    for &h in p_list {
        let raw = star.ctrl.axpy(h, dir);
        let ctrl = raw.project(&spec.sets);
        let pert = solver.solve(&ctrl)?;
        report.projected.push(ctrl != raw || pert.realized.clipped);
        let m = bundle.n_paths();
        let sx = par::mean(m, |p| {
            (0..n)
                .map(|i| ((pert.forward.at(p, i) - star.forward.at(p, i)) / h - var.dx.get(p, i)).powi(2))
                .sum::<f64>()
                * dt
        });
        let sy = par::mean(m, |p| {
            (0..n)
                .map(|i| ((pert.backward.y_at(p, i) - star.backward.y_at(p, i)) / h - var.dy.y_at(p, i)).powi(2))
                .sum::<f64>()
                * dt
        });
        let sz = par::mean(m, |p| {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..=n {
                    let r = (pert.backward.z(p, j, i) - star.backward.z(p, j, i)) / h - var.dy.z(p, j, i);
                    s += r * r;
                }
            }
            s * dt * dt
        });
        report.x.push(sx);
        report.y.push(sy);
        report.z.push(sz);
    }
    for k in 1..p_list.len() {
        let ratio = |v: &[f64]| if v[k - 1] > 0.0 { v[k] / v[k - 1] } else { 0.0 };
        let r = [ratio(&report.x), ratio(&report.y), ratio(&report.z)];
        let lp = (p_list[k - 1] / p_list[k]).ln();
        let order = |v: &[f64]| {
            if v[k] > 0.0 && v[k - 1] > 0.0 {
                (v[k - 1] / v[k]).ln() / lp
            } else {
                f64::INFINITY
            }
        };
        report.ratios.push(r);
        report.orders.push([order(&report.x), order(&report.y), order(&report.z)]);
    }
    Ok(report)
}
