use serde::{Deserialize, Serialize};

use super::LinearFunctional;
use crate::backward::{solve_bsvie, BackwardField, BackwardOptions, FnDriver};
use crate::condexp::{martingale_density, Coef, MartingaleDensity};
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::BrownianBundle;
use crate::par;
use crate::problem::{ControlPair, ProblemSpec, UpperLimit};
use crate::system::Trajectory;

/// How the forward-state adjoint enters the control gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// Through the adapted pair `(m, n)` and the density `pi` of the terminal weight.
    Adapted,
    /// Through the path-wise anticipating adjoint of the discrete forward recursion.
    Pathwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjointOptions {
    /// Upper limit of the `ds` term in the `p` equation.
    pub p_limit: UpperLimit,
    pub assembly: Assembly,
    /// Fixed-point sweeps for the `T`-limit variant.
    pub max_sweeps: usize,
    pub tol: f64,
    /// Solve `(m, n)` even when the path-wise assembly does not need it.
    pub forward_pair: bool,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        AdjointOptions {
            p_limit: UpperLimit::Running,
            assembly: Assembly::Pathwise,
            max_sweeps: 100,
            tol: 1e-10,
            forward_pair: true,
        }
    }
}

/// Gradient densities: `dL = dt sum_i E[psi_i dpsi_i] + dt sum_k E[u_k du_k]`.
#[derive(Debug, Clone)]
pub struct Gradient {
    /// `n_paths x (N+1)`.
    pub psi: PathArray,
    /// `n_paths x N`.
    pub u: PathArray,
    pub dt: f64,
}

impl Gradient {
    pub fn mean_psi(&self) -> Vec<f64> {
        self.psi.column_means()
    }

    pub fn mean_u(&self) -> Vec<f64> {
        self.u.column_means()
    }
}

/// Adjoint processes at a starred trajectory.
#[derive(Debug, Clone)]
pub struct AdjointField {
    /// `p / dt`, the density of the backward-state adjoint.
    pub p: PathArray,
    /// `E[p_i | F_{t_i}] / dt`.
    pub p_proj: PathArray,
    /// `(m, n)`; `m.z(path, i, j)` with `j < i` is `n(t_i, t_j)`. Absent when
    /// the path-wise assembly runs with `forward_pair` off.
    pub m: Option<BackwardField>,
    /// `A(t_j)` for `j < N`; column `N` holds the terminal weight.
    pub a_src: PathArray,
    /// `B(t_j)`.
    pub b_src: PathArray,
    pub pi: MartingaleDensity,
    /// Path-wise adjoint, when requested.
    pub mu: Option<PathArray>,
    pub gradient: Gradient,
    pub functional: LinearFunctional,
    pub options: AdjointOptions,
    /// Fixed-point sweeps used by the `p` equation.
    pub sweeps: usize,
}

/// Solves the adjoint system of `lf` at `star` and assembles the gradient.
pub fn solve_adjoint(
    spec: &ProblemSpec,
    star: &Trajectory,
    lf: &LinearFunctional,
    bundle: &BrownianBundle,
    opts: AdjointOptions,
) -> Result<AdjointField> {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let mp = bundle.n_paths();
    let model = spec.model.as_ref();
    let x = &star.forward;
    let u = &star.realized.u;
    let bw = &star.backward;
    let reg = bw.regressor().clone();
    let w = grid.left_weights();
    let kw = spec.k_weights.weights(&grid);
    let times = grid.nodes();
    let t = |i: usize| times[i];
    let fredholm = opts.p_limit == UpperLimit::Horizon;
    if !bw.has_sub() {
        return Err(Error::Precondition("starred backward field lacks Z".into()));
    }

    let mut pi = PathArray::zeros(mp, n + 1);
    let mut pit = PathArray::zeros(mp, n + 1);
    let mut a = PathArray::zeros(mp, n + 1);
    let mut b_src = PathArray::zeros(mp, n + 1);
    // Driver, l1 and l2 parts of the control gradient, filled by the last sweep.
    let mut gu_local = PathArray::zeros(mp, n);
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let prev = pit.clone();
        for j in 0..=n {
            let width = j + 5;
            let mut buf = PathArray::zeros(mp, width);
            let cur = &pit;
            par::fill_rows(buf.as_mut_slice(), width, |p, row| {
                // Z_{j,i} parked in the row before it is overwritten.
                bw.z_sub_row(p, j, row);
                let xj = x.at(p, j);
                let yj = bw.y_at(p, j);
                let mut drift = 0.0;
                let mut l2y = 0.0;
                let mut ax = 0.0;
                let mut gu_prev = 0.0;
                for i in 0..j {
                    let zji = row[i];
                    let g = model.g(t(i), t(j), xj, yj, zji, u.get(p, j - 1));
                    let pi_i = cur.get(p, i);
                    let mut zeta = g.z * pi_i;
                    drift += g.y * pi_i * dt;
                    ax += g.x * pi_i;
                    gu_prev += g.u * pi_i;
                    if lf.w_l2 != 0.0 {
                        let l = model.l2(t(i), t(j), xj, yj, zji, u.get(p, j - 1));
                        zeta += lf.w_l2 * l.z;
                        l2y += l.y;
                        ax += lf.w_l2 * l.x;
                        gu_prev += lf.w_l2 * l.u;
                    }
                    row[i] = zeta;
                }
                if fredholm {
                    let uj = u.get(p, j.max(1) - 1);
                    for i in j..n {
                        drift += model.g(t(i), t(j), xj, yj, 0.0, uj).y * prev.get(p, i) * dt;
                    }
                }
                let mut l1x = 0.0;
                let mut l1u = 0.0;
                if lf.w_l1 != 0.0 && j < n {
                    for i in j + 1..n {
                        let l = model.l1(t(i), t(j), xj, u.get(p, j));
                        l1x += l.x;
                        l1u += l.u;
                    }
                }
                let alpha = lf.w_k * kw[j] * model.k(yj).d / dt + lf.constraint_weight(j, w[j], dt) / dt + lf.w_l2 * dt * l2y;
                row[j] = alpha;
                row[j + 1] = drift;
                row[j + 2] = dt * dt * ax + lf.w_l1 * dt * dt * l1x;
                row[j + 3] = dt * gu_prev;
                row[j + 4] = lf.w_l1 * dt * l1u;
            });
            let nodes: Vec<usize> = (0..j).collect();
            let coefs: Vec<Coef> = reg.fit_batch(&nodes, |p, out| out.copy_from_slice(&buf.row(p)[..j]));
            let noise: Vec<f64> = par::map_paths(mp, |p| {
                let phi = reg.path_features(p);
                let db = bundle.increments().row(p);
                let dim = bundle.dim();
                let mut acc = 0.0;
                for (i, c) in coefs.iter().enumerate() {
                    let fo = reg.feature_offset(i);
                    let z: f64 = phi[fo..fo + c.len()].iter().zip(c).map(|(a, b)| a * b).sum();
                    acc += z * db[i * dim];
                }
                acc
            });
            let noise_mean = par::mean(mp, |p| noise[p]);
            let col: Vec<f64> = (0..mp).map(|p| buf.get(p, j) + buf.get(p, j + 1) + noise[p] - noise_mean).collect();
            let proj = if j < n { reg.project(j, |p| col[p]) } else { col.clone() };
            for p in 0..mp {
                b_src.set(p, j, buf.get(p, j));
                a.set(p, j, buf.get(p, j + 2));
                if j > 0 {
                    gu_local.set(p, j - 1, gu_local.get(p, j - 1) + buf.get(p, j + 3));
                }
                if j < n {
                    gu_local.set(p, j, buf.get(p, j + 4));
                }
            }
            pi.set_column(j, &col);
            pit.set_column(j, &proj);
        }
        if let Some((path, node, value)) = pi.first_non_finite() {
            return Err(Error::Divergence { path, node, value });
        }
        if !fredholm {
            break;
        }
        let scale = pit.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let change = pit.as_slice().iter().zip(prev.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if change <= opts.tol * scale {
            break;
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::Convergence {
                iterations: sweeps,
                detail: format!("p equation with limit T: last change {change:e}"),
            });
        }
    }

    // Terminal weight of the forward adjoint.
    let term: Vec<f64> = (0..mp).map(|p| a.get(p, n) + lf.w_h * model.h(x.at(p, n)).d).collect();
    let dens = martingale_density(&term, &reg, bundle)?;
    let mut a_src = PathArray::zeros(mp, n + 1);
    par::fill_rows(a_src.as_mut_slice(), n + 1, |p, row| {
        for j in 0..n {
            let c = model.b(t(n), t(j), x.at(p, j), u.get(p, j));
            let s = model.sigma(t(n), t(j), x.at(p, j), u.get(p, j));
            row[j] = a.get(p, j) / dt + c.x * term[p] + s.x * dens.at(p, j, 0, 1);
        }
        row[n] = term[p];
    });
    let mut m_terminal = a_src.clone();
    for p in 0..mp {
        m_terminal.set(p, n, 0.0);
    }
    let horizon = spec.forward_limit == UpperLimit::Horizon;
    let driver = FnDriver::new(
        |p: usize, i: usize, j: usize, y: f64, z: f64| {
            if j == n {
                return 0.0;
            }
            let c = model.b(t(j), t(i), x.at(p, i), u.get(p, i));
            let s = model.sigma(t(j), t(i), x.at(p, i), u.get(p, i));
            c.x * y + s.x * z
        },
        true,
    );
    let need_m = opts.forward_pair || opts.assembly == Assembly::Adapted;
    let m = if need_m {
        Some(solve_bsvie(&driver, &m_terminal, reg.clone(), bundle, BackwardOptions { sub_z: true, upper_z: horizon })?)
    } else {
        None
    };

    let psi = &star.realized.psi;
    let mut g_psi = PathArray::zeros(mp, n + 1);
    par::fill_rows(g_psi.as_mut_slice(), n + 1, |p, row| {
        for i in 0..=n {
            row[i] = pit.get(p, i) + lf.w_q * model.q(psi.get(p, i)).d * w[i] / dt;
        }
    });

    let mut g_u = gu_local;
    let mu = match opts.assembly {
        Assembly::Pathwise => {
            // Row layout: mu over nodes 0..=N, then the forward-state part of G_u.
            let width = 2 * n + 1;
            let mut both = PathArray::zeros(mp, width);
            par::fill_rows(both.as_mut_slice(), width, |p, row| {
                let (mu, gu) = row.split_at_mut(n + 1);
                mu[n] = term[p];
                for k in (0..n).rev() {
                    let (xk, uk) = (x.at(p, k), u.get(p, k));
                    let db = bundle.db(p, k, 0);
                    let mut acc = a.get(p, k);
                    let mut s = 0.0;
                    for i in k + 1..=n {
                        let c = model.b(t(i), t(k), xk, uk);
                        let sg = model.sigma(t(i), t(k), xk, uk);
                        acc += (c.x * dt + sg.x * db) * mu[i];
                        s += mu[i] * (c.u + sg.u * db / dt);
                    }
                    mu[k] = acc;
                    gu[k] = s;
                }
                if horizon {
                    for k in 0..n {
                        let db = bundle.db(p, k, 0) / dt;
                        for i in 0..=k {
                            gu[k] += mu[i] * model.sigma(t(i), t(k), 0.0, u.get(p, k)).u * db;
                        }
                    }
                }
            });
            let mut mu = PathArray::zeros(mp, n + 1);
            for p in 0..mp {
                let row = both.row(p);
                mu.row_mut(p).copy_from_slice(&row[..n + 1]);
                for (g, v) in g_u.row_mut(p).iter_mut().zip(&row[n + 1..]) {
                    *g += v;
                }
            }
            Some(mu)
        }
        Assembly::Adapted => {
            let m = m.as_ref().expect("adapted assembly always solves (m, n)");
            par::fill_rows(g_u.as_mut_slice(), n, |p, row| {
                for k in 0..n {
                    let (xk, uk) = (x.at(p, k), u.get(p, k));
                    let c = model.b(t(n), t(k), xk, uk);
                    let sg = model.sigma(t(n), t(k), xk, uk);
                    let mut s = term[p] * c.u + dens.at(p, k, 0, 1) * sg.u;
                    for i in k + 1..n {
                        let c = model.b(t(i), t(k), xk, uk);
                        let sg = model.sigma(t(i), t(k), xk, uk);
                        s += dt * (c.u * m.y_at(p, i) + sg.u * m.z(p, i, k));
                    }
                    if horizon {
                        for i in 0..=k {
                            s += dt * model.sigma(t(i), t(k), 0.0, uk).u * m.z(p, i, k);
                        }
                    }
                    row[k] += s;
                }
            });
            None
        }
    };
    if let Some((path, node, value)) = g_u.first_non_finite() {
        return Err(Error::Divergence { path, node, value });
    }

    Ok(AdjointField {
        p: pi,
        p_proj: pit,
        m,
        a_src,
        b_src,
        pi: dens,
        mu,
        gradient: Gradient { psi: g_psi, u: g_u, dt },
        functional: lf.clone(),
        options: opts,
        sweeps,
    })
}

/// `dt sum_i E[G_psi(i) dpsi_i] + dt sum_k E[G_u(k) du_k]` along `dir`.
pub fn directional_derivative(grad: &Gradient, dir: &ControlPair, bundle: &BrownianBundle) -> Result<f64> {
    let d = dir.realize(bundle, None)?;
    let dt = grad.dt;
    let n = grad.u.n_cols();
    Ok(par::mean(bundle.n_paths(), |p| {
        let mut s = 0.0;
        for i in 0..=n {
            s += grad.psi.get(p, i) * d.psi.get(p, i);
        }
        for k in 0..n {
            s += grad.u.get(p, k) * d.u.get(p, k);
        }
        s * dt
    }))
}
