//! Forward Volterra equations: the controlled state equation and per-path
//! linear systems.

mod linear;

use std::io::Write;

pub use linear::{solve_linear_svie, solve_linear_svie_with, Kernel, KernelForm, LinearKernelSpec, LinearMethod};

use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::BrownianBundle;
use crate::problem::{ProblemSpec, RealizedControl, UpperLimit};

/// `X[path][node]` for nodes `0..=N`.
#[derive(Debug, Clone)]
pub struct ForwardField {
    pub x: PathArray,
}

impl ForwardField {
    #[inline]
    pub fn at(&self, path: usize, node: usize) -> f64 {
        self.x.get(path, node)
    }

    pub fn n_paths(&self) -> usize {
        self.x.n_paths()
    }

    pub fn n_nodes(&self) -> usize {
        self.x.n_cols()
    }

    /// CSV with header `path,node,coord,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_node_csv(&self.x, w)
    }

    pub(crate) fn check_finite(x: PathArray) -> Result<Self> {
        match x.first_non_finite() {
            Some((path, node, value)) => Err(Error::Divergence { path, node, value }),
            None => Ok(ForwardField { x }),
        }
    }
}

pub(crate) fn write_node_csv<W: Write>(a: &PathArray, mut w: W) -> Result<()> {
    writeln!(w, "path,node,coord,value")?;
    for p in 0..a.n_paths() {
        for (i, v) in a.row(p).iter().enumerate() {
            writeln!(w, "{p},{i},0,{v:e}")?;
        }
    }
    Ok(())
}

/// Left-point Euler scheme
/// `X_i = f(t_i) + sum_{j<i} b(t_i, t_j, X_j, u_j) dt + sum_j sigma(t_i, t_j, X_j, u_j) dB_j`,
/// where the stochastic sum runs over `j < i`, or over every step when the
/// problem's forward limit is `T`.
pub fn solve_fsvie(spec: &ProblemSpec, ctrl: &RealizedControl, bundle: &BrownianBundle) -> Result<ForwardField> {
    let grid = bundle.grid();
    spec.check_grid(grid)?;
    if spec.forward_limit == UpperLimit::Horizon && !spec.model.sigma_state_free() {
        return Err(Error::config(
            "forward upper limit T requires a diffusion that does not depend on the state",
        ));
    }
    let n = grid.n_steps();
    if ctrl.u.n_paths() != bundle.n_paths() || ctrl.u.n_cols() != n {
        return Err(Error::config("realized control does not match the bundle"));
    }
    let dt = grid.dt();
    let model = spec.model.as_ref();
    let full = spec.forward_limit == UpperLimit::Horizon;
    let times = grid.nodes();
    let x = PathArray::from_fn(bundle.n_paths(), n + 1, |p, row| {
        let u = ctrl.u.row(p);
        for i in 0..=n {
            let ti = times[i];
            let mut acc = model.f(ti);
            for j in 0..i {
                let tj = times[j];
                acc += model.b(ti, tj, row[j], u[j]).v * dt;
                acc += model.sigma(ti, tj, row[j], u[j]).v * bundle.db(p, j, 0);
            }
            if full {
                for j in i..n {
                    acc += model.sigma(ti, times[j], 0.0, u[j]).v * bundle.db(p, j, 0);
                }
            }
            row[i] = acc;
        }
    });
    ForwardField::check_finite(x)
}
