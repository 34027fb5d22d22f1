use serde::{Deserialize, Serialize};

use super::sets::AdmissibleSets;
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::{BrownianBundle, TimeGrid};
use crate::par;

/// Decision variable `(psi, u)`.
///
/// `u_j` acts on `[t_j, t_{j+1})` for `j = 0..N`; `psi_i` is given on every
/// node `i = 0..=N`. Optional feedback adds `u_fb[j] * B(t_j)` to the control
/// and `psi_fb[i] . (B(T), B(T)^2 - T)` to the terminal process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub u: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_fb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_fb: Option<Vec<[f64; 2]>>,
}

/// Per-path realization of a [`ControlPair`] after clipping to the boxes.
#[derive(Debug, Clone)]
pub struct RealizedControl {
    /// `n_paths x N`.
    pub u: PathArray,
    /// `n_paths x (N+1)`.
    pub psi: PathArray,
    /// True when some realized value had to be clipped.
    pub clipped: bool,
}

impl ControlPair {
    pub fn constant(grid: &TimeGrid, u: f64, psi: f64) -> Self {
        ControlPair {
            u: vec![u; grid.n_steps()],
            psi: vec![psi; grid.n_nodes()],
            u_fb: None,
            psi_fb: None,
        }
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        let n = grid.n_steps();
        let ok = self.u.len() == n
            && self.psi.len() == n + 1
            && self.u_fb.as_ref().is_none_or(|v| v.len() == n)
            && self.psi_fb.as_ref().is_none_or(|v| v.len() == n + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "control pair does not match a grid with {n} steps"
            )))
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.u_fb.is_none() && self.psi_fb.is_none()
    }

    /// Projects the deterministic baselines onto the boxes.
    pub fn project(&self, sets: &AdmissibleSets) -> Self {
        let mut out = self.clone();
        out.u.iter_mut().for_each(|v| *v = sets.control.project(*v));
        out.psi.iter_mut().for_each(|v| *v = sets.terminal.project(*v));
        out
    }

    /// `self + a * dir` on every stored parameter.
    pub fn axpy(&self, a: f64, dir: &ControlPair) -> Self {
        fn add(x: &[f64], y: &[f64], a: f64) -> Vec<f64> {
            x.iter().zip(y).map(|(p, q)| p + a * q).collect()
        }
        let u_fb = match (&self.u_fb, &dir.u_fb) {
            (Some(x), Some(y)) => Some(add(x, y, a)),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(y.iter().map(|q| a * q).collect()),
            (None, None) => None,
        };
        let scale = |v: &[[f64; 2]], s: f64| v.iter().map(|c| [c[0] * s, c[1] * s]).collect::<Vec<_>>();
        let psi_fb = match (&self.psi_fb, &dir.psi_fb) {
            (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| [p[0] + a * q[0], p[1] + a * q[1]]).collect()),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(scale(y, a)),
            (None, None) => None,
        };
        ControlPair {
            u: add(&self.u, &dir.u, a),
            psi: add(&self.psi, &dir.psi, a),
            u_fb,
            psi_fb,
        }
    }

    /// `self - other`.
    pub fn difference(&self, other: &ControlPair) -> Self {
        self.axpy(-1.0, other)
    }

    /// Realizes the pair on every path. With `sets = None` no clipping is
    /// applied (used for directions).
    pub fn realize(&self, bundle: &BrownianBundle, sets: Option<&AdmissibleSets>) -> Result<RealizedControl> {
        let grid = bundle.grid();
        self.check_grid(grid)?;
        let n = grid.n_steps();
        let horizon = grid.horizon();
        let m = bundle.n_paths();
        let (ku, kp) = match sets {
            Some(s) => (s.control, s.terminal),
            None => (super::Interval::unbounded(), super::Interval::unbounded()),
        };
        let u = PathArray::from_fn(m, n, |p, row| {
            for (j, slot) in row.iter_mut().enumerate() {
                let mut v = self.u[j];
                if let Some(fb) = &self.u_fb {
                    v += fb[j] * bundle.b(p, j, 0);
                }
                *slot = ku.project(v);
            }
        });
        let psi = PathArray::from_fn(m, n + 1, |p, row| {
            let bt = bundle.b(p, n, 0);
            for (i, slot) in row.iter_mut().enumerate() {
                let mut v = self.psi[i];
                if let Some(fb) = &self.psi_fb {
                    v += fb[i][0] * bt + fb[i][1] * (bt * bt - horizon);
                }
                *slot = kp.project(v);
            }
        });
        let clipped = if sets.is_some() {
            let raw = self.realize(bundle, None)?;
            raw.u.as_slice() != u.as_slice() || raw.psi.as_slice() != psi.as_slice()
        } else {
            false
        };
        Ok(RealizedControl { u, psi, clipped })
    }
}

/// `sqrt(E int |psi1 - psi2|^2 dt + E int |u1 - u2|^2 dt)` with left-point
/// quadrature, realized without clipping.
pub fn control_metric(p1: &ControlPair, p2: &ControlPair, grid: &TimeGrid, bundle: &BrownianBundle) -> Result<f64> {
    if bundle.grid() != grid {
        return Err(Error::config("bundle grid differs from the metric grid"));
    }
    p1.check_grid(grid)?;
    p2.check_grid(grid)?;
    let dt = grid.dt();
    let n = grid.n_steps();
    if p1.is_deterministic() && p2.is_deterministic() {
        let s: f64 = (0..n)
            .map(|i| (p1.psi[i] - p2.psi[i]).powi(2) + (p1.u[i] - p2.u[i]).powi(2))
            .sum();
        return Ok((s * dt).sqrt());
    }
    let a = p1.realize(bundle, None)?;
    let b = p2.realize(bundle, None)?;
    let s = par::mean(bundle.n_paths(), |p| {
        (0..n)
            .map(|i| (a.psi.get(p, i) - b.psi.get(p, i)).powi(2) + (a.u.get(p, i) - b.u.get(p, i)).powi(2))
            .sum::<f64>()
    });
    Ok((s * dt).sqrt())
}
