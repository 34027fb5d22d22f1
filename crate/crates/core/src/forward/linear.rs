use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ForwardField;
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::grid_rng::{BrownianBundle, TimeGrid};
use crate::linalg;
use crate::par;
use crate::problem::UpperLimit;

/// Deterministic kernel `A(t, s)`.
pub type Kernel = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Argument order of the kernels in the equation for `xi(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelForm {
    /// `A(t, s) xi(s)`.
    Direct,
    /// `A(s, t) xi(s)`.
    Transposed,
}

/// `xi(t) = phi(t) + int_0^{t or T} A0 xi(s) ds + int_0^t A1 xi(s) dB(s)`.
#[derive(Clone)]
pub struct LinearKernelSpec {
    pub a0: Kernel,
    /// `None` when the diffusion kernel vanishes.
    pub a1: Option<Kernel>,
    pub phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub form: KernelForm,
    pub limit: UpperLimit,
    /// Declared bound on `|A0|` and `|A1|`.
    pub bound: f64,
}

impl fmt::Debug for LinearKernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearKernelSpec")
            .field("form", &self.form)
            .field("limit", &self.limit)
            .field("bound", &self.bound)
            .field("diffusion", &self.a1.is_some())
            .finish()
    }
}

impl LinearKernelSpec {
    /// `A_k(t, s) = alpha_k + beta_k t s` with free term `phi`.
    pub fn bilinear(alpha: [f64; 2], beta: [f64; 2], phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>, horizon: f64) -> Self {
        let (a0, b0) = (alpha[0], beta[0]);
        let (a1, b1) = (alpha[1], beta[1]);
        let t2 = horizon * horizon;
        let bound = (a0.abs() + b0.abs() * t2).max(a1.abs() + b1.abs() * t2);
        LinearKernelSpec {
            a0: Arc::new(move |t, s| a0 + b0 * t * s),
            a1: if a1 == 0.0 && b1 == 0.0 {
                None
            } else {
                Some(Arc::new(move |t, s| a1 + b1 * t * s))
            },
            phi,
            form: KernelForm::Direct,
            limit: UpperLimit::Running,
            bound,
        }
    }

    /// Constant kernels and constant free term.
    pub fn constant(a0: f64, a1: f64, phi: f64) -> Self {
        Self::bilinear([a0, a1], [0.0, 0.0], Arc::new(move |_| phi), 1.0)
    }

    pub fn with_form(mut self, form: KernelForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_limit(mut self, limit: UpperLimit) -> Self {
        self.limit = limit;
        self
    }

    /// Kernel values as used in the equation for `xi(t_i)` against `xi(t_j)`.
    pub(crate) fn drift_entry(&self, grid: &TimeGrid, i: usize, j: usize) -> f64 {
        let (a, b) = self.ordered(grid, i, j);
        (self.a0)(a, b)
    }

    pub(crate) fn noise_entry(&self, grid: &TimeGrid, i: usize, j: usize) -> f64 {
        let (a, b) = self.ordered(grid, i, j);
        self.a1.as_ref().map_or(0.0, |k| k(a, b))
    }

    fn ordered(&self, grid: &TimeGrid, i: usize, j: usize) -> (f64, f64) {
        match self.form {
            KernelForm::Direct => (grid.t(i), grid.t(j)),
            KernelForm::Transposed => (grid.t(j), grid.t(i)),
        }
    }

    /// Checks `|A_k| <= bound` on every grid pair.
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let n = grid.n_nodes();
        for i in 0..n {
            for j in 0..n {
                let a = self.drift_entry(grid, i, j).abs().max(self.noise_entry(grid, i, j).abs());
                if !(a <= self.bound * (1.0 + 1e-12)) {
                    return Err(Error::config(format!(
                        "kernel value {a} at ({i}, {j}) exceeds declared bound {}",
                        self.bound
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMethod {
    /// Forward substitution for the Volterra limit, LU otherwise.
    Auto,
    Lu,
    Substitution,
}

/// Solves the discretized equation
/// `xi_i = phi_i + sum_j A0(i,j) xi_j w_j + sum_{j<i} A1(i,j) xi_j dB_j`, with `w_j = dt`
/// on `j < i` (limit `t`) or on every `j < N` (limit `T`).
pub fn solve_linear_svie(kernels: &LinearKernelSpec, bundle: &BrownianBundle) -> Result<ForwardField> {
    solve_linear_svie_with(kernels, bundle, LinearMethod::Auto)
}

pub fn solve_linear_svie_with(kernels: &LinearKernelSpec, bundle: &BrownianBundle, method: LinearMethod) -> Result<ForwardField> {
    const MIN_PIVOT: f64 = 1e-12;
    let grid = bundle.grid();
    kernels.validate(grid)?;
    let n = grid.n_steps();
    let nn = n + 1;
    let dt = grid.dt();
    let method = match (method, kernels.limit) {
        (LinearMethod::Auto, UpperLimit::Running) => LinearMethod::Substitution,
        (LinearMethod::Auto, UpperLimit::Horizon) => LinearMethod::Lu,
        (LinearMethod::Substitution, UpperLimit::Horizon) => {
            return Err(Error::config("forward substitution needs the Volterra limit t"))
        }
        (m, _) => m,
    };
    let phi: Vec<f64> = (0..nn).map(|i| (kernels.phi)(grid.t(i))).collect();
    // Deterministic part of the system matrix: A0(i,j) w_j.
    let mut drift = vec![0.0; nn * nn];
    for i in 0..nn {
        let upper = match kernels.limit {
            UpperLimit::Running => i,
            UpperLimit::Horizon => n,
        };
        for j in 0..upper {
            drift[i * nn + j] = kernels.drift_entry(grid, i, j) * dt;
        }
    }
    let noise: Option<Vec<f64>> = kernels.a1.as_ref().map(|_| {
        let mut m = vec![0.0; nn * nn];
        for i in 0..nn {
            for j in 0..i {
                m[i * nn + j] = kernels.noise_entry(grid, i, j);
            }
        }
        m
    });

    let n_paths = bundle.n_paths();
    let rows: Vec<Result<Vec<f64>>> = match method {
        LinearMethod::Substitution => par::map_paths(n_paths, |p| {
            let mut xi = vec![0.0; nn];
            for i in 0..nn {
                let mut acc = phi[i];
                for j in 0..i {
                    let mut c = drift[i * nn + j];
                    if let Some(nz) = &noise {
                        c += nz[i * nn + j] * bundle.db(p, j, 0);
                    }
                    acc += c * xi[j];
                }
                xi[i] = acc;
            }
            Ok(xi)
        }),
        _ => {
            let assemble = |p: Option<usize>| {
                let mut a = vec![0.0; nn * nn];
                for i in 0..nn {
                    for j in 0..nn {
                        let mut c = drift[i * nn + j];
                        if let (Some(nz), Some(p)) = (&noise, p) {
                            if j < i {
                                c += nz[i * nn + j] * bundle.db(p, j, 0);
                            }
                        }
                        a[i * nn + j] = if i == j { 1.0 - c } else { -c };
                    }
                }
                a
            };
            if noise.is_none() {
                let mut a = assemble(None);
                let perm = linalg::lu_factor(&mut a, nn, MIN_PIVOT)
                    .map_err(|pivot| Error::Conditioning { path: 0, pivot })?;
                let xi = linalg::lu_solve(&a, &perm, nn, &phi);
                (0..n_paths).map(|_| Ok(xi.clone())).collect()
            } else {
                par::map_paths(n_paths, |p| {
                    let mut a = assemble(Some(p));
                    let perm = linalg::lu_factor(&mut a, nn, MIN_PIVOT)
                        .map_err(|pivot| Error::Conditioning { path: p, pivot })?;
                    Ok(linalg::lu_solve(&a, &perm, nn, &phi))
                })
            }
        }
    };
    let mut x = PathArray::zeros(n_paths, nn);
    for (p, r) in rows.into_iter().enumerate() {
        x.row_mut(p).copy_from_slice(&r?);
    }
    ForwardField::check_finite(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_rng::{make_grid, sample_brownian};

    fn bundle(m: usize, n: usize) -> BrownianBundle {
        sample_brownian(&make_grid(1.0, n).unwrap(), m, 1, 77).unwrap()
    }

    #[test]
    fn zero_kernels_return_free_term() {
        let b = bundle(32, 8);
        let k = LinearKernelSpec::bilinear([0.0, 0.0], [0.0, 0.0], Arc::new(|t| 2.0 + t), 1.0);
        for limit in [UpperLimit::Running, UpperLimit::Horizon] {
            let x = solve_linear_svie(&k.clone().with_limit(limit), &b).unwrap();
            for p in 0..32 {
                for i in 0..=8 {
                    assert_eq!(x.at(p, i), 2.0 + b.grid().t(i));
                }
            }
        }
    }

    #[test]
    fn diffusion_only_matches_recursion() {
        let b = bundle(200, 16);
        let a = 0.5;
        let k = LinearKernelSpec::constant(0.0, a, 1.0);
        let lu = solve_linear_svie_with(&k, &b, LinearMethod::Lu).unwrap();
        for p in 0..200 {
            let mut xi = [0.0; 17];
            for i in 0..=16 {
                xi[i] = 1.0 + (0..i).map(|j| a * xi[j] * b.db(p, j, 0)).sum::<f64>();
                assert!((lu.at(p, i) - xi[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn substitution_and_lu_agree() {
        let b = bundle(300, 16);
        let k = LinearKernelSpec::bilinear([0.3, -0.4], [0.2, 0.1], Arc::new(|t| 1.0 - t), 1.0);
        for form in [KernelForm::Direct, KernelForm::Transposed] {
            let k = k.clone().with_form(form);
            let s = solve_linear_svie_with(&k, &b, LinearMethod::Substitution).unwrap();
            let l = solve_linear_svie_with(&k, &b, LinearMethod::Lu).unwrap();
            let diff = s
                .x
                .as_slice()
                .iter()
                .zip(l.x.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-10, "{form:?}: {diff}");
        }
    }

    #[test]
    fn fredholm_constant_fixed_point() {
        let b = bundle(8, 64);
        let c = 0.4;
        let k = LinearKernelSpec::constant(c, 0.0, 1.0).with_limit(UpperLimit::Horizon);
        let x = solve_linear_svie(&k, &b).unwrap();
        let exact = 1.0 / (1.0 - c);
        for i in 0..=64 {
            assert!(((x.at(3, i) - exact) / exact).abs() <= 2e-2);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let b = bundle(4, 4);
        // I - c*dt*ones-ish: with c*T = 1 the constant mode is singular.
        let k = LinearKernelSpec::constant(1.0, 0.0, 1.0).with_limit(UpperLimit::Horizon);
        assert!(matches!(
            solve_linear_svie(&k, &b),
            Err(Error::Conditioning { .. })
        ));
    }

    #[test]
    fn substitution_rejects_fredholm() {
        let b = bundle(4, 4);
        let k = LinearKernelSpec::constant(0.1, 0.0, 1.0).with_limit(UpperLimit::Horizon);
        assert!(solve_linear_svie_with(&k, &b, LinearMethod::Substitution).is_err());
    }

    #[test]
    fn bound_is_checked() {
        let b = bundle(4, 4);
        let mut k = LinearKernelSpec::constant(0.3, 0.0, 1.0);
        k.bound = 0.1;
        assert!(matches!(solve_linear_svie(&k, &b), Err(Error::Config(_))));
    }
}
