use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backward::{solve_bsvie, BackwardOptions, FnDriver};
use crate::condexp::{RegressionBasis, Regressor};
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::forward::{solve_linear_svie, KernelForm, LinearKernelSpec};
use crate::grid_rng::BrownianBundle;
use crate::par;
use crate::problem::UpperLimit;

/// Which pairing is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// Forward kernels `A(t, s)`; dual driver `A0(s, t) Y(s) + A1(s, t) Z(s, t)`.
    Fsvie,
    /// Forward kernels `A(s, t)`; dual driver `A0(t, s) Y(s) + A1(t, s) Z(s, t)`.
    Bsvie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub lemma: Lemma,
    /// `E int xi psi dt`.
    pub lhs: f64,
    /// `E int phi Y dt`.
    pub rhs: f64,
    pub rel_gap: f64,
    pub limit: UpperLimit,
    pub form: KernelForm,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// `[E xi_i psi_i, E phi_i Y_i]` per node.
    pub per_node: Vec<[f64; 2]>,
}

/// Pairs the linear forward equation with its dual backward equation on the
/// same paths. Both integrals use weight `dt` on every node, for which the
/// discrete pairing is exact up to regression error.
pub fn check_duality(lemma: Lemma, kernels: &LinearKernelSpec, psi: &PathArray, bundle: &BrownianBundle, basis: RegressionBasis) -> Result<DualityReport> {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let nn = n + 1;
    if psi.n_paths() != bundle.n_paths() || psi.n_cols() != nn {
        return Err(Error::config("terminal process does not match the bundle"));
    }
    let form = match lemma {
        Lemma::Fsvie => KernelForm::Direct,
        Lemma::Bsvie => KernelForm::Transposed,
    };
    let kernels = kernels.clone().with_form(form);
    let xi = solve_linear_svie(&kernels, bundle)?;

    // The backward coefficient for outer node j and inner node i > j equals
    // the forward coefficient of xi_j in the equation for xi_i.
    let mut k0 = vec![0.0; nn * nn];
    let mut k1 = vec![0.0; nn * nn];
    for i in 0..nn {
        for j in 0..i {
            k0[i * nn + j] = kernels.drift_entry(&grid, i, j);
            k1[i * nn + j] = kernels.noise_entry(&grid, i, j);
        }
    }
    let uses_z = kernels.a1.is_some();
    let driver = FnDriver::new(
        |_p: usize, j: usize, i: usize, y: f64, z: f64| k0[i * nn + j] * y + k1[i * nn + j] * z,
        uses_z,
    );
    let reg = Arc::new(Regressor::new(bundle, basis)?);
    let opts = BackwardOptions { sub_z: uses_z, upper_z: false };
    let bw = solve_bsvie(&driver, psi, reg, bundle, opts)?;

    let dt = grid.dt();
    let m = bundle.n_paths();
    let phi: Vec<f64> = (0..nn).map(|i| (kernels.phi)(grid.t(i))).collect();
    let per_node: Vec<[f64; 2]> = (0..nn)
        .map(|i| {
            [
                par::mean(m, |p| xi.at(p, i) * psi.get(p, i)),
                par::mean(m, |p| phi[i] * bw.y_at(p, i)),
            ]
        })
        .collect();
    let lhs = per_node.iter().map(|v| v[0]).sum::<f64>() * dt;
    let rhs = per_node.iter().map(|v| v[1]).sum::<f64>() * dt;
    Ok(DualityReport {
        lemma,
        lhs,
        rhs,
        rel_gap: rel_gap(lhs, rhs),
        limit: kernels.limit,
        form,
        n_paths: m,
        n_steps: n,
        seed: bundle.seed(),
        per_node,
    })
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn check_duality_fsvie(kernels: &LinearKernelSpec, psi: &PathArray, bundle: &BrownianBundle, basis: RegressionBasis) -> Result<DualityReport> {
    check_duality(Lemma::Fsvie, kernels, psi, bundle, basis)
}

pub fn check_duality_bsvie(kernels: &LinearKernelSpec, psi: &PathArray, bundle: &BrownianBundle, basis: RegressionBasis) -> Result<DualityReport> {
    check_duality(Lemma::Bsvie, kernels, psi, bundle, basis)
}

/// Both integral-limit variants of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDiscrimination {
    pub volterra: DualityReport,
    pub fredholm: DualityReport,
    pub tolerance: f64,
    /// The unique variant within tolerance, if exactly one is.
    pub selected: Option<UpperLimit>,
}

pub fn discriminate_limits(
    lemma: Lemma,
    kernels: &LinearKernelSpec,
    psi: &PathArray,
    bundle: &BrownianBundle,
    basis: RegressionBasis,
    tolerance: f64,
) -> Result<LimitDiscrimination> {
    let volterra = check_duality(lemma, &kernels.clone().with_limit(UpperLimit::Running), psi, bundle, basis)?;
    let fredholm = check_duality(lemma, &kernels.clone().with_limit(UpperLimit::Horizon), psi, bundle, basis)?;
    let selected = match (volterra.rel_gap <= tolerance, fredholm.rel_gap <= tolerance) {
        (true, false) => Some(UpperLimit::Running),
        (false, true) => Some(UpperLimit::Horizon),
        _ => None,
    };
    Ok(LimitDiscrimination {
        volterra,
        fredholm,
        tolerance,
        selected,
    })
}

/// Random instance `A_k(t, s) = alpha_k + beta_k t s` on `[0, 1]` with
/// `|A_k| <= 0.5`, `0.3 <= |alpha_0| <= 0.45` and free term `1 + t/2`.
pub fn random_kernels(seed: u64) -> LinearKernelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let alpha0 = sign * rng.random_range(0.3..0.45);
    let beta0 = rng.random_range(-0.05..0.05);
    let alpha1 = rng.random_range(-0.3..0.3);
    let beta1 = rng.random_range(-0.2..0.2);
    LinearKernelSpec::bilinear([alpha0, alpha1], [beta0, beta1], Arc::new(|t| 1.0 + 0.5 * t), 1.0)
}
