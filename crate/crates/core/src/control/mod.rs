//! Objective evaluation, constraint gaps, the penalty functional and the
//! projected-gradient optimizer.

mod complementarity;
mod optim;

use serde::{Deserialize, Serialize};

pub use complementarity::{complementarity_diagnostics, ComplementarityReport};
pub use optim::{optimize, IterRecord, OptimConfig, OptimReport};

use crate::backward::BackwardField;
use crate::error::{Error, Result};
use crate::grid_rng::{BrownianBundle, TimeGrid};
use crate::par;
use crate::problem::{CostTerms, ProblemSpec};
use crate::system::Trajectory;

/// Raw cost terms; `total` is `J` before the optimization direction is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub q: f64,
    pub h: f64,
    pub k: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// `[q, h, k, l1, l2]`.
    pub fn terms(&self) -> [f64; 5] {
        [self.q, self.h, self.k, self.l1, self.l2]
    }
}

/// `J` by Monte Carlo: left-point quadrature for `q` and `k`, the lower and
/// upper triangles for `l1` and `l2`, and the terminal average for `h`.
pub fn evaluate_cost(spec: &ProblemSpec, traj: &Trajectory, bundle: &BrownianBundle) -> Result<CostBreakdown> {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let w = grid.left_weights();
    let kw = spec.k_weights.weights(&grid);
    let model = spec.model.as_ref();
    let active = model.active_terms();
    let (x, u, psi, bw) = (&traj.forward, &traj.realized.u, &traj.realized.psi, &traj.backward);
    let times = grid.nodes();
    let t = |i: usize| times[i];
    let sums = par::sum_vec(bundle.n_paths(), 5, |p, acc| {
        for i in 0..=n {
            acc[0] += w[i] * model.q(psi.get(p, i)).v;
            acc[2] += kw[i] * model.k(bw.y_at(p, i)).v;
        }
        acc[1] += model.h(x.at(p, n)).v;
        if active.l1 {
            for i in 0..n {
                for j in 0..i {
                    acc[3] += dt * dt * model.l1(t(i), t(j), x.at(p, j), u.get(p, j)).v;
                }
            }
        }
        if active.l2 {
            for i in 0..n {
                for j in i + 1..=n {
                    let v = model.l2(t(i), t(j), x.at(p, j), bw.y_at(p, j), bw.z(p, j, i), u.get(p, j - 1)).v;
                    acc[4] += dt * dt * v;
                }
            }
        }
    });
    let m = bundle.n_paths() as f64;
    let [q, h, k, l1, l2] = [sums[0] / m, sums[1] / m, sums[2] / m, sums[3] / m, sums[4] / m];
    let total = q + h + k + l1 + l2;
    if !total.is_finite() {
        return Err(Error::Divergence {
            path: 0,
            node: n,
            value: total,
        });
    }
    Ok(CostBreakdown { q, h, k, l1, l2, total })
}

/// Constraint residuals of one backward solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintGaps {
    /// `mean Y_i - rho(t_i)`.
    pub profile: Vec<f64>,
    /// Quadrature of `mean Y` minus `a`.
    pub aggregate: f64,
    /// `max_i |profile_i|`.
    pub sup: f64,
    /// `dt` times the sum of `profile^2` over all nodes, `t_N` included.
    pub profile_sq: f64,
    /// Three Monte Carlo standard errors of `mean Y_i`.
    pub noise: Vec<f64>,
}

pub fn evaluate_constraints(spec: &ProblemSpec, backward: &BackwardField, grid: &TimeGrid) -> Result<ConstraintGaps> {
    let c = spec
        .constraint
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("problem '{}' has no constraints", spec.name)))?;
    if backward.n_nodes() != grid.n_nodes() {
        return Err(Error::config("backward field does not match the grid"));
    }
    let rho = c.rho_nodes(grid);
    let means = backward.y_means();
    let m = backward.n_paths() as f64;
    let noise = (0..grid.n_nodes())
        .map(|i| {
            let var = par::mean(backward.n_paths(), |p| (backward.y_at(p, i) - means[i]).powi(2));
            3.0 * (var / m).sqrt()
        })
        .collect();
    let profile: Vec<f64> = means.iter().zip(&rho).map(|(y, r)| y - r).collect();
    let sq: Vec<f64> = profile.iter().map(|g| g * g).collect();
    Ok(ConstraintGaps {
        aggregate: grid.integrate(&means) - c.aggregate_target(grid)?,
        sup: profile.iter().fold(0.0, |a, g| a.max(g.abs())),
        profile_sq: grid.dt() * sq.iter().sum::<f64>(),
        profile,
        noise,
    })
}

/// Offset schedule and block weights of the penalty method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub epsilon: f64,
    pub decay: f64,
    pub floor: f64,
    /// Weight of the two constraint blocks in the optimized surrogate.
    pub constraint_weight: f64,
    /// Factor applied to `constraint_weight` after each outer iteration.
    pub weight_growth: f64,
    /// Weight of the direction-signed `J` in the surrogate.
    pub objective_weight: f64,
    pub max_outer: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            epsilon: 0.1,
            decay: 0.5,
            floor: 1e-4,
            constraint_weight: 1.0,
            weight_growth: 10.0,
            objective_weight: 1.0,
            max_outer: 6,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.floor > 0.0) {
            return Err(Error::config("penalty offset and floor must be positive"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("penalty decay must lie in (0, 1)"));
        }
        if !(self.constraint_weight > 0.0) || !(self.weight_growth >= 1.0) || !(self.objective_weight >= 0.0) {
            return Err(Error::config("penalty weights must be positive and non-decreasing"));
        }
        if self.max_outer == 0 {
            return Err(Error::config("max_outer must be at least 1"));
        }
        Ok(())
    }

    /// Offset used in outer iteration `k`.
    pub fn epsilon_at(&self, k: usize) -> f64 {
        (self.epsilon * self.decay.powi(k as i32)).max(self.floor)
    }
}

/// Blocks of the penalty functional, each already squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyValue {
    pub aggregate: f64,
    pub profile: f64,
    /// `max(0, s (T*_k - T_k) + eps)` per cost term `[q, h, k, l1, l2]`;
    /// zero for terms the model does not have.
    pub improvement: [f64; 5],
    /// Square root of the sum of all squared blocks.
    pub value: f64,
}

/// Penalty functional of `cost` against the reference terms, with
/// direction sign `s` (`+1` maximize).
pub fn penalty_blocks(
    cost: &CostBreakdown,
    reference: &CostBreakdown,
    gaps: Option<&ConstraintGaps>,
    active: CostTerms,
    sign: f64,
    epsilon: f64,
) -> PenaltyValue {
    let (aggregate, profile) = gaps.map_or((0.0, 0.0), |g| (g.aggregate * g.aggregate, g.profile_sq));
    let mut improvement = [0.0; 5];
    let (c, r) = (cost.terms(), reference.terms());
    for (k, on) in active.as_array().into_iter().enumerate() {
        if on {
            improvement[k] = (sign * (r[k] - c[k]) + epsilon).max(0.0);
        }
    }
    let value = (aggregate + profile + improvement.iter().map(|v| v * v).sum::<f64>()).sqrt();
    PenaltyValue {
        aggregate,
        profile,
        improvement,
        value,
    }
}

/// `F_eps` of the solved `traj` against the reference cost terms.
pub fn penalty_value(
    spec: &ProblemSpec,
    traj: &Trajectory,
    reference: &CostBreakdown,
    epsilon: f64,
    bundle: &BrownianBundle,
) -> Result<PenaltyValue> {
    if !(epsilon >= 0.0) {
        return Err(Error::config("penalty offset must be nonnegative"));
    }
    let cost = evaluate_cost(spec, traj, bundle)?;
    let gaps = match spec.constraint {
        Some(_) => Some(evaluate_constraints(spec, &traj.backward, bundle.grid())?),
        None => None,
    };
    Ok(penalty_blocks(
        &cost,
        reference,
        gaps.as_ref(),
        spec.model.active_terms(),
        spec.direction.sign(),
        epsilon,
    ))
}
