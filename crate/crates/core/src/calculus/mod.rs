//! Duality verifiers, the variational system, the adjoint system and the
//! maximum-principle inequality.

mod adjoint;
mod duality;
mod smp;
mod variation;

use serde::{Deserialize, Serialize};

pub use adjoint::{directional_derivative, solve_adjoint, AdjointField, AdjointOptions, Assembly, Gradient};
pub use duality::{check_duality, check_duality_bsvie, check_duality_fsvie, discriminate_limits, random_kernels, DualityReport, Lemma, LimitDiscrimination};
pub use smp::{variational_inequality, InequalityReport};
pub use variation::{apply_functional, gateaux_check, solve_variation, GateauxReport, VariationField};

use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;
use crate::problem::Direction;

/// Multipliers of the maximum principle, in the sign convention where the
/// scalar ones are nonpositive and the direction-signed objective is
/// maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSet {
    /// Aggregate-constraint multiplier.
    pub h0_bar: f64,
    /// Profile-constraint multiplier per node.
    pub h0: Vec<f64>,
    /// Weight of the `q` term.
    pub h1_bar: f64,
    /// Weight of the `h` term.
    pub h1: f64,
    /// Weight of the `k` term.
    pub h2: f64,
    /// Weight of the `l1` term.
    pub h3: f64,
    /// Weight of the `l2` term.
    pub h4: f64,
}

impl MultiplierSet {
    /// `h0_bar = 0`, `h0 = 0` and every scalar multiplier `-1/sqrt(5)`.
    pub fn inactive_default(grid: &TimeGrid) -> Self {
        let v = -1.0 / 5f64.sqrt();
        MultiplierSet {
            h0_bar: 0.0,
            h0: vec![0.0; grid.n_nodes()],
            h1_bar: v,
            h1: v,
            h2: v,
            h3: v,
            h4: v,
        }
    }

    /// Sum of squares, with `h0` weighted by `dt` at every node.
    pub fn norm(&self, grid: &TimeGrid) -> f64 {
        self.h0_bar.powi(2)
            + grid.dt() * self.h0.iter().map(|v| v * v).sum::<f64>()
            + self.h1_bar.powi(2)
            + self.h1.powi(2)
            + self.h2.powi(2)
            + self.h3.powi(2)
            + self.h4.powi(2)
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.h0.len() != grid.n_nodes() {
            return Err(Error::config("h0 needs one value per grid node"));
        }
        let scalars = [self.h1_bar, self.h1, self.h2, self.h3, self.h4];
        if scalars.iter().any(|&h| !(h <= 0.0)) {
            return Err(Error::config("scalar multipliers must be nonpositive"));
        }
        if self.norm(grid) == 0.0 {
            return Err(Error::config("multipliers must not all vanish"));
        }
        Ok(())
    }

    /// Weights of the linear functional whose derivative the multipliers
    /// describe.
    pub fn functional(&self, direction: Direction) -> LinearFunctional {
        let s = direction.sign();
        LinearFunctional {
            w_q: s * self.h1_bar,
            w_h: s * self.h1,
            w_k: s * self.h2,
            w_l1: s * self.h3,
            w_l2: s * self.h4,
            c_agg: self.h0_bar,
            c_prof: self.h0.clone(),
        }
    }
}

/// `L = w_q Q + w_h H + w_k K + w_l1 L1 + w_l2 L2 + c_agg int E Y + int c_prof E Y`,
/// where `Q, H, K, L1, L2` are the raw cost terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub w_q: f64,
    pub w_h: f64,
    pub w_k: f64,
    pub w_l1: f64,
    pub w_l2: f64,
    pub c_agg: f64,
    /// Per node; empty means zero.
    pub c_prof: Vec<f64>,
}

impl LinearFunctional {
    /// The cost `J` itself.
    pub fn objective() -> Self {
        LinearFunctional {
            w_q: 1.0,
            w_h: 1.0,
            w_k: 1.0,
            w_l1: 1.0,
            w_l2: 1.0,
            c_agg: 0.0,
            c_prof: Vec::new(),
        }
    }

    /// Weight on `E Y(t_i)` from the constraint terms: the aggregate uses the
    /// left weight `w_i`, the profile weighs every node including `t_N` by `dt`.
    pub(crate) fn constraint_weight(&self, i: usize, w_i: f64, dt: f64) -> f64 {
        self.c_agg * w_i + self.c_prof.get(i).copied().unwrap_or(0.0) * dt
    }
}

#[cfg(test)]
mod tests;
