//! Solving the controlled forward-backward system for one control pair.

use std::sync::Arc;

use crate::backward::{solve_backward, BackwardField, BackwardOptions};
use crate::condexp::{RegressionBasis, Regressor};
use crate::error::Result;
use crate::forward::{solve_fsvie, ForwardField};
use crate::grid_rng::BrownianBundle;
use crate::problem::{ControlPair, ProblemSpec, RealizedControl};

/// Starred (or perturbed) state of the system.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub ctrl: ControlPair,
    pub realized: RealizedControl,
    pub forward: ForwardField,
    pub backward: BackwardField,
}

/// Solves the system repeatedly on one bundle, sharing the regression design
/// when it does not depend on the state.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    pub spec: &'a ProblemSpec,
    pub bundle: &'a BrownianBundle,
    pub basis: RegressionBasis,
    pub opts: BackwardOptions,
    shared: Option<Arc<Regressor>>,
}

impl<'a> Solver<'a> {
    pub fn new(spec: &'a ProblemSpec, bundle: &'a BrownianBundle, basis: RegressionBasis) -> Result<Self> {
        spec.validate()?;
        spec.check_grid(bundle.grid())?;
        let shared = if spec.state_features {
            None
        } else {
            Some(Arc::new(Regressor::new(bundle, basis)?))
        };
        Ok(Solver {
            spec,
            bundle,
            basis,
            opts: BackwardOptions::default(),
            shared,
        })
    }

    pub fn with_options(mut self, opts: BackwardOptions) -> Self {
        self.opts = opts;
        self
    }

    /// Regressor for the backward equation along `forward`.
    pub fn regressor(&self, forward: &ForwardField) -> Result<Arc<Regressor>> {
        match &self.shared {
            Some(r) => Ok(r.clone()),
            None => Ok(Arc::new(Regressor::with_state(self.bundle, &forward.x, self.basis)?)),
        }
    }

    /// Shared Brownian-feature regressor, if the backward design is shared.
    pub fn shared_regressor(&self) -> Option<&Arc<Regressor>> {
        self.shared.as_ref()
    }

    pub fn solve(&self, ctrl: &ControlPair) -> Result<Trajectory> {
        let realized = ctrl.realize(self.bundle, Some(&self.spec.sets))?;
        let forward = solve_fsvie(self.spec, &realized, self.bundle)?;
        let reg = self.regressor(&forward)?;
        let backward = solve_backward(self.spec, &realized, &forward, reg, self.bundle, self.opts)?;
        Ok(Trajectory {
            ctrl: ctrl.clone(),
            realized,
            forward,
            backward,
        })
    }
}
