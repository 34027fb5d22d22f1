use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::condexp::RegressionBasis;
use crate::control::{OptimConfig, PenaltyConfig};
use crate::error::{Error, Result};
use crate::problem::{ControlPair, Example42Params, UpperLimit};

/// JSON run configuration. Every field is optional; missing fields take the
/// defaults of the chosen subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub n_steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub seed: Option<u64>,
    /// Noise dimension; only 1 is supported.
    pub dim: Option<usize>,
    pub degree: Option<usize>,
    pub ridge: Option<f64>,
    pub moment_matched: Option<bool>,
    /// Fixed-point tolerance of the adjoint equation under the `T` limit.
    pub picard_tol: Option<f64>,
    pub picard_max_iters: Option<usize>,
    pub penalty: Option<PenaltyConfig>,
    pub optimizer: Option<OptimConfig>,
    pub forward_limit: Option<UpperLimit>,
    pub adjoint_limit: Option<UpperLimit>,
    pub example42: Option<Example42Params>,
    /// Initial control for `optimize`; a constant pair when given as numbers.
    pub init_u: Option<f64>,
    pub init_psi: Option<f64>,
    pub init: Option<ControlPair>,
    /// Control evaluated by `simulate-forward`, `check-gateaux`,
    /// `check-gradient` and `check-smp`.
    pub control_u: Option<f64>,
    pub control_psi: Option<f64>,
    /// `control` (the problem's own backward equation) or `brownian`
    /// (`psi(t) = B(T)`, zero driver).
    pub terminal: Option<String>,
    pub instances: Option<usize>,
    pub directions: Option<usize>,
    pub candidates: Option<usize>,
    pub fd_step: Option<f64>,
    pub p_list: Option<Vec<f64>>,
    pub csv: Option<bool>,
    /// Not echoed into reports, so reruns into other directories compare equal.
    #[serde(skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

/// Pass thresholds. Defaults equal the acceptance values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub cost_gap: f64,
    pub control_l2: f64,
    pub psi0: f64,
    pub duality_gap: f64,
    pub mcondition: f64,
    pub z_rms: f64,
    pub gateaux_ratio: f64,
    pub linear_residual: f64,
    pub gradient_rel: f64,
    pub smp_floor: f64,
    pub smp_flag: f64,
    pub sup_gap: f64,
    pub complementarity: f64,
    pub band: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            cost_gap: 0.02,
            control_l2: 0.05,
            psi0: 0.02,
            duality_gap: 0.03,
            mcondition: 0.05,
            z_rms: 0.05,
            gateaux_ratio: 0.7,
            linear_residual: 1e-10,
            gradient_rel: 0.05,
            smp_floor: -0.03,
            smp_flag: -0.1,
            sup_gap: 0.05,
            complementarity: 0.1,
            band: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn basis(&self) -> RegressionBasis {
        let d = RegressionBasis::default();
        RegressionBasis {
            degree: self.degree.unwrap_or(d.degree),
            ridge: self.ridge.unwrap_or(d.ridge),
        }
    }

    /// Optimizer settings with the `penalty` and Picard overrides applied.
    pub fn optim(&self) -> OptimConfig {
        let mut o = self.optimizer.unwrap_or_default();
        if let Some(p) = self.penalty {
            o.penalty = p;
        }
        if let Some(t) = self.picard_tol {
            o.adjoint.tol = t;
        }
        if let Some(m) = self.picard_max_iters {
            o.adjoint.max_sweeps = m;
        }
        if let Some(l) = self.adjoint_limit {
            o.adjoint.p_limit = l;
        }
        o
    }

    /// Structural checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.dim.is_some_and(|d| d != 1) {
            return Err(Error::config("only dim = 1 is supported"));
        }
        if self.n_steps == Some(0) || self.n_paths.is_some_and(|m| m < 2) {
            return Err(Error::config("n_steps must be positive and n_paths at least 2"));
        }
        if self.degree == Some(0) || self.ridge.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::config("degree must be positive and ridge nonnegative"));
        }
        if self.picard_tol.is_some_and(|t| !(t > 0.0)) || self.picard_max_iters == Some(0) {
            return Err(Error::config("Picard tolerance and iteration limit must be positive"));
        }
        for (name, v) in [("instances", self.instances), ("directions", self.directions), ("candidates", self.candidates)] {
            if v == Some(0) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.fd_step.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::config("fd_step must be positive"));
        }
        if let Some(t) = &self.terminal {
            if t != "control" && t != "brownian" {
                return Err(Error::config(format!("terminal must be 'control' or 'brownian', got '{t}'")));
            }
        }
        self.optim().validate()
    }
}
