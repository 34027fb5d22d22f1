//! Problem declarations: coefficients, costs, constraints, admissible sets and
//! the decision variable, plus the built-in instances.

mod builtins;
mod model;
mod pair;
mod sets;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use builtins::{DualityLinear, Example41, Example42, LqSmoke};
pub use model::{check_derivatives, growth_ratio, lipschitz_ratio, Coefficients, CostTerms, Costs, DerivativeCheck, Model, D1, D2, D4};
pub use pair::{control_metric, ControlPair, RealizedControl};
pub use sets::{AdmissibleSets, Interval};

use crate::error::{Error, Result};
use crate::grid_rng::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// `+1` for maximize, `-1` for minimize: the signed objective `sign * J`
    /// is always maximized.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

/// Upper limit of an integral in the outer time `t`: `t` (Volterra) or `T`
/// (Fredholm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpperLimit {
    #[serde(rename = "t")]
    Running,
    #[serde(rename = "T")]
    Horizon,
}

impl fmt::Display for UpperLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpperLimit::Running => "t",
            UpperLimit::Horizon => "T",
        })
    }
}

/// Quadrature weights for the `k(Y)` cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KWeights {
    /// Left-point weights of `int_0^T k(Y(t)) dt`.
    Uniform,
    /// Weight one on node 0, giving `k(Y(0))`.
    PointAtZero,
}

impl KWeights {
    pub fn weights(self, grid: &TimeGrid) -> Vec<f64> {
        match self {
            KWeights::Uniform => grid.left_weights(),
            KWeights::PointAtZero => {
                let mut w = vec![0.0; grid.n_nodes()];
                w[0] = 1.0;
                w
            }
        }
    }
}

/// Deterministic target profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `scale * exp(rate * (T - t))`.
    Exponential { scale: f64, rate: f64 },
}

impl Profile {
    pub fn at(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::Exponential { scale, rate } => scale * (rate * (horizon - t)).exp(),
        }
    }
}

/// `E Y(t) = rho(t)` and `int_0^T E Y(t) dt = a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub rho: Profile,
    /// Aggregate target; defaults to the grid quadrature of `rho`.
    #[serde(default)]
    pub aggregate: Option<f64>,
    /// Band used when reporting satisfaction.
    #[serde(default = "default_band")]
    pub tolerance: f64,
}

fn default_band() -> f64 {
    0.05
}

impl ConstraintSpec {
    pub fn rho_nodes(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&t| self.rho.at(t, grid.horizon())).collect()
    }

    /// Aggregate target, checked against the quadrature of `rho`.
    pub fn aggregate_target(&self, grid: &TimeGrid) -> Result<f64> {
        let quad = grid.integrate(&self.rho_nodes(grid));
        match self.aggregate {
            None => Ok(quad),
            Some(a) if (a - quad).abs() <= 1e-6 * quad.abs().max(1e-12) => Ok(a),
            Some(a) => Err(Error::config(format!(
                "aggregate target {a} incompatible with profile quadrature {quad}"
            ))),
        }
    }
}

/// A complete control problem on `[0, T]`; scalar state and noise.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub horizon: f64,
    pub model: Arc<dyn Model>,
    pub sets: AdmissibleSets,
    pub constraint: Option<ConstraintSpec>,
    pub direction: Direction,
    pub forward_limit: UpperLimit,
    pub k_weights: KWeights,
    /// Attach the forward state to the regression features of `Y`.
    pub state_features: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("sets", &self.sets)
            .field("constraint", &self.constraint)
            .field("direction", &self.direction)
            .field("forward_limit", &self.forward_limit)
            .field("k_weights", &self.k_weights)
            .field("state_features", &self.state_features)
            .finish()
    }
}

impl ProblemSpec {
    /// Minimization problem on `[0, T]` without constraints, with default flags.
    pub fn new(name: impl Into<String>, horizon: f64, model: Arc<dyn Model>, sets: AdmissibleSets) -> Self {
        ProblemSpec {
            name: name.into(),
            horizon,
            model,
            sets,
            constraint: None,
            direction: Direction::Minimize,
            forward_limit: UpperLimit::Running,
            k_weights: KWeights::Uniform,
            state_features: false,
        }
    }

    /// Checks the declared structure and samples every callback once for
    /// finiteness.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        self.sets.validate()?;
        if self.forward_limit == UpperLimit::Horizon && !self.model.sigma_state_free() {
            return Err(Error::config(
                "forward upper limit T requires a diffusion that does not depend on the state",
            ));
        }
        let m = &self.model;
        let t = 0.25 * self.horizon;
        let s = 0.75 * self.horizon;
        let vals = [
            m.f(t),
            m.b(s, t, 0.3, 0.2).v,
            m.sigma(s, t, 0.3, 0.2).v,
            m.g(t, s, 0.3, 0.1, 0.2, 0.2).v,
            m.l1(s, t, 0.3, 0.2).v,
            m.l2(t, s, 0.3, 0.1, 0.2, 0.2).v,
            m.q(0.3).v,
            m.h(0.3).v,
            m.k(0.3).v,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("coefficient callbacks returned non-finite values"));
        }
        if !(m.lipschitz() > 0.0) {
            return Err(Error::config("declared Lipschitz constant must be positive"));
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(Error::config(format!(
                "grid horizon {} differs from problem horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Parameters of the `example42` family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example42Params {
    pub a: f64,
    pub b: f64,
    pub rho: Profile,
}

impl Default for Example42Params {
    fn default() -> Self {
        Example42Params {
            a: 1.0,
            b: 0.0,
            rho: Profile::Exponential { scale: 0.5, rate: 1.0 },
        }
    }
}

pub const BUILTIN_NAMES: [&str; 4] = ["example41", "example42", "lq_smoke", "duality_linear"];

/// Built-in problem by name.
pub fn builtin(name: &str) -> Result<ProblemSpec> {
    let spec = match name {
        "example41" => {
            let mut p = ProblemSpec::new(
                name,
                1.0,
                Arc::new(Example41),
                AdmissibleSets {
                    control: Interval::new(-0.5, 1.0)?,
                    terminal: Interval::new(0.0, 1.0)?,
                },
            );
            p.forward_limit = UpperLimit::Horizon;
            p.k_weights = KWeights::PointAtZero;
            p
        }
        "example42" => example42(Example42Params::default())?,
        "lq_smoke" => ProblemSpec::new(
            name,
            1.0,
            Arc::new(LqSmoke),
            AdmissibleSets {
                control: Interval::new(-2.0, 2.0)?,
                terminal: Interval::new(-2.0, 2.0)?,
            },
        ),
        "duality_linear" => ProblemSpec::new(
            name,
            1.0,
            Arc::new(DualityLinear),
            AdmissibleSets {
                control: Interval::new(-2.0, 2.0)?,
                terminal: Interval::new(-2.0, 2.0)?,
            },
        ),
        other => {
            return Err(Error::config(format!(
                "unknown problem '{other}', expected one of {}",
                BUILTIN_NAMES.join(", ")
            )))
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// `example42` with explicit driver coefficients and target profile.
pub fn example42(params: Example42Params) -> Result<ProblemSpec> {
    let mut p = ProblemSpec::new(
        "example42",
        1.0,
        Arc::new(Example42 {
            a: params.a,
            b: params.b,
        }),
        AdmissibleSets {
            control: Interval::unbounded(),
            terminal: Interval::new(0.0, 1.0)?,
        },
    );
    p.constraint = Some(ConstraintSpec {
        rho: params.rho,
        aggregate: None,
        tolerance: default_band(),
    });
    p.validate()?;
    Ok(p)
}
