use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate_constraints, evaluate_cost, penalty_blocks, ConstraintGaps, CostBreakdown, PenaltyConfig, PenaltyValue};
use crate::calculus::{solve_adjoint, AdjointOptions, LinearFunctional, MultiplierSet};
use crate::condexp::RegressionBasis;
use crate::error::{Error, Result};
use crate::grid_rng::BrownianBundle;
use crate::problem::{ControlPair, ProblemSpec};
use crate::system::{Solver, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub penalty: PenaltyConfig,
    pub max_inner: usize,
    pub initial_step: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub step_tol: f64,
    /// Tolerance on the projected-gradient norm.
    pub grad_tol: f64,
    /// Inner iterations also stop once the projected-gradient norm falls
    /// below this fraction of its value at the start of the outer iteration.
    pub grad_rtol: f64,
    /// Start each line search from the Barzilai-Borwein step of the last
    /// accepted move instead of `initial_step`.
    pub bb_step: bool,
    pub adjoint: AdjointOptions,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            penalty: PenaltyConfig::default(),
            max_inner: 40,
            initial_step: 1.0,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            step_tol: 1e-6,
            grad_tol: 1e-6,
            grad_rtol: 1e-3,
            bb_step: true,
            adjoint: AdjointOptions { forward_pair: false, ..Default::default() },
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if !(self.initial_step > 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config("line-search parameters out of range"));
        }
        if !(self.grad_tol >= 0.0) || !(0.0..1.0).contains(&self.grad_rtol) {
            return Err(Error::config("gradient tolerances out of range"));
        }
        if self.max_inner == 0 || self.max_backtracks == 0 {
            return Err(Error::config("iteration limits must be positive"));
        }
        Ok(())
    }
}

/// One accepted (or final) iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub outer: usize,
    pub iter: usize,
    pub j: f64,
    pub feps: f64,
    /// Optimized surrogate at this iterate.
    pub surrogate: f64,
    pub agg_gap: f64,
    pub sup_gap: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub problem: String,
    pub history: Vec<IterRecord>,
    pub final_ctrl: ControlPair,
    pub final_cost: CostBreakdown,
    pub final_gaps: Option<ConstraintGaps>,
    pub final_penalty: PenaltyValue,
    /// Normalized surrogate weights at the final iterate.
    pub multipliers: MultiplierSet,
    pub converged: bool,
    /// A line search failed after the maximal number of backtracks.
    pub stalled: bool,
    pub evaluations: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl OptimReport {
    /// `iter,J,Feps,agg_gap,sup_gap,step`, one row per record.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,J,Feps,agg_gap,sup_gap,step")?;
        for (n, r) in self.history.iter().enumerate() {
            writeln!(w, "{n},{:e},{:e},{:e},{:e},{:e}", r.j, r.feps, r.agg_gap, r.sup_gap, r.step)?;
        }
        Ok(())
    }
}

/// Smooth surrogate `-s w_J J + sum_k max_k^2 + w_c (agg^2 + int gap^2)` of
/// the penalty functional, at a fixed reference.
struct Surrogate {
    reference: CostBreakdown,
    epsilon: f64,
    weight: f64,
}

struct Eval {
    ctrl: ControlPair,
    traj: Trajectory,
    cost: CostBreakdown,
    gaps: Option<ConstraintGaps>,
    blocks: PenaltyValue,
    value: f64,
}

struct Context<'a> {
    spec: &'a ProblemSpec,
    solver: Solver<'a>,
    bundle: &'a BrownianBundle,
    cfg: &'a OptimConfig,
    evaluations: usize,
}

impl Context<'_> {
    fn eval(&mut self, ctrl: ControlPair, sur: &Surrogate) -> Result<Eval> {
        self.evaluations += 1;
        let traj = self.solver.solve(&ctrl)?;
        let cost = evaluate_cost(self.spec, &traj, self.bundle)?;
        let gaps = match self.spec.constraint {
            Some(_) => Some(evaluate_constraints(self.spec, &traj.backward, self.bundle.grid())?),
            None => None,
        };
        let mut e = Eval {
            ctrl,
            traj,
            cost,
            gaps,
            blocks: penalty_blocks(&cost, &cost, None, Default::default(), 0.0, 0.0),
            value: 0.0,
        };
        self.score(&mut e, sur);
        Ok(e)
    }

    fn score(&self, e: &mut Eval, sur: &Surrogate) {
        let s = self.spec.direction.sign();
        e.blocks = penalty_blocks(&e.cost, &sur.reference, e.gaps.as_ref(), self.spec.model.active_terms(), s, sur.epsilon);
        let improve: f64 = e.blocks.improvement.iter().map(|v| v * v).sum();
        e.value = -s * self.cfg.penalty.objective_weight * e.cost.total + improve + sur.weight * (e.blocks.aggregate + e.blocks.profile);
    }

    /// Linear functional whose derivative is the surrogate's derivative.
    fn functional(&self, e: &Eval, sur: &Surrogate) -> LinearFunctional {
        let s = self.spec.direction.sign();
        let wj = self.cfg.penalty.objective_weight;
        let w = |k: usize| -s * (wj + 2.0 * e.blocks.improvement[k]);
        let (c_agg, c_prof) = match &e.gaps {
            Some(g) => (
                2.0 * sur.weight * g.aggregate,
                g.profile.iter().map(|v| 2.0 * sur.weight * v).collect(),
            ),
            None => (0.0, Vec::new()),
        };
        LinearFunctional {
            w_q: w(0),
            w_h: w(1),
            w_k: w(2),
            w_l1: w(3),
            w_l2: w(4),
            c_agg,
            c_prof,
        }
    }

    /// Mean gradient densities `(d/du, d/dpsi)` of the surrogate.
    fn gradient(&self, e: &Eval, sur: &Surrogate) -> Result<(Vec<f64>, Vec<f64>)> {
        let lf = self.functional(e, sur);
        let adj = solve_adjoint(self.spec, &e.traj, &lf, self.bundle, self.cfg.adjoint)?;
        Ok((adj.gradient.mean_u(), adj.gradient.mean_psi()))
    }
}

fn dot(dt: f64, a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> f64 {
    dt * (a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum::<f64>() + a.1.iter().zip(&b.1).map(|(x, y)| x * y).sum::<f64>())
}

fn step(ctrl: &ControlPair, g: &(Vec<f64>, Vec<f64>), alpha: f64, spec: &ProblemSpec) -> ControlPair {
    let mut out = ctrl.clone();
    out.u.iter_mut().zip(&g.0).for_each(|(v, d)| *v -= alpha * d);
    out.psi.iter_mut().zip(&g.1).for_each(|(v, d)| *v -= alpha * d);
    out.project(&spec.sets)
}

fn diff(a: &ControlPair, b: &ControlPair) -> (Vec<f64>, Vec<f64>) {
    (
        a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect(),
        a.psi.iter().zip(&b.psi).map(|(x, y)| x - y).collect(),
    )
}

/// Projected-gradient descent on the penalty surrogate over the per-node
/// baselines of `(psi, u)`, with an outer schedule of decreasing offsets and
/// increasing constraint weights. Feedback coefficients are kept fixed.
pub fn optimize(
    spec: &ProblemSpec,
    init: &ControlPair,
    cfg: &OptimConfig,
    bundle: &BrownianBundle,
    basis: RegressionBasis,
) -> Result<OptimReport> {
    cfg.validate()?;
    let grid = *bundle.grid();
    let dt = grid.dt();
    init.check_grid(&grid)?;
    let mut ctx = Context {
        spec,
        solver: Solver::new(spec, bundle, basis)?,
        bundle,
        cfg,
        evaluations: 0,
    };
    let mut sur = Surrogate {
        reference: CostBreakdown {
            q: 0.0,
            h: 0.0,
            k: 0.0,
            l1: 0.0,
            l2: 0.0,
            total: 0.0,
        },
        epsilon: cfg.penalty.epsilon_at(0),
        weight: cfg.penalty.constraint_weight,
    };
    let mut cur = ctx.eval(init.project(&spec.sets), &sur)?;
    sur.reference = cur.cost;
    ctx.score(&mut cur, &sur);
    let mut history = Vec::new();
    let mut stalled = false;
    let mut converged = false;
    // Surrogate derivative at the last inner-converged point.
    let mut kkt: Option<LinearFunctional> = None;

    let record = |cur: &Eval, outer: usize, iter: usize, step: f64, grad_norm: f64, eps: f64| IterRecord {
        outer,
        iter,
        j: cur.cost.total,
        feps: cur.blocks.value,
        surrogate: cur.value,
        agg_gap: cur.gaps.as_ref().map_or(0.0, |g| g.aggregate),
        sup_gap: cur.gaps.as_ref().map_or(0.0, |g| g.sup),
        step,
        grad_norm,
        epsilon: eps,
    };

    for outer in 0..cfg.penalty.max_outer {
        if outer > 0 {
            sur.reference = cur.cost;
            sur.epsilon = cfg.penalty.epsilon_at(outer);
            sur.weight *= cfg.penalty.weight_growth;
            ctx.score(&mut cur, &sur);
        }
        let mut g = ctx.gradient(&cur, &sur)?;
        let mut alpha0 = cfg.initial_step;
        let mut tol = cfg.grad_tol;
        converged = false;
        for iter in 0..cfg.max_inner {
            let pg = diff(&cur.ctrl, &step(&cur.ctrl, &g, 1.0, spec));
            let pg_norm = dot(dt, &pg, &pg).sqrt();
            if iter == 0 {
                tol = tol.max(cfg.grad_rtol * pg_norm);
            }
            if pg_norm < tol {
                history.push(record(&cur, outer, iter, 0.0, pg_norm, sur.epsilon));
                kkt = Some(ctx.functional(&cur, &sur));
                converged = true;
                break;
            }
            let mut alpha = alpha0;
            let mut accepted = None;
            let mut tiny = false;
            for _ in 0..cfg.max_backtracks {
                if alpha < cfg.step_tol {
                    tiny = true;
                    break;
                }
                let cand = step(&cur.ctrl, &g, alpha, spec);
                let d = diff(&cand, &cur.ctrl);
                let decrease = dot(dt, &g, &d);
                let e = ctx.eval(cand, &sur)?;
                if e.value <= cur.value + cfg.armijo * decrease {
                    accepted = Some((e, d));
                    break;
                }
                alpha *= cfg.shrink;
            }
            let Some((next, d)) = accepted else {
                converged = tiny;
                stalled = !tiny;
                history.push(record(&cur, outer, iter, 0.0, pg_norm, sur.epsilon));
                break;
            };
            let g_next = ctx.gradient(&next, &sur)?;
            let y = diff_grad(&g_next, &g);
            let sy = dot(dt, &d, &y);
            alpha0 = if cfg.bb_step && sy > 0.0 {
                (dot(dt, &d, &d) / sy).clamp(1e-4, 1e4)
            } else {
                cfg.initial_step
            };
            cur = next;
            g = g_next;
            history.push(record(&cur, outer, iter, alpha, pg_norm, sur.epsilon));
            if alpha < cfg.step_tol {
                converged = true;
                break;
            }
        }
        if stalled {
            break;
        }
    }

    let lf = kkt.unwrap_or_else(|| ctx.functional(&cur, &sur));
    let multipliers = extract_multipliers(&ctx, &lf, &grid);
    Ok(OptimReport {
        problem: spec.name.clone(),
        history,
        final_ctrl: cur.ctrl.clone(),
        final_cost: cur.cost,
        final_gaps: cur.gaps.clone(),
        final_penalty: cur.blocks,
        multipliers,
        converged,
        stalled,
        evaluations: ctx.evaluations,
        n_paths: bundle.n_paths(),
        n_steps: grid.n_steps(),
        seed: bundle.seed(),
    })
}

fn diff_grad(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
    (
        a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect(),
        a.1.iter().zip(&b.1).map(|(x, y)| x - y).collect(),
    )
}

/// Surrogate weights rescaled to a unit multiplier norm, in the
/// multiplier sign convention.
fn extract_multipliers(ctx: &Context<'_>, lf: &LinearFunctional, grid: &crate::grid_rng::TimeGrid) -> MultiplierSet {
    let s = ctx.spec.direction.sign();
    let active = ctx.spec.model.active_terms().as_array();
    let h = |k: usize, w: f64| if active[k] { s * w } else { 0.0 };
    let mut set = MultiplierSet {
        h0_bar: lf.c_agg,
        h0: if lf.c_prof.is_empty() {
            vec![0.0; grid.n_nodes()]
        } else {
            lf.c_prof.clone()
        },
        h1_bar: h(0, lf.w_q),
        h1: h(1, lf.w_h),
        h2: h(2, lf.w_k),
        h3: h(3, lf.w_l1),
        h4: h(4, lf.w_l2),
    };
    let norm = set.norm(grid).sqrt();
    if norm > 0.0 {
        set.h0_bar /= norm;
        set.h0.iter_mut().for_each(|v| *v /= norm);
        for v in [&mut set.h1_bar, &mut set.h1, &mut set.h2, &mut set.h3, &mut set.h4] {
            *v /= norm;
        }
    }
    set
}
