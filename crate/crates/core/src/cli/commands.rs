use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use super::Sub;
use crate::backward::{mcondition_residual, solve_bsvie, BackwardOptions, FnDriver};
use crate::calculus::{
    directional_derivative, discriminate_limits, gateaux_check, random_kernels, solve_adjoint, variational_inequality,
    AdjointOptions, Lemma, LinearFunctional, MultiplierSet,
};
use crate::condexp::Regressor;
use crate::control::{complementarity_diagnostics, evaluate_cost, optimize, OptimReport};
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::forward::solve_fsvie;
use crate::grid_rng::{make_grid, sample_brownian, BrownianBundle};
use crate::problem::{builtin, example42, ControlPair, ProblemSpec};
use crate::system::{Solver, Trajectory};

/// One thresholded quantity of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `<=` or `>=`.
    pub relation: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<=",
            threshold,
            passed: value <= threshold,
        }
    }

    pub fn ge(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: ">=",
            threshold,
            passed: value >= threshold,
        }
    }
}

/// What a subcommand hands back for the report.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub problem: String,
    pub seed: u64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub checks: Vec<Check>,
    pub result: Value,
    /// `(suffix, body)` pairs written as `<sub>.<suffix>.csv`.
    pub csv: Vec<(String, String)>,
}

struct Defaults {
    problem: &'static str,
    n_steps: usize,
    n_paths: usize,
    moment_matched: bool,
}

fn defaults(sub: Sub) -> Defaults {
    let d = |problem, n_steps, n_paths, moment_matched| Defaults {
        problem,
        n_steps,
        n_paths,
        moment_matched,
    };
    match sub {
        Sub::SimulateForward => d("lq_smoke", 32, 10_000, false),
        Sub::SolveBackward => d("lq_smoke", 32, 100_000, false),
        Sub::CheckDuality => d("duality_linear", 32, 100_000, false),
        Sub::CheckGateaux => d("lq_smoke", 16, 10_000, false),
        Sub::CheckGradient => d("lq_smoke", 32, 100_000, false),
        Sub::CheckSmp => d("example41", 32, 20_000, true),
        Sub::Optimize => d("example41", 32, 10_000, false),
        Sub::ReproduceExample41 => d("example41", 32, 100_000, true),
        Sub::ReproduceExample42 => d("example42", 32, 5_000, false),
    }
}

const DEFAULT_SEED: u64 = 42;

struct Run<'a> {
    cfg: &'a RunConfig,
    problem: String,
    bundle: BrownianBundle,
}

impl<'a> Run<'a> {
    fn new(sub: Sub, cfg: &'a RunConfig) -> Result<Self> {
        let d = defaults(sub);
        let problem = match sub {
            Sub::ReproduceExample41 | Sub::ReproduceExample42 | Sub::CheckDuality => {
                if cfg.problem.as_deref().is_some_and(|p| p != d.problem) {
                    return Err(Error::config(format!("{} runs on problem '{}' only", sub.name(), d.problem)));
                }
                d.problem.to_string()
            }
            _ => cfg.problem.clone().unwrap_or_else(|| d.problem.to_string()),
        };
        let grid = make_grid(1.0, cfg.n_steps.unwrap_or(d.n_steps))?;
        let b = sample_brownian(&grid, cfg.n_paths.unwrap_or(d.n_paths), 1, cfg.seed.unwrap_or(DEFAULT_SEED))?;
        let bundle = if cfg.moment_matched.unwrap_or(d.moment_matched) {
            b.moment_matched()?
        } else {
            b
        };
        Ok(Run { cfg, problem, bundle })
    }

    fn spec(&self) -> Result<ProblemSpec> {
        let mut spec = match (self.problem.as_str(), self.cfg.example42) {
            ("example42", Some(p)) => example42(p)?,
            (name, _) => builtin(name)?,
        };
        if let Some(l) = self.cfg.forward_limit {
            spec.forward_limit = l;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn control(&self, u: f64, psi: f64) -> ControlPair {
        ControlPair::constant(
            self.bundle.grid(),
            self.cfg.control_u.unwrap_or(u),
            self.cfg.control_psi.unwrap_or(psi),
        )
    }

    fn seed(&self) -> u64 {
        self.bundle.seed()
    }

    fn finish(self, checks: Vec<Check>, result: Value, csv: Vec<(String, String)>) -> Outcome {
        Outcome {
            problem: self.problem,
            seed: self.bundle.seed(),
            n_steps: self.bundle.grid().n_steps(),
            n_paths: self.bundle.n_paths(),
            checks,
            result,
            csv,
        }
    }
}

pub(super) fn dispatch(sub: Sub, cfg: &RunConfig) -> Result<Outcome> {
    let run = Run::new(sub, cfg)?;
    match sub {
        Sub::SimulateForward => simulate_forward(run),
        Sub::SolveBackward => solve_backward(run),
        Sub::CheckDuality => check_duality(run),
        Sub::CheckGateaux => check_gateaux(run),
        Sub::CheckGradient => check_gradient(run),
        Sub::CheckSmp => check_smp(run),
        Sub::Optimize => run_optimize(run),
        Sub::ReproduceExample41 => reproduce_example41(run),
        Sub::ReproduceExample42 => reproduce_example42(run),
    }
}

fn csv_of(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::config(e.to_string()))
}

fn column_stats(a: &PathArray) -> (Vec<f64>, Vec<f64>) {
    let means = a.column_means();
    let vars = (0..a.n_cols())
        .map(|c| {
            let m = means[c];
            a.column(c).iter().map(|v| (v - m).powi(2)).sum::<f64>() / a.n_paths() as f64
        })
        .collect();
    (means, vars)
}

fn random_direction(n_steps: usize, seed: u64) -> ControlPair {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ControlPair {
        u: (0..n_steps).map(|_| r.random_range(-1.0..1.0)).collect(),
        psi: (0..=n_steps).map(|_| r.random_range(-1.0..1.0)).collect(),
        u_fb: None,
        psi_fb: None,
    }
}

fn simulate_forward(run: Run) -> Result<Outcome> {
    let spec = run.spec()?;
    let ctrl = run.control(0.3, 0.2);
    let realized = ctrl.realize(&run.bundle, Some(&spec.sets))?;
    let x = solve_fsvie(&spec, &realized, &run.bundle)?;
    let (mean, var) = column_stats(&x.x);
    let mut csv = Vec::new();
    if run.cfg.csv.unwrap_or(false) {
        csv.push(("x".into(), csv_of(|w| x.write_csv(w))?));
    }
    let result = json!({ "control": ctrl, "clipped": realized.clipped, "mean": mean, "variance": var });
    Ok(run.finish(Vec::new(), result, csv))
}

fn solve_backward(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let terminal = run.cfg.terminal.as_deref().unwrap_or("brownian");
    let b = &run.bundle;
    let n = b.grid().n_steps();
    let (field, oracle_z) = if terminal == "brownian" {
        let psi = PathArray::from_fn(b.n_paths(), n + 1, |p, row| row.fill(b.b(p, n, 0)));
        let reg = Arc::new(Regressor::new(b, run.cfg.basis())?);
        let driver = FnDriver::new(|_, _, _, _, _| 0.0, false);
        let opts = BackwardOptions { sub_z: true, upper_z: true };
        (solve_bsvie(&driver, &psi, reg, b, opts)?, true)
    } else {
        let spec = run.spec()?;
        let solver = Solver::new(&spec, b, run.cfg.basis())?;
        (solver.solve(&run.control(0.3, 0.2))?.backward, false)
    };
    let resid = mcondition_residual(&field, b)?;
    let mut checks = vec![Check::le("mcondition_max", resid.iter().fold(0.0, |m, v| m.max(*v)), th.mcondition)];
    let mut z_rms = None;
    if oracle_z {
        // Z(t, s) = 1 for every pair when Y(t) = E[B(T) | F_t].
        let mut acc = 0.0;
        let mut count = 0usize;
        for p in 0..b.n_paths() {
            for i in 0..=n {
                for j in 0..n {
                    if j >= i && !field.has_upper() {
                        continue;
                    }
                    acc += (field.z(p, i, j) - 1.0).powi(2);
                    count += 1;
                }
            }
        }
        let rms = (acc / count as f64).sqrt();
        checks.push(Check::le("z_rms", rms, th.z_rms));
        z_rms = Some(rms);
    }
    let (mean, var) = column_stats(&field.y);
    let mut csv = Vec::new();
    if run.cfg.csv.unwrap_or(false) {
        csv.push(("y".into(), csv_of(|w| field.write_y_csv(w))?));
    }
    let result = json!({
        "terminal": terminal,
        "mcondition_residual": resid,
        "z_rms": z_rms,
        "y_mean": mean,
        "y_variance": var,
    });
    let mut out = run.finish(checks, result, csv);
    if terminal == "brownian" {
        out.problem = "brownian_terminal".into();
    }
    Ok(out)
}

fn check_duality(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let b = &run.bundle;
    let grid = *b.grid();
    let n = grid.n_steps();
    let times = grid.nodes();
    let psi = PathArray::from_fn(b.n_paths(), n + 1, |p, row| {
        let bt = b.b(p, n, 0);
        for (i, v) in row.iter_mut().enumerate() {
            *v = 1.0 + times[i] + bt;
        }
    });
    let instances = run.cfg.instances.unwrap_or(10);
    let mut checks = Vec::new();
    let mut per_lemma = serde_json::Map::new();
    for (label, lemma) in [("fsvie", Lemma::Fsvie), ("bsvie", Lemma::Bsvie)] {
        let mut rows = Vec::new();
        let mut worst = 0.0f64;
        let mut selected = Vec::new();
        for k in 0..instances {
            let kernels = random_kernels(run.seed().wrapping_add(k as u64));
            let d = discriminate_limits(lemma, &kernels, &psi, b, run.cfg.basis(), th.duality_gap)?;
            let best = d.volterra.rel_gap.min(d.fredholm.rel_gap);
            worst = worst.max(best);
            selected.push(d.selected);
            rows.push(json!({
                "instance": k,
                "volterra_gap": d.volterra.rel_gap,
                "fredholm_gap": d.fredholm.rel_gap,
                "selected": d.selected,
            }));
        }
        let first = selected[0];
        let consistent = first.is_some() && selected.iter().all(|s| *s == first);
        checks.push(Check::le(&format!("{label}_rel_gap"), worst, th.duality_gap));
        checks.push(Check::ge(&format!("{label}_unique_variant"), f64::from(u8::from(consistent)), 1.0));
        per_lemma.insert(label.into(), json!({ "instances": rows, "variant": if consistent { first } else { None } }));
    }
    Ok(run.finish(checks, Value::Object(per_lemma), Vec::new()))
}

fn check_gateaux(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let p_list = run.cfg.p_list.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let n = run.bundle.grid().n_steps();
    let dir = random_direction(n, run.seed().wrapping_add(1));
    let spec = run.spec()?;
    let solver = Solver::new(&spec, &run.bundle, run.cfg.basis())?;
    let star = solver.solve(&run.control(0.3, 0.2))?;
    let r = gateaux_check(&solver, &star, &dir, &p_list)?;
    let worst_ratio = r.ratios.iter().flatten().fold(0.0f64, |m, v| m.max(*v));

    let lin_spec = builtin("duality_linear")?;
    let lin_solver = Solver::new(&lin_spec, &run.bundle, run.cfg.basis())?;
    let lin_star = lin_solver.solve(&run.control(0.3, 0.2))?;
    let lin = gateaux_check(&lin_solver, &lin_star, &dir, &p_list)?;
    let lin_worst = lin.x.iter().chain(&lin.y).chain(&lin.z).fold(0.0f64, |m, v| m.max(*v));

    let mut checks = Vec::new();
    if r.ratios.is_empty() {
        checks.push(Check::ge("p_list_length", p_list.len() as f64, 2.0));
    } else {
        checks.push(Check::le("max_halving_ratio", worst_ratio, th.gateaux_ratio));
    }
    checks.push(Check::le("linear_residual", lin_worst, th.linear_residual));
    Ok(run.finish(checks, json!({ "nonlinear": r, "linear": lin }), Vec::new()))
}

fn cost_at(solver: &Solver, spec: &ProblemSpec, ctrl: &ControlPair, b: &BrownianBundle) -> Result<f64> {
    Ok(evaluate_cost(spec, &solver.solve(ctrl)?, b)?.total)
}

fn check_gradient(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let b = &run.bundle;
    let n = b.grid().n_steps();
    let h = run.cfg.fd_step.unwrap_or(1e-2);
    let spec = run.spec()?;
    let solver = Solver::new(&spec, b, run.cfg.basis())?;
    let ctrl = run.control(0.3, 0.2);
    let star = solver.solve(&ctrl)?;
    let adj = solve_adjoint(&spec, &star, &LinearFunctional::objective(), b, run.cfg.optim().adjoint)?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for k in 0..run.cfg.directions.unwrap_or(10) {
        let dir = random_direction(n, run.seed().wrapping_add(100 + k as u64));
        let plus = cost_at(&solver, &spec, &ctrl.axpy(h, &dir), b)?;
        let minus = cost_at(&solver, &spec, &ctrl.axpy(-h, &dir), b)?;
        let fd = (plus - minus) / (2.0 * h);
        let ad = directional_derivative(&adj.gradient, &dir, b)?;
        let rel = (fd - ad).abs() / fd.abs().max(1e-12);
        worst = worst.max(rel);
        rows.push(json!({ "direction": k, "finite_difference": fd, "adjoint": ad, "rel_error": rel }));
    }
    let checks = vec![Check::le("max_rel_error", worst, th.gradient_rel)];
    Ok(run.finish(checks, json!({ "fd_step": h, "directions": rows }), Vec::new()))
}

fn sample_candidates(spec: &ProblemSpec, n_steps: usize, count: usize, seed: u64) -> Vec<ControlPair> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (k, kb) = (spec.sets.control, spec.sets.terminal);
    let draw = |r: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { r.random_range(lo..=hi) } else { lo };
    (0..count)
        .map(|c| {
            if c % 2 == 0 {
                let u = draw(&mut r, k.lo, k.hi);
                let psi = draw(&mut r, kb.lo, kb.hi);
                ControlPair {
                    u: vec![u; n_steps],
                    psi: vec![psi; n_steps + 1],
                    u_fb: None,
                    psi_fb: None,
                }
            } else {
                ControlPair {
                    u: (0..n_steps).map(|_| draw(&mut r, k.lo, k.hi)).collect(),
                    psi: (0..=n_steps).map(|_| draw(&mut r, kb.lo, kb.hi)).collect(),
                    u_fb: None,
                    psi_fb: None,
                }
            }
        })
        .collect()
}

/// Smallest node value of the inequality over `cands` at `star`.
fn inequality_min(spec: &ProblemSpec, star: &Trajectory, cands: &[ControlPair], run: &Run) -> Result<(f64, Vec<f64>)> {
    let b = &run.bundle;
    let lf = MultiplierSet::inactive_default(b.grid()).functional(spec.direction);
    let adj = solve_adjoint(spec, star, &lf, b, run.cfg.optim().adjoint)?;
    let mins = cands
        .iter()
        .map(|c| variational_inequality(spec, star, &adj, c, b).map(|r| r.min))
        .collect::<Result<Vec<_>>>()?;
    Ok((mins.iter().fold(f64::INFINITY, |m, v| m.min(*v)), mins))
}

fn check_smp(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let spec = run.spec()?;
    let b = &run.bundle;
    let n = b.grid().n_steps();
    let cands = sample_candidates(&spec, n, run.cfg.candidates.unwrap_or(20), run.seed().wrapping_add(7));
    let solver = Solver::new(&spec, b, run.cfg.basis())?;
    let star = solver.solve(&run.control(0.5, 0.0))?;
    let (opt_min, opt_all) = inequality_min(&spec, &star, &cands, &run)?;
    let sub = solver.solve(&ControlPair::constant(b.grid(), 1.0, 0.0))?;
    let (sub_min, sub_all) = inequality_min(&spec, &sub, &cands, &run)?;
    let checks = vec![
        Check::ge("optimum_min", opt_min, th.smp_floor),
        Check::le("suboptimal_min", sub_min, th.smp_flag),
    ];
    let result = json!({
        "optimum": { "control": star.ctrl, "candidate_min": opt_all },
        "suboptimal": { "control": sub.ctrl, "candidate_min": sub_all },
    });
    Ok(run.finish(checks, result, Vec::new()))
}

fn initial_control(run: &Run, u: f64, psi: f64) -> Result<ControlPair> {
    let grid = run.bundle.grid();
    let init = match &run.cfg.init {
        Some(c) => c.clone(),
        None => ControlPair::constant(grid, run.cfg.init_u.unwrap_or(u), run.cfg.init_psi.unwrap_or(psi)),
    };
    init.check_grid(grid)?;
    Ok(init)
}

fn optimize_run(run: &Run, spec: &ProblemSpec, init_u: f64, init_psi: f64) -> Result<(OptimReport, Vec<(String, String)>)> {
    let init = initial_control(run, init_u, init_psi)?;
    let report = optimize(spec, &init, &run.cfg.optim(), &run.bundle, run.cfg.basis())?;
    let csv = if run.cfg.csv.unwrap_or(true) {
        vec![("history".into(), csv_of(|w| report.write_csv(w))?)]
    } else {
        Vec::new()
    };
    Ok((report, csv))
}

fn run_optimize(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let spec = run.spec()?;
    let (u0, psi0) = if spec.name == "example41" { (0.0, 0.5) } else { (0.0, 0.0) };
    let (report, csv) = optimize_run(&run, &spec, u0, psi0)?;
    let mut checks = vec![Check::le("stalled", f64::from(u8::from(report.stalled)), 0.0)];
    if let Some(g) = &report.final_gaps {
        checks.push(Check::le("sup_gap", g.sup, th.sup_gap));
    }
    Ok(run.finish(checks, serde_json::to_value(&report)?, csv))
}

fn reproduce_example41(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let spec = run.spec()?;
    let (report, csv) = optimize_run(&run, &spec, 0.0, 0.5)?;
    let dt = run.bundle.grid().dt();
    let u_l2 = (dt * report.final_ctrl.u.iter().map(|u| (u - 0.5).powi(2)).sum::<f64>()).sqrt();
    let j = report.final_cost.total;
    let checks = vec![
        Check::le("cost_gap", (j + 0.25).abs(), th.cost_gap),
        Check::le("control_l2", u_l2, th.control_l2),
        Check::le("psi0", report.final_ctrl.psi[0], th.psi0),
    ];
    let result = json!({ "expected_cost": -0.25, "cost": j, "control_l2": u_l2, "optimizer": report });
    Ok(run.finish(checks, result, csv))
}

fn reproduce_example42(run: Run) -> Result<Outcome> {
    let th = run.cfg.thresholds;
    let spec = run.spec()?;
    let (report, csv) = optimize_run(&run, &spec, 0.0, 0.0)?;
    let b = &run.bundle;
    let star = Solver::new(&spec, b, run.cfg.basis())?.solve(&report.final_ctrl)?;
    let lf = report.multipliers.functional(spec.direction);
    let opts = AdjointOptions { forward_pair: false, ..run.cfg.optim().adjoint };
    let adj = solve_adjoint(&spec, &star, &lf, b, opts)?;
    let comp = complementarity_diagnostics(&spec, &adj.p_proj, &report.multipliers, &star.realized.psi, th.band)?;
    let sup = report.final_gaps.as_ref().map_or(f64::NAN, |g| g.sup);
    let checks = vec![
        Check::le("sup_gap", sup, th.sup_gap),
        Check::le("complementarity_violation", comp.violation_fraction, th.complementarity),
    ];
    let result = json!({ "complementarity": comp, "optimizer": report });
    Ok(run.finish(checks, result, csv))
}
