use super::*;
use crate::condexp::RegressionBasis;
use crate::grid_rng::{make_grid, sample_brownian, BrownianBundle};
use crate::problem::{builtin, ControlPair};
use crate::system::{Solver, Trajectory};

fn random_dir(n: usize, seed: u64) -> ControlPair {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ControlPair {
        u: (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        psi: (0..=n).map(|_| r.random_range(-1.0..1.0)).collect(),
        u_fb: None,
        psi_fb: None,
    }
}

fn bundle(n: usize, m: usize, seed: u64) -> BrownianBundle {
    sample_brownian(&make_grid(1.0, n).unwrap(), m, 1, seed).unwrap()
}

fn lq_star(b: &BrownianBundle) -> (crate::problem::ProblemSpec, Trajectory) {
    let spec = builtin("lq_smoke").unwrap();
    let star = Solver::new(&spec, b, RegressionBasis::default())
        .unwrap()
        .solve(&ControlPair::constant(b.grid(), 0.3, 0.2))
        .unwrap();
    (spec, star)
}

#[test]
fn zero_direction_gives_zero_variation() {
    let b = bundle(8, 4_000, 1);
    let (spec, star) = lq_star(&b);
    let var = solve_variation(&spec, &star, &ControlPair::constant(b.grid(), 0.0, 0.0), &b).unwrap();
    assert!(var.dx.as_slice().iter().all(|v| *v == 0.0));
    assert!(var.dy.y.as_slice().iter().all(|v| *v == 0.0));
    assert_eq!(var.dy.z(7, 5, 2), 0.0);
}

#[test]
fn variation_is_linear() {
    let b = bundle(8, 4_000, 2);
    let (spec, star) = lq_star(&b);
    let dir = random_dir(8, 3);
    let v1 = solve_variation(&spec, &star, &dir, &b).unwrap();
    let v2 = solve_variation(&spec, &star, &ControlPair::constant(b.grid(), 0.0, 0.0).axpy(2.0, &dir), &b).unwrap();
    for p in (0..4_000).step_by(37) {
        for i in 0..=8 {
            assert!((v2.dx.get(p, i) - 2.0 * v1.dx.get(p, i)).abs() <= 1e-10);
            assert!((v2.dy.y_at(p, i) - 2.0 * v1.dy.y_at(p, i)).abs() <= 1e-10);
            for j in 0..i {
                assert!((v2.dy.z(p, i, j) - 2.0 * v1.dy.z(p, i, j)).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn example41_variation_is_an_ito_integral() {
    let spec = builtin("example41").unwrap();
    let b = bundle(32, 100_000, 4);
    let star = Solver::new(&spec, &b, RegressionBasis::default())
        .unwrap()
        .solve(&ControlPair::constant(b.grid(), 0.5, 0.0))
        .unwrap();
    let mut dir = ControlPair::constant(b.grid(), 1.0, 0.0);
    dir.psi.fill(0.0);
    let var = solve_variation(&spec, &star, &dir, &b).unwrap();
    let m2 = var.dx.column(32).iter().map(|v| v * v).sum::<f64>() / 100_000.0;
    assert!((m2 - 1.0).abs() <= 0.05, "{m2}");
}

#[test]
fn gateaux_residual_vanishes_on_linear_problem() {
    let spec = builtin("duality_linear").unwrap();
    let b = bundle(8, 4_000, 5);
    let solver = Solver::new(&spec, &b, RegressionBasis::default()).unwrap();
    let star = solver.solve(&ControlPair::constant(b.grid(), 0.3, 0.2)).unwrap();
    let r = gateaux_check(&solver, &star, &random_dir(8, 6), &[0.2, 0.1, 0.05]).unwrap();
    for k in 0..3 {
        assert!(r.x[k] <= 1e-10 && r.y[k] <= 1e-10 && r.z[k] <= 1e-10, "{r:?}");
        assert!(!r.projected[k]);
    }
}

#[test]
fn gateaux_residual_decays_on_lq_smoke() {
    let b = bundle(16, 10_000, 7);
    let (spec, star) = lq_star(&b);
    let solver = Solver::new(&spec, &b, RegressionBasis::default()).unwrap();
    let r = gateaux_check(&solver, &star, &random_dir(16, 8), &[0.2, 0.1, 0.05]).unwrap();
    for (ratio, order) in r.ratios.iter().zip(&r.orders) {
        for c in 0..3 {
            assert!(ratio[c] <= 0.7 && order[c] >= 0.8, "{r:?}");
        }
    }
    let zero = gateaux_check(&solver, &star, &ControlPair::constant(b.grid(), 0.0, 0.0), &[0.1]).unwrap();
    assert!(zero.x[0] == 0.0 && zero.y[0] == 0.0 && zero.z[0] == 0.0);
}

#[test]
fn gateaux_rejects_bad_step_list() {
    let b = bundle(4, 1_000, 9);
    let (spec, star) = lq_star(&b);
    let solver = Solver::new(&spec, &b, RegressionBasis::default()).unwrap();
    let dir = random_dir(4, 1);
    assert!(gateaux_check(&solver, &star, &dir, &[0.1, 0.2]).is_err());
    assert!(gateaux_check(&solver, &star, &dir, &[]).is_err());
}

#[test]
fn adjoint_reproduces_the_variation() {
    let b = bundle(16, 20_000, 5);
    let (spec, star) = lq_star(&b);
    let lf = LinearFunctional::objective();
    let exact = solve_adjoint(&spec, &star, &lf, &b, AdjointOptions::default()).unwrap();
    let opts = AdjointOptions { assembly: Assembly::Adapted, ..Default::default() };
    let adapted = solve_adjoint(&spec, &star, &lf, &b, opts).unwrap();
    for s in 0..4 {
        let dir = random_dir(16, s);
        let var = solve_variation(&spec, &star, &dir, &b).unwrap();
        let dv = apply_functional(&spec, &star, &var, &lf, &b);
        let de = directional_derivative(&exact.gradient, &dir, &b).unwrap();
        let da = directional_derivative(&adapted.gradient, &dir, &b).unwrap();
        assert!((dv - de).abs() <= 1e-9 * dv.abs().max(1.0), "{dv} {de}");
        assert!((dv - da).abs() <= 0.01, "{dv} {da}");
    }
}

#[test]
fn adjoint_pair_satisfies_its_mcondition() {
    let b = bundle(16, 20_000, 6);
    let (spec, star) = lq_star(&b);
    let adj = solve_adjoint(&spec, &star, &LinearFunctional::objective(), &b, AdjointOptions::default()).unwrap();
    let r = crate::backward::mcondition_residual(adj.m.as_ref().unwrap(), &b).unwrap();
    // Integrated over time: early nodes carry little variance and only one
    // increment to represent it.
    let var: Vec<f64> = (0..=16)
        .map(|i| {
            let c = adj.m.as_ref().unwrap().y.column(i);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64
        })
        .collect();
    let total = r.iter().zip(&var).map(|(r, v)| r * v).sum::<f64>() / var.iter().sum::<f64>();
    assert!(total <= 0.05, "{total} {r:?}");
    assert!(adj.p.first_non_finite().is_none());
}

#[test]
fn horizon_limit_p_equation_breaks_consistency() {
    let b = bundle(16, 10_000, 5);
    let (spec, star) = lq_star(&b);
    let lf = LinearFunctional::objective();
    let opts = AdjointOptions { p_limit: crate::problem::UpperLimit::Horizon, ..Default::default() };
    let adj = solve_adjoint(&spec, &star, &lf, &b, opts).unwrap();
    assert!(adj.sweeps > 1);
    let mut worst = 0.0f64;
    for s in 0..4 {
        let dir = random_dir(16, s);
        let var = solve_variation(&spec, &star, &dir, &b).unwrap();
        let dv = apply_functional(&spec, &star, &var, &lf, &b);
        let df = directional_derivative(&adj.gradient, &dir, &b).unwrap();
        worst = worst.max((dv - df).abs() / dv.abs());
    }
    assert!(worst > 0.05, "{worst}");
}

#[test]
fn example41_gradient_matches_closed_form() {
    let spec = builtin("example41").unwrap();
    let b = bundle(32, 20_000, 8).moment_matched().unwrap();
    let star = Solver::new(&spec, &b, RegressionBasis::default())
        .unwrap()
        .solve(&ControlPair::constant(b.grid(), 0.3, 0.0))
        .unwrap();
    for assembly in [Assembly::Pathwise, Assembly::Adapted] {
        let opts = AdjointOptions { assembly, ..Default::default() };
        let adj = solve_adjoint(&spec, &star, &LinearFunctional::objective(), &b, opts).unwrap();
        for (k, g) in adj.gradient.mean_u().iter().enumerate() {
            assert!((g - (2.0 * 0.3 - 1.0)).abs() <= 0.02, "{assembly:?} node {k}: {g}");
        }
        let gp = adj.gradient.mean_psi();
        assert!((gp[0] * b.grid().dt() - 1.0).abs() <= 1e-9);
        assert!(gp[1..].iter().all(|v| v.abs() <= 1e-9));
    }
}

#[test]
fn example42_constraint_adjoint_grows_exponentially() {
    let spec = crate::problem::example42(crate::problem::Example42Params::default()).unwrap();
    let b = bundle(16, 4_000, 9);
    let star = Solver::new(&spec, &b, RegressionBasis::default())
        .unwrap()
        .solve(&ControlPair::constant(b.grid(), 0.0, 0.5))
        .unwrap();
    let mut lf = LinearFunctional::objective();
    lf.w_q = 0.0;
    lf.c_agg = 1.0;
    let adj = solve_adjoint(&spec, &star, &lf, &b, AdjointOptions::default()).unwrap();
    let dt = b.grid().dt();
    for j in 0..16 {
        let expect = (1.0 + dt).powi(j as i32);
        for p in (0..4_000).step_by(101) {
            assert!((adj.p.get(p, j) - expect).abs() <= 1e-9, "{j}");
        }
    }
}

#[test]
fn inequality_vanishes_at_the_starred_control() {
    let b = bundle(16, 10_000, 10);
    let (spec, star) = lq_star(&b);
    let adj = solve_adjoint(&spec, &star, &LinearFunctional::objective(), &b, AdjointOptions::default()).unwrap();
    let r = variational_inequality(&spec, &star, &adj, &star.ctrl, &b).unwrap();
    assert!(r.per_node.iter().chain(&r.literal).all(|v| *v == 0.0));
}

#[test]
fn inequality_groupings_share_the_aggregate() {
    let b = bundle(16, 10_000, 11);
    let (spec, star) = lq_star(&b);
    let adj = solve_adjoint(&spec, &star, &LinearFunctional::objective(), &b, AdjointOptions::default()).unwrap();
    let cand = ControlPair::constant(b.grid(), -0.2, 0.6);
    let r = variational_inequality(&spec, &star, &adj, &cand, &b).unwrap();
    let lit: f64 = r.literal.iter().sum::<f64>() * b.grid().dt();
    assert!((lit - r.aggregate).abs() <= 1e-10 * r.aggregate.abs().max(1.0));
    let dir = cand.difference(&star.ctrl);
    let dd = directional_derivative(&adj.gradient, &dir, &b).unwrap();
    assert!((dd - r.aggregate).abs() <= 1e-10 * dd.abs().max(1.0));
}

#[test]
fn example41_inequality_flags_a_suboptimal_control() {
    let spec = builtin("example41").unwrap();
    let b = bundle(32, 20_000, 12).moment_matched().unwrap();
    let star = Solver::new(&spec, &b, RegressionBasis::default())
        .unwrap()
        .solve(&ControlPair::constant(b.grid(), 1.0, 0.0))
        .unwrap();
    let lf = MultiplierSet::inactive_default(b.grid()).functional(spec.direction);
    let adj = solve_adjoint(&spec, &star, &lf, &b, AdjointOptions::default()).unwrap();
    let r = variational_inequality(&spec, &star, &adj, &ControlPair::constant(b.grid(), 0.0, 0.0), &b).unwrap();
    assert!(r.min <= -0.1, "{r:?}");
}
