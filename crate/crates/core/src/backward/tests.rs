use super::*;
use crate::condexp::{cond_expect, RegressionBasis};
use crate::grid_rng::{make_grid, sample_brownian};
use crate::problem::{builtin, ControlPair};
use crate::forward::solve_fsvie;

fn setup(m: usize, n: usize, seed: u64) -> (BrownianBundle, Arc<Regressor>) {
    let b = sample_brownian(&make_grid(1.0, n).unwrap(), m, 1, seed).unwrap();
    let r = Arc::new(Regressor::new(&b, RegressionBasis::default()).unwrap());
    (b, r)
}

fn zero_driver() -> FnDriver<impl Fn(usize, usize, usize, f64, f64) -> f64 + Sync> {
    FnDriver::new(|_, _, _, _, _| 0.0, false)
}

fn terminal_level(b: &BrownianBundle) -> PathArray {
    let n = b.grid().n_steps();
    PathArray::from_fn(b.n_paths(), n + 1, |p, row| row.fill(b.b(p, n, 0)))
}

#[test]
fn constant_terminal_gives_constant_solution() {
    let (b, r) = setup(4000, 8, 1);
    let psi = PathArray::from_fn(b.n_paths(), 9, |_, row| row.fill(1.5));
    let opts = BackwardOptions { sub_z: true, upper_z: true };
    let f = solve_bsvie(&zero_driver(), &psi, r, &b, opts).unwrap();
    for p in (0..b.n_paths()).step_by(97) {
        for i in 0..=8 {
            assert!((f.y_at(p, i) - 1.5).abs() < 1e-10);
            for j in 0..8 {
                assert!(f.z(p, i, j).abs() < 1e-8, "z({i},{j}) = {}", f.z(p, i, j));
            }
        }
    }
    let r = mcondition_residual(&f, &b).unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn terminal_identity_is_exact() {
    let (b, r) = setup(2000, 8, 2);
    let psi = PathArray::from_fn(b.n_paths(), 9, |p, row| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = (b.b(p, 8, 0) + i as f64).sin();
        }
    });
    let d = FnDriver::new(|_, _, _, y: f64, z: f64| 0.3 * y - 0.2 * z + 1.0, true);
    let f = solve_bsvie(&d, &psi, r, &b, BackwardOptions::default()).unwrap();
    for p in 0..b.n_paths() {
        assert_eq!(f.y_at(p, 8), psi.get(p, 8));
    }
}

#[test]
fn driver_free_reduces_to_conditional_expectation() {
    let (b, r) = setup(5000, 8, 3);
    let psi = PathArray::from_fn(b.n_paths(), 9, |p, row| {
        for (i, v) in row.iter_mut().enumerate() {
            *v = b.b(p, 8, 0).powi(2) * (1.0 + 0.1 * i as f64);
        }
    });
    let f = solve_bsvie(&zero_driver(), &psi, r.clone(), &b, BackwardOptions::default()).unwrap();
    for i in 0..8 {
        let ce = cond_expect(&psi.column(i), i, &r).unwrap();
        for p in 0..b.n_paths() {
            assert!((f.y_at(p, i) - ce[p]).abs() < 1e-12);
        }
    }
}

#[test]
fn martingale_representation_oracle() {
    let (b, r) = setup(100_000, 32, 4);
    let psi = terminal_level(&b);
    let opts = BackwardOptions { sub_z: true, upper_z: true };
    let f = solve_bsvie(&zero_driver(), &psi, r, &b, opts).unwrap();
    let m = b.n_paths();
    let y_rms = (par::mean(m, |p| (0..=32).map(|i| (f.y_at(p, i) - b.b(p, i, 0)).powi(2)).sum::<f64>()) / 33.0).sqrt();
    assert!(y_rms <= 0.05, "Y rms {y_rms}");
    let z_rms = (par::mean(m, |p| {
        let mut s = 0.0;
        for i in 0..=32 {
            for j in 0..32 {
                s += (f.z(p, i, j) - 1.0).powi(2);
            }
        }
        s
    }) / (33.0 * 32.0))
        .sqrt();
    assert!(z_rms <= 0.05, "Z rms {z_rms}");
    let res = mcondition_residual(&f, &b).unwrap();
    assert!(res.iter().all(|&v| v <= 0.05), "{res:?}");
}

#[test]
fn example41_backward_mean() {
    let (b, r) = setup(20_000, 32, 5);
    let spec = builtin("example41").unwrap();
    let c = ControlPair::constant(b.grid(), 0.5, 0.0).realize(&b, Some(&spec.sets)).unwrap();
    let x = solve_fsvie(&spec, &c, &b).unwrap();
    let f = solve_backward(&spec, &c, &x, r, &b, BackwardOptions::default()).unwrap();
    let y0 = par::mean(b.n_paths(), |p| f.y_at(p, 0));
    assert!((y0 + 0.5).abs() <= 0.02, "Y(0) = {y0}");
}

#[test]
fn agrees_with_bsde_recursion() {
    // t-independent driver and terminal value: the equation is a BSDE.
    let (b, r) = setup(50_000, 16, 6);
    let grid = *b.grid();
    let g = move |s: f64, y: f64| -0.5 * y + s.sin();
    let xi: Vec<f64> = (0..b.n_paths()).map(|p| b.b(p, 16, 0).powi(2)).collect();
    let psi = PathArray::from_fn(b.n_paths(), 17, |p, row| row.fill(xi[p]));
    let d = FnDriver::new(move |p: usize, _i, j, y, _z| {
        let _ = p;
        g(grid.t(j), y)
    }, false);
    let f = solve_bsvie(&d, &psi, r.clone(), &b, BackwardOptions::default()).unwrap();

    let dt = grid.dt();
    let mut y_next = xi.clone();
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in (0..16).rev() {
        let target: Vec<f64> = y_next.iter().map(|&y| y + g(grid.t(i + 1), y) * dt).collect();
        let yi = cond_expect(&target, i, &r).unwrap();
        err += par::mean(b.n_paths(), |p| (yi[p] - f.y_at(p, i)).powi(2));
        norm += par::mean(b.n_paths(), |p| yi[p].powi(2));
        y_next = yi;
    }
    let rel = (err / norm).sqrt();
    assert!(rel <= 0.05, "relative L2 error {rel}");
}

#[test]
fn stability_in_terminal_process() {
    let (b, r) = setup(20_000, 16, 7);
    let spec = builtin("lq_smoke").unwrap();
    let grid = *b.grid();
    let bound = (spec.model.lipschitz() * grid.horizon()).exp() * 2.0;
    for k in 0..5 {
        let a = ControlPair::constant(&grid, 0.3, 0.2 + 0.1 * k as f64);
        let mut bb = ControlPair::constant(&grid, 0.3, -0.4 + 0.05 * k as f64);
        bb.psi_fb = Some(vec![[0.2, 0.1 * k as f64]; 17]);
        let solve = |c: &ControlPair| {
            let rc = c.realize(&b, Some(&spec.sets)).unwrap();
            let x = solve_fsvie(&spec, &rc, &b).unwrap();
            let f = solve_backward(&spec, &rc, &x, r.clone(), &b, BackwardOptions::default()).unwrap();
            (rc, f)
        };
        let (ra, fa) = solve(&a);
        let (rb, fb) = solve(&bb);
        let l2 = |f: &(dyn Fn(usize) -> f64 + Sync)| par::mean(b.n_paths(), f).sqrt();
        let dy = l2(&|p| (0..16).map(|i| (fa.y_at(p, i) - fb.y_at(p, i)).powi(2)).sum::<f64>() * grid.dt());
        let dpsi = l2(&|p| (0..16).map(|i| (ra.psi.get(p, i) - rb.psi.get(p, i)).powi(2)).sum::<f64>() * grid.dt());
        assert!(dy <= bound * dpsi, "pair {k}: {dy} > {bound} * {dpsi}");
    }
}

#[test]
fn empty_field_is_an_error() {
    let (b, r) = setup(200, 4, 8);
    let psi = PathArray::zeros(200, 5);
    let f = solve_bsvie(&zero_driver(), &psi, r, &b, BackwardOptions { sub_z: false, upper_z: false }).unwrap();
    assert!(matches!(mcondition_residual(&f, &b), Err(Error::Precondition(_))));
}

#[test]
fn divergence_is_reported() {
    let (b, r) = setup(200, 4, 9);
    let psi = PathArray::from_fn(200, 5, |_, row| row.fill(1.0));
    let d = FnDriver::new(|_, _, _, y: f64, _| 1e300 * y * y, false);
    assert!(matches!(
        solve_bsvie(&d, &psi, r, &b, BackwardOptions::default()),
        Err(Error::Divergence { .. })
    ));
}
