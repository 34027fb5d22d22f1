use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fbsvie::calculus::{solve_adjoint, AdjointOptions, LinearFunctional};
use fbsvie::condexp::RegressionBasis;
use fbsvie::grid_rng::{make_grid, sample_brownian, BrownianBundle};
use fbsvie::problem::{builtin, ControlPair};
use fbsvie::system::Solver;

fn bundle() -> BrownianBundle {
    sample_brownian(&make_grid(1.0, 16).unwrap(), 20_000, 1, 3).unwrap()
}

/// Runs `f` on a pool of `threads` workers, or inline without the
/// `parallel` feature.
fn on_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        return rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f);
    }
    let _ = threads;
    f()
}

fn pipelines(c: &mut Criterion) {
    let b = bundle();
    let spec = builtin("lq_smoke").unwrap();
    let solver = Solver::new(&spec, &b, RegressionBasis::default()).unwrap();
    let ctrl = ControlPair::constant(b.grid(), 0.3, 0.2);
    let star = solver.solve(&ctrl).unwrap();
    let lf = LinearFunctional::objective();

    let mut g = c.benchmark_group("lq_smoke_m20000_n16");
    g.sample_size(10);
    for (label, threads) in [("sequential", Some(1)), ("default_pool", None)] {
        g.bench_with_input(BenchmarkId::new("solve", label), &threads, |bch, &t| {
            bch.iter(|| on_pool(t, || solver.solve(&ctrl).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("adjoint", label), &threads, |bch, &t| {
            bch.iter(|| on_pool(t, || solve_adjoint(&spec, &star, &lf, &b, AdjointOptions::default()).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, pipelines);
criterion_main!(benches);
