//! Acceptance suite: one PASS/FAIL line per criterion.

use std::path::Path;
use std::time::Instant;

use fbsvie::condexp::RegressionBasis;
use fbsvie::control::{evaluate_cost, penalty_value};
use fbsvie::grid_rng::{make_grid, sample_brownian};
use fbsvie::problem::{builtin, ControlPair};
use fbsvie::system::Solver;
use rand::{Rng, SeedableRng};
use serde_json::Value;

fn cli(sub: &str, out: &Path, extra: &[&str]) -> (i32, Value) {
    let mut args = vec!["fbsvie", sub, "--assert", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let code = fbsvie::cli::run(args);
    let path = out.join(format!("{sub}.report.json"));
    let report = std::fs::read_to_string(path).map_or(Value::Null, |t| serde_json::from_str(&t).unwrap());
    (code, report)
}

fn check(report: &Value, name: &str) -> f64 {
    report["checks"]
        .as_array()
        .and_then(|cs| cs.iter().find(|c| c["name"] == name))
        .and_then(|c| c["value"].as_f64())
        .unwrap_or(f64::NAN)
}

struct Tally(Vec<(usize, bool)>);

impl Tally {
    fn record(&mut self, id: usize, ok: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        self.0.push((id, ok));
    }
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut t = Tally(Vec::new());
    println!();

    // 1. Closed-form optimum of example41 at N = 32, M = 1e5.
    let start = Instant::now();
    let (code, r) = cli("reproduce-example41", out, &[]);
    let wall = start.elapsed().as_secs_f64();
    let (gap, l2, psi0) = (check(&r, "cost_gap"), check(&r, "control_l2"), check(&r, "psi0"));
    t.record(
        1,
        code == 0 && gap <= 0.02 && l2 <= 0.05 && psi0 <= 0.02 && wall <= 300.0,
        format!("|J+1/4| = {gap:.4}, ||u-1/2|| = {l2:.4}, psi(0) = {psi0:.4}, {wall:.0} s"),
    );

    // 2. Duality on 10 random kernel instances, one consistent limit variant.
    let (code, r) = cli("check-duality", out, &[]);
    let (f, b) = (check(&r, "fsvie_rel_gap"), check(&r, "bsvie_rel_gap"));
    let unique = check(&r, "fsvie_unique_variant") == 1.0 && check(&r, "bsvie_unique_variant") == 1.0;
    t.record(
        2,
        code == 0 && f <= 0.03 && b <= 0.03 && unique,
        format!("worst gaps fsvie {f:.2e}, bsvie {b:.2e}, variant {} / {}", r["result"]["fsvie"]["variant"], r["result"]["bsvie"]["variant"]),
    );

    // 3. M-solution structure of psi(t) = B(T).
    let (code, r) = cli("solve-backward", out, &[]);
    let (m, z) = (check(&r, "mcondition_max"), check(&r, "z_rms"));
    t.record(3, code == 0 && m <= 0.05 && z <= 0.05, format!("max M-residual {m:.4}, Z RMS vs 1 {z:.4}"));

    // 4. Difference quotients converge to the variational system.
    let (code, r) = cli("check-gateaux", out, &[]);
    let (ratio, lin) = (check(&r, "max_halving_ratio"), check(&r, "linear_residual"));
    t.record(4, code == 0 && ratio <= 0.7 && lin <= 1e-10, format!("worst halving ratio {ratio:.3}, linear residual {lin:.1e}"));

    // 5. Adjoint directional derivatives against central differences.
    let (code, r) = cli("check-gradient", out, &[]);
    let rel = check(&r, "max_rel_error");
    t.record(5, code == 0 && rel <= 0.05, format!("worst relative error {rel:.2e} over 10 directions"));

    // 6. Variational inequality at u = 1/2 and at u = 1.
    let (code, r) = cli("check-smp", out, &[]);
    let (opt, sub) = (check(&r, "optimum_min"), check(&r, "suboptimal_min"));
    t.record(6, code == 0 && opt >= -0.03 && sub <= -0.1, format!("min at optimum {opt:.4}, min at u = 1 {sub:.4}"));

    // 7. Penalty functional identities.
    t.record(7, penalty_identities(), "F_eps(incumbent) = sqrt(2) eps and F_eps > 0 on 100 pairs".into());

    // 8. Feasibility and complementarity on example42.
    let (code, r) = cli("reproduce-example42", out, &[]);
    let (sup, comp) = (check(&r, "sup_gap"), check(&r, "complementarity_violation"));
    t.record(8, code == 0 && sup <= 0.05 && comp <= 0.1, format!("sup gap {sup:.2e}, complementarity violations {comp:.3}"));

    // 9. Reports do not depend on the worker count.
    let mut same = true;
    let mut compared = Vec::new();
    for (sub, extra) in [
        ("check-gateaux", vec![]),
        ("reproduce-example42", vec!["--n-paths", "2000", "--n-steps", "16"]),
        ("check-gradient", vec!["--n-paths", "5000", "--n-steps", "16"]),
    ] {
        let mut texts = Vec::new();
        for threads in ["1", "3"] {
            let d = out.join(format!("det-{threads}"));
            let mut args = extra.clone();
            args.extend(["--threads", threads]);
            cli(sub, &d, &args);
            texts.push(std::fs::read(d.join(format!("{sub}.report.json"))).unwrap_or_default());
        }
        same &= !texts[0].is_empty() && texts[0] == texts[1];
        compared.push(sub);
    }
    t.record(9, same, format!("byte-identical reports at 1 and 3 threads for {}", compared.join(", ")));

    let failed: Vec<usize> = t.0.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

fn penalty_identities() -> bool {
    let spec = builtin("example41").unwrap();
    let b = sample_brownian(&make_grid(1.0, 16).unwrap(), 4_000, 1, 7).unwrap().moment_matched().unwrap();
    let solver = Solver::new(&spec, &b, RegressionBasis::default()).unwrap();
    let star = solver.solve(&ControlPair::constant(b.grid(), 0.5, 0.0)).unwrap();
    let reference = evaluate_cost(&spec, &star, &b).unwrap();
    let identity = [0.1, 1e-2, 1e-3].iter().all(|&eps| {
        let f = penalty_value(&spec, &star, &reference, eps, &b).unwrap();
        (f.value - 2f64.sqrt() * eps).abs() <= 1e-10
    });
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let positive = (0..100).all(|_| {
        let ctrl = ControlPair {
            u: (0..16).map(|_| rng.random_range(-0.5..=1.0)).collect(),
            psi: (0..17).map(|_| rng.random_range(0.0..=1.0)).collect(),
            u_fb: None,
            psi_fb: None,
        };
        let f = penalty_value(&spec, &solver.solve(&ctrl).unwrap(), &reference, 1e-3, &b).unwrap();
        f.value > 0.0
    });
    identity && positive
}
