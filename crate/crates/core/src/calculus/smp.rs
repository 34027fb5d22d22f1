use serde::{Deserialize, Serialize};

use super::AdjointField;
use crate::error::Result;
use crate::grid_rng::BrownianBundle;
use crate::par;
use crate::problem::{ControlPair, ProblemSpec};
use crate::system::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    /// `E[G_psi(k) psi^_k + G_u(k) u^_k]` per node `k`.
    pub per_node: Vec<f64>,
    pub min: f64,
    pub argmin: usize,
    /// `dt * sum_k per_node[k]`, the directional derivative.
    pub aggregate: f64,
    /// Terms grouped by the outer time of their kernels instead of the
    /// control node.
    pub literal: Vec<f64>,
    pub literal_min: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

/// Evaluates the maximum-principle inequality at `candidate` node-wise.
pub fn variational_inequality(
    spec: &ProblemSpec,
    star: &Trajectory,
    adj: &AdjointField,
    candidate: &ControlPair,
    bundle: &BrownianBundle,
) -> Result<InequalityReport> {
    let grid = *bundle.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let times = grid.nodes();
    let t = |i: usize| times[i];
    let model = spec.model.as_ref();
    let lf = &adj.functional;
    let cand = candidate.realize(bundle, Some(&spec.sets))?;
    let (x, u, bw) = (&star.forward, &star.realized.u, &star.backward);
    let g = &adj.gradient;

    // Columns 0..=n: node-wise; n+1..=2n+1: literal.
    let sums = par::sum_vec(bundle.n_paths(), 2 * (n + 1), |p, acc| {
        let dpsi = |i: usize| cand.psi.get(p, i) - star.realized.psi.get(p, i);
        let du = |k: usize| cand.u.get(p, k) - u.get(p, k);
        for i in 0..=n {
            let v = g.psi.get(p, i) * dpsi(i);
            acc[i] += v;
            acc[n + 1 + i] += v;
        }
        for k in 0..n {
            let uk = u.get(p, k);
            let (x1, y1) = (x.at(p, k + 1), bw.y_at(p, k + 1));
            let total = g.u.get(p, k) * du(k);
            acc[k] += total;
            let mut rest = total;
            for i in 0..=k {
                let z = bw.z(p, k + 1, i);
                let mut c = dt * model.g(t(i), t(k + 1), x1, y1, z, uk).u * adj.p_proj.get(p, i);
                if lf.w_l2 != 0.0 {
                    c += lf.w_l2 * dt * model.l2(t(i), t(k + 1), x1, y1, z, uk).u;
                }
                acc[n + 1 + i] += c * du(k);
                rest -= c * du(k);
            }
            if lf.w_l1 != 0.0 {
                for i in k + 1..n {
                    let c = lf.w_l1 * dt * model.l1(t(i), t(k), x.at(p, k), uk).u * du(k);
                    acc[n + 1 + i] += c;
                    rest -= c;
                }
            }
            acc[n + 1 + k] += rest;
        }
    });
    let m = bundle.n_paths() as f64;
    let per_node: Vec<f64> = sums[..=n].iter().map(|v| v / m).collect();
    let literal: Vec<f64> = sums[n + 1..].iter().map(|v| v / m).collect();
    let (argmin, min) = per_node
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    let literal_min = literal.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(InequalityReport {
        aggregate: dt * per_node.iter().sum::<f64>(),
        per_node,
        min,
        argmin,
        literal,
        literal_min,
        n_paths: bundle.n_paths(),
        n_steps: n,
        seed: bundle.seed(),
    })
}
