use serde::{Deserialize, Serialize};

use crate::calculus::MultiplierSet;
use crate::error::{Error, Result};
use crate::field::PathArray;
use crate::problem::ProblemSpec;

/// Sign conditions of the stationarity density `p + s h1_bar q'(psi)` on the
/// cells where `psi` sits at the lower bound, the upper bound, or inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    pub lower_cells: usize,
    pub upper_cells: usize,
    pub interior_cells: usize,
    /// Lower-bound cells with a value below `-band`.
    pub lower_violations: usize,
    /// Upper-bound cells with a value above `band`.
    pub upper_violations: usize,
    /// Interior cells with `|value| > band`.
    pub interior_violations: usize,
    pub violation_fraction: f64,
    pub band: f64,
}

/// `p` holds the projected backward-state adjoint density per path and
/// node; the last node (zero quadrature weight) is skipped.
pub fn complementarity_diagnostics(
    spec: &ProblemSpec,
    p: &PathArray,
    multipliers: &MultiplierSet,
    psi: &PathArray,
    band: f64,
) -> Result<ComplementarityReport> {
    if p.n_paths() != psi.n_paths() || p.n_cols() != psi.n_cols() || p.n_cols() < 2 {
        return Err(Error::config("adjoint and terminal process shapes differ"));
    }
    if !(band >= 0.0) {
        return Err(Error::config("band must be nonnegative"));
    }
    let s = spec.direction.sign();
    let k = spec.sets.terminal;
    let tol = 1e-12 * (1.0 + k.lo.abs().max(k.hi.abs()).min(1e12));
    let mut r = ComplementarityReport {
        lower_cells: 0,
        upper_cells: 0,
        interior_cells: 0,
        lower_violations: 0,
        upper_violations: 0,
        interior_violations: 0,
        violation_fraction: 0.0,
        band,
    };
    for path in 0..p.n_paths() {
        for i in 0..p.n_cols() - 1 {
            let x = psi.get(path, i);
            let v = p.get(path, i) + s * multipliers.h1_bar * spec.model.q(x).d;
            if x <= k.lo + tol {
                r.lower_cells += 1;
                r.lower_violations += usize::from(v < -band);
            } else if x >= k.hi - tol {
                r.upper_cells += 1;
                r.upper_violations += usize::from(v > band);
            } else {
                r.interior_cells += 1;
                r.interior_violations += usize::from(v.abs() > band);
            }
        }
    }
    let cells = r.lower_cells + r.upper_cells + r.interior_cells;
    r.violation_fraction = (r.lower_violations + r.upper_violations + r.interior_violations) as f64 / cells as f64;
    Ok(r)
}
