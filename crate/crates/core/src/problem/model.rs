//! Coefficient and cost callbacks of a scalar FBSVIE control problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Value and first partials of a function of `(x, u)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct D2 {
    pub v: f64,
    pub x: f64,
    pub u: f64,
}

/// Value and first partials of a function of `(x, y, z, u)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct D4 {
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
}

/// Value and derivative of a function of one variable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct D1 {
    pub v: f64,
    pub d: f64,
}

/// State equations: `X(t) = f(t) + int_0^t b ds + int_0^t sigma dB` and
/// `Y(t) = psi(t) + int_t^T g(t, s, X(s), Y(s), Z(s, t), u(s)) ds - int_t^T Z(t, s) dB`.
///
/// `b` and `sigma` are evaluated with `s <= t`, `g` with `s >= t`.
pub trait Coefficients: Send + Sync {
    fn f(&self, t: f64) -> f64;
    fn b(&self, t: f64, s: f64, x: f64, u: f64) -> D2;
    fn sigma(&self, t: f64, s: f64, x: f64, u: f64) -> D2;
    fn g(&self, t: f64, s: f64, x: f64, y: f64, z: f64, u: f64) -> D4;

    /// Declared Lipschitz constant of `b`, `sigma` and `g` in their state and
    /// control arguments.
    fn lipschitz(&self) -> f64;

    /// True when `sigma` does not depend on `x`.
    fn sigma_state_free(&self) -> bool {
        false
    }
}

/// Cost integrands. The objective is
/// `E[ int int_{s<t} l1 + int int_{s>t} l2 + int q(psi) + h(X(T)) + int k(Y) ]`.
pub trait Costs: Send + Sync {
    fn l1(&self, t: f64, s: f64, x: f64, u: f64) -> D2;
    fn l2(&self, t: f64, s: f64, x: f64, y: f64, z: f64, u: f64) -> D4;
    fn q(&self, psi: f64) -> D1;
    fn h(&self, x: f64) -> D1;
    fn k(&self, y: f64) -> D1;

    /// Declared growth constant `C` with `|l1_x| <= C (1 + |x| + |u|)`.
    fn growth(&self) -> f64;

    /// Cost terms that are not identically zero.
    fn active_terms(&self) -> CostTerms {
        CostTerms::ALL
    }
}

/// One flag per cost term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CostTerms {
    pub q: bool,
    pub h: bool,
    pub k: bool,
    pub l1: bool,
    pub l2: bool,
}

impl CostTerms {
    pub const ALL: CostTerms = CostTerms {
        q: true,
        h: true,
        k: true,
        l1: true,
        l2: true,
    };

    /// In the order `[q, h, k, l1, l2]`.
    pub fn as_array(self) -> [bool; 5] {
        [self.q, self.h, self.k, self.l1, self.l2]
    }
}

pub trait Model: Coefficients + Costs {}

impl<T: Coefficients + Costs> Model for T {}

/// Largest discrepancy between supplied and finite-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub max_rel_err: f64,
    pub worst: &'static str,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

/// Compares every supplied partial derivative with a central finite
/// difference at `n_points` random points in `[0,T]^2 x [-range, range]^4`.
pub fn check_derivatives(model: &dyn Model, horizon: f64, n_points: usize, range: f64, seed: u64) -> DerivativeCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = DerivativeCheck {
        max_rel_err: 0.0,
        worst: "",
    };
    let mut record = |name: &'static str, a: f64, fd: f64| {
        let e = rel_err(a, fd);
        if e > worst.max_rel_err || e.is_nan() {
            worst = DerivativeCheck { max_rel_err: e, worst: name };
        }
    };
    for _ in 0..n_points {
        let t1 = rng.random::<f64>() * horizon;
        let t2 = rng.random::<f64>() * horizon;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let mut v = || (2.0 * rng.random::<f64>() - 1.0) * range;
        let (x, y, z, u) = (v(), v(), v(), v());

        let fd2 = |f: &dyn Fn(f64, f64) -> f64| {
            (
                (f(x + h, u) - f(x - h, u)) / (2.0 * h),
                (f(x, u + h) - f(x, u - h)) / (2.0 * h),
            )
        };
        for (name, f) in [
            ("b", &(|x, u| model.b(hi, lo, x, u)) as &dyn Fn(f64, f64) -> D2),
            ("sigma", &|x, u| model.sigma(hi, lo, x, u)),
            ("l1", &|x, u| model.l1(hi, lo, x, u)),
        ] {
            let d = f(x, u);
            let (fx, fu) = fd2(&|x, u| f(x, u).v);
            record(name, d.x, fx);
            record(name, d.u, fu);
        }

        type F4<'a> = &'a dyn Fn(f64, f64, f64, f64) -> D4;
        for (name, f) in [
            ("g", &(|x, y, z, u| model.g(lo, hi, x, y, z, u)) as F4),
            ("l2", &|x, y, z, u| model.l2(lo, hi, x, y, z, u)),
        ] {
            let d = f(x, y, z, u);
            let c = |a: D4, b: D4| (a.v - b.v) / (2.0 * h);
            record(name, d.x, c(f(x + h, y, z, u), f(x - h, y, z, u)));
            record(name, d.y, c(f(x, y + h, z, u), f(x, y - h, z, u)));
            record(name, d.z, c(f(x, y, z + h, u), f(x, y, z - h, u)));
            record(name, d.u, c(f(x, y, z, u + h), f(x, y, z, u - h)));
        }

        for (name, f) in [
            ("q", &(|a| model.q(a)) as &dyn Fn(f64) -> D1),
            ("h", &|a| model.h(a)),
            ("k", &|a| model.k(a)),
        ] {
            record(name, f(x).d, (f(x + h).v - f(x - h).v) / (2.0 * h));
        }
    }
    worst
}

/// Largest sampled ratio `|F(a) - F(b)| / |a - b|` over `b`, `sigma` and `g`,
/// divided by the declared Lipschitz constant.
pub fn lipschitz_ratio(model: &dyn Model, horizon: f64, n_pairs: usize, range: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let t1 = rng.random::<f64>() * horizon;
        let t2 = rng.random::<f64>() * horizon;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let mut pt = || -> [f64; 4] { std::array::from_fn(|_| (2.0 * rng.random::<f64>() - 1.0) * range) };
        let a = pt();
        let b = pt();
        let dist2 = ((a[0] - b[0]).powi(2) + (a[3] - b[3]).powi(2)).sqrt();
        let dist4 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let q1 = (model.b(hi, lo, a[0], a[3]).v - model.b(hi, lo, b[0], b[3]).v).abs() / dist2;
        let q2 = (model.sigma(hi, lo, a[0], a[3]).v - model.sigma(hi, lo, b[0], b[3]).v).abs() / dist2;
        let q3 = (model.g(lo, hi, a[0], a[1], a[2], a[3]).v - model.g(lo, hi, b[0], b[1], b[2], b[3]).v).abs() / dist4;
        worst = worst.max(q1).max(q2).max(q3);
    }
    worst / model.lipschitz()
}

/// Largest sampled ratio `|l1_x| / (C (1 + |x| + |u|))`.
pub fn growth_ratio(model: &dyn Model, horizon: f64, n_points: usize, range: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_points {
        let t1 = rng.random::<f64>() * horizon;
        let t2 = rng.random::<f64>() * horizon;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let x = (2.0 * rng.random::<f64>() - 1.0) * range;
        let u = (2.0 * rng.random::<f64>() - 1.0) * range;
        let d = model.l1(hi, lo, x, u);
        worst = worst.max(d.x.abs() / (model.growth() * (1.0 + x.abs() + u.abs())));
    }
    worst
}
