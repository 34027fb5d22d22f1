//! Built-in problem instances.

use super::model::{Coefficients, CostTerms, Costs, D1, D2, D4};

/// `X(t) = int_0^T t u(s) dB`, `Y(t) = psi(t) + int_t^1 (t - 1) u(s) ds - ...`,
/// cost `E[X(1)^2 + Y(0)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Example41;

impl Coefficients for Example41 {
    fn f(&self, _t: f64) -> f64 {
        0.0
    }
    fn b(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn sigma(&self, t: f64, _s: f64, _x: f64, u: f64) -> D2 {
        D2 { v: t * u, x: 0.0, u: t }
    }
    fn g(&self, t: f64, _s: f64, _x: f64, _y: f64, _z: f64, u: f64) -> D4 {
        D4 {
            v: (t - 1.0) * u,
            u: t - 1.0,
            ..D4::default()
        }
    }
    fn lipschitz(&self) -> f64 {
        1.0
    }
    fn sigma_state_free(&self) -> bool {
        true
    }
}

impl Costs for Example41 {
    fn l1(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn l2(&self, _t: f64, _s: f64, _x: f64, _y: f64, _z: f64, _u: f64) -> D4 {
        D4::default()
    }
    fn q(&self, _psi: f64) -> D1 {
        D1::default()
    }
    fn h(&self, x: f64) -> D1 {
        D1 { v: x * x, d: 2.0 * x }
    }
    fn k(&self, y: f64) -> D1 {
        D1 { v: y, d: 1.0 }
    }
    fn growth(&self) -> f64 {
        1.0
    }
    fn active_terms(&self) -> CostTerms {
        CostTerms {
            q: false,
            h: true,
            k: true,
            l1: false,
            l2: false,
        }
    }
}

/// Backward equation with driver `a y + b z`, cost `(1/2) E int psi^2`.
#[derive(Debug, Clone, Copy)]
pub struct Example42 {
    pub a: f64,
    pub b: f64,
}

impl Coefficients for Example42 {
    fn f(&self, _t: f64) -> f64 {
        0.0
    }
    fn b(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn sigma(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn g(&self, _t: f64, _s: f64, _x: f64, y: f64, z: f64, _u: f64) -> D4 {
        D4 {
            v: self.a * y + self.b * z,
            y: self.a,
            z: self.b,
            ..D4::default()
        }
    }
    fn lipschitz(&self) -> f64 {
        (self.a.abs() + self.b.abs()).max(1e-12)
    }
    fn sigma_state_free(&self) -> bool {
        true
    }
}

impl Costs for Example42 {
    fn l1(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn l2(&self, _t: f64, _s: f64, _x: f64, _y: f64, _z: f64, _u: f64) -> D4 {
        D4::default()
    }
    fn q(&self, psi: f64) -> D1 {
        D1 { v: 0.5 * psi * psi, d: psi }
    }
    fn h(&self, _x: f64) -> D1 {
        D1::default()
    }
    fn k(&self, _y: f64) -> D1 {
        D1::default()
    }
    fn growth(&self) -> f64 {
        1.0
    }
    fn active_terms(&self) -> CostTerms {
        CostTerms {
            q: true,
            h: false,
            k: false,
            l1: false,
            l2: false,
        }
    }
}

/// Smooth nonlinear instance with every coefficient and cost term active.
#[derive(Debug, Clone, Copy, Default)]
pub struct LqSmoke;

impl Coefficients for LqSmoke {
    fn f(&self, _t: f64) -> f64 {
        1.0
    }
    fn b(&self, t: f64, s: f64, x: f64, u: f64) -> D2 {
        let e = (-(t - s)).exp();
        D2 {
            v: e * (-0.4 * x + 0.3 * x.sin()) + 0.5 * u,
            x: e * (-0.4 + 0.3 * x.cos()),
            u: 0.5,
        }
    }
    fn sigma(&self, t: f64, s: f64, x: f64, u: f64) -> D2 {
        let e = (-(t - s)).exp();
        D2 {
            v: 0.3 * e * (1.0 + 0.5 * x.sin()) + 0.2 * u,
            x: 0.15 * e * x.cos(),
            u: 0.2,
        }
    }
    fn g(&self, t: f64, s: f64, x: f64, y: f64, z: f64, u: f64) -> D4 {
        let e = (-(s - t)).exp();
        let th = x.tanh();
        D4 {
            v: 0.3 * th - 0.4 * e * y + 0.2 * z + 0.5 * u,
            x: 0.3 * (1.0 - th * th),
            y: -0.4 * e,
            z: 0.2,
            u: 0.5,
        }
    }
    fn lipschitz(&self) -> f64 {
        1.4
    }
}

impl Costs for LqSmoke {
    fn l1(&self, _t: f64, _s: f64, x: f64, u: f64) -> D2 {
        D2 {
            v: 0.1 * (x - 1.0).powi(2) + 0.1 * u * u,
            x: 0.2 * (x - 1.0),
            u: 0.2 * u,
        }
    }
    fn l2(&self, _t: f64, _s: f64, x: f64, y: f64, z: f64, u: f64) -> D4 {
        D4 {
            v: 0.1 * (y * y + x * x) + 0.05 * z * z + 0.1 * u * u,
            x: 0.2 * x,
            y: 0.2 * y,
            z: 0.1 * z,
            u: 0.2 * u,
        }
    }
    fn q(&self, psi: f64) -> D1 {
        D1 { v: 0.5 * psi * psi, d: psi }
    }
    fn h(&self, x: f64) -> D1 {
        D1 {
            v: (x - 0.5).powi(2),
            d: 2.0 * (x - 0.5),
        }
    }
    fn k(&self, y: f64) -> D1 {
        D1 { v: 0.5 * y * y, d: y }
    }
    fn growth(&self) -> f64 {
        0.2
    }
}

/// Linear controlled system with state-free diffusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct DualityLinear;

impl Coefficients for DualityLinear {
    fn f(&self, _t: f64) -> f64 {
        1.0
    }
    fn b(&self, _t: f64, _s: f64, x: f64, u: f64) -> D2 {
        D2 {
            v: -0.3 * x + 0.5 * u,
            x: -0.3,
            u: 0.5,
        }
    }
    fn sigma(&self, _t: f64, _s: f64, _x: f64, u: f64) -> D2 {
        D2 {
            v: 0.2 + 0.3 * u,
            x: 0.0,
            u: 0.3,
        }
    }
    fn g(&self, _t: f64, _s: f64, _x: f64, y: f64, z: f64, u: f64) -> D4 {
        D4 {
            v: 0.4 * y + 0.3 * z + 0.5 * u,
            x: 0.0,
            y: 0.4,
            z: 0.3,
            u: 0.5,
        }
    }
    fn lipschitz(&self) -> f64 {
        1.2
    }
    fn sigma_state_free(&self) -> bool {
        true
    }
}

impl Costs for DualityLinear {
    fn l1(&self, _t: f64, _s: f64, _x: f64, _u: f64) -> D2 {
        D2::default()
    }
    fn l2(&self, _t: f64, _s: f64, _x: f64, _y: f64, _z: f64, _u: f64) -> D4 {
        D4::default()
    }
    fn q(&self, psi: f64) -> D1 {
        D1 { v: 0.5 * psi * psi, d: psi }
    }
    fn h(&self, x: f64) -> D1 {
        D1 { v: x * x, d: 2.0 * x }
    }
    fn k(&self, y: f64) -> D1 {
        D1 { v: y, d: 1.0 }
    }
    fn growth(&self) -> f64 {
        1.0
    }
    fn active_terms(&self) -> CostTerms {
        CostTerms {
            q: true,
            h: true,
            k: true,
            l1: false,
            l2: false,
        }
    }
}
