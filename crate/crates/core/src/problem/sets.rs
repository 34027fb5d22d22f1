use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval `[lo, hi]`, possibly unbounded on either side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::config(format!("empty interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn unbounded() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    #[inline]
    pub fn project(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// `K` for control values and `Kbar` for terminal-process values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSets {
    pub control: Interval,
    pub terminal: Interval,
}

impl AdmissibleSets {
    pub fn validate(&self) -> Result<()> {
        Interval::new(self.control.lo, self.control.hi)?;
        Interval::new(self.terminal.lo, self.terminal.hi)?;
        Ok(())
    }
}
