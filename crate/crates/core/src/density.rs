//! Tophat density over previously safe states.
//!
//! `density(x) = (1/N) · #{ i : ‖x − s_i‖₂ ≤ α }`, zero for an empty support.
//! The planner requires terminal states to have density above `δ`
//! (`PlannerConfig::delta`).

use serde::{Deserialize, Serialize};

use crate::env::{State, STATE_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    pub alpha: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig { alpha: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DensityModel<T> {
    support: Vec<[T; STATE_DIM]>,
    alpha: T,
}

pub fn fit_density<T: Scalar>(states: &[State<T>], alpha: T) -> Result<DensityModel<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::Config(format!("density alpha must be > 0, got {alpha}")));
    }
    Ok(DensityModel {
        support: states.iter().map(|s| s.to_array()).collect(),
        alpha,
    })
}

impl<T: Scalar> DensityModel<T> {
    /// No support; every density is zero.
    pub fn empty(alpha: T) -> Self {
        DensityModel {
            support: Vec::new(),
            alpha,
        }
    }

    pub fn count(&self) -> usize {
        self.support.len()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn support(&self) -> &[[T; STATE_DIM]] {
        &self.support
    }

    #[inline]
    fn near(&self, x: &[T], s: &[T; STATE_DIM]) -> bool {
        let a2 = self.alpha * self.alpha;
        let mut d = T::zero();
        for j in 0..STATE_DIM {
            let e = x[j] - s[j];
            d += e * e;
            if d > a2 {
                return false;
            }
        }
        true
    }

    pub fn density_slice(&self, x: &[T]) -> T {
        if self.support.is_empty() {
            return T::zero();
        }
        let hits = self.support.iter().filter(|s| self.near(x, s)).count();
        T::cst(hits as f64) / T::cst(self.support.len() as f64)
    }

    pub fn density(&self, x: &State<T>) -> T {
        self.density_slice(&x.to_array())
    }

    /// `density(x) > delta`, stopping as soon as enough neighbours are found.
    pub fn exceeds(&self, x: &[T], delta: T) -> bool {
        let n = self.support.len();
        if n == 0 {
            return false;
        }
        let needed = (delta * T::cst(n as f64)).to_f64_lossy();
        let mut hits = 0usize;
        for s in &self.support {
            if self.near(x, s) {
                hits += 1;
                if hits as f64 > needed {
                    return true;
                }
            }
        }
        false
    }
}
