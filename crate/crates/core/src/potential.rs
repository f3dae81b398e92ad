//! Friction potentials `psi(v) >= 0` with Lipschitz gradient.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, FkfpeError, Result};

pub trait Potential: Send + Sync {
    fn value(&self, v: f64) -> f64;
    fn grad(&self, v: f64) -> f64;
    fn hess(&self, v: f64) -> f64;
    /// Supremum of `|psi''|` over the velocity range the potential is used on.
    fn hessian_sup(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl Potential for Zero {
    fn value(&self, _: f64) -> f64 {
        0.0
    }
    fn grad(&self, _: f64) -> f64 {
        0.0
    }
    fn hess(&self, _: f64) -> f64 {
        0.0
    }
    fn hessian_sup(&self) -> f64 {
        0.0
    }
}

/// `k v^2 / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub k: f64,
}

impl Quadratic {
    pub fn new(k: f64) -> Self {
        Self { k }
    }
}

impl Potential for Quadratic {
    fn value(&self, v: f64) -> f64 {
        0.5 * self.k * v * v
    }
    fn grad(&self, v: f64) -> f64 {
        self.k * v
    }
    fn hess(&self, _: f64) -> f64 {
        self.k
    }
    fn hessian_sup(&self) -> f64 {
        self.k.abs()
    }
}

/// `v^4 / 4`, whose Hessian bound is taken over `|v| <= cap`.
#[derive(Debug, Clone, Copy)]
pub struct Quartic {
    pub cap: f64,
}

impl Potential for Quartic {
    fn value(&self, v: f64) -> f64 {
        0.25 * v.powi(4)
    }
    fn grad(&self, v: f64) -> f64 {
        v * v * v
    }
    fn hess(&self, v: f64) -> f64 {
        3.0 * v * v
    }
    fn hessian_sup(&self) -> f64 {
        3.0 * self.cap * self.cap
    }
}

/// Potential selector used by configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialKind {
    Zero,
    Quadratic(f64),
    Quartic,
}

impl PotentialKind {
    /// Instantiates the potential; `lv` bounds the velocity range for Hessian sups.
    pub fn build(&self, lv: f64) -> Box<dyn Potential> {
        match *self {
            PotentialKind::Zero => Box::new(Zero),
            PotentialKind::Quadratic(k) => Box::new(Quadratic::new(k)),
            PotentialKind::Quartic => Box::new(Quartic { cap: lv }),
        }
    }
}

impl FromStr for PotentialKind {
    type Err = FkfpeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "zero" => Ok(Self::Zero),
            "quadratic" => Ok(Self::Quadratic(1.0)),
            "quartic" => Ok(Self::Quartic),
            _ => {
                if let Some(k) = s.strip_prefix("quadratic:") {
                    let k: f64 = k
                        .parse()
                        .map_err(|_| FkfpeError::InvalidParameter(format!("bad stiffness `{k}`")))?;
                    if !(k >= 0.0 && k.is_finite()) {
                        return invalid("quadratic stiffness must be nonnegative");
                    }
                    Ok(Self::Quadratic(k))
                } else {
                    invalid(format!(
                        "unknown potential `{s}` (expected zero, quadratic, quadratic:<k>, quartic)"
                    ))
                }
            }
        }
    }
}

impl fmt::Display for PotentialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Quadratic(k) if *k == 1.0 => write!(f, "quadratic"),
            Self::Quadratic(k) => write!(f, "quadratic:{k}"),
            Self::Quartic => write!(f, "quartic"),
        }
    }
}

/// Outcome of [`spot_check`].
#[derive(Debug, Clone, Copy)]
pub struct SpotCheck {
    pub max_grad_error: f64,
    pub max_lipschitz_ratio: f64,
    pub min_value: f64,
}

impl SpotCheck {
    pub fn passed(&self) -> bool {
        self.max_grad_error <= 1.0 && self.max_lipschitz_ratio <= 1.0 + 1e-9 && self.min_value >= 0.0
    }
}

/// Compares `grad` against central differences at `n` random velocities in
/// `[-range, range]` and checks the Lipschitz bound on random pairs.
///
/// `max_grad_error` is scaled by `1e-6 (1 + |grad|)`, so the check passes when it is at most 1.
pub fn spot_check<R: Rng>(psi: &dyn Potential, range: f64, n: usize, rng: &mut R) -> SpotCheck {
    let step = 1e-5;
    let sup = psi.hessian_sup();
    let mut out = SpotCheck {
        max_grad_error: 0.0,
        max_lipschitz_ratio: 0.0,
        min_value: f64::INFINITY,
    };
    for _ in 0..n {
        let v = rng.random_range(-range..range);
        let fd = (psi.value(v + step) - psi.value(v - step)) / (2.0 * step);
        let g = psi.grad(v);
        out.max_grad_error = out.max_grad_error.max((g - fd).abs() / (1e-6 * (1.0 + g.abs())));
        out.min_value = out.min_value.min(psi.value(v));
        let w = rng.random_range(-range..range);
        if v != w {
            let lip = (psi.grad(v) - psi.grad(w)).abs() / (v - w).abs();
            let ratio = if sup > 0.0 {
                lip / sup
            } else if lip > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            out.max_lipschitz_ratio = out.max_lipschitz_ratio.max(ratio);
        }
    }
    out
}
