//! Exact samplers for symmetric stable laws with characteristic function
//! `exp(-t |xi|^{2s})`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{invalid, Result};

/// Unit symmetric `alpha`-stable draw, characteristic function `exp(-|xi|^alpha)`,
/// by the Chambers-Mallows-Stuck construction.
pub fn unit_symmetric_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    let u = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
    if alpha == 1.0 {
        return u.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Positive `a`-stable draw with Laplace transform `exp(-lambda^a)`, `0 < a < 1` (Kanter).
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    let theta = rng.random_range(0.0..PI);
    let e: f64 = Exp1.sample(rng);
    let num = (a * theta).sin().powf(a) * ((1.0 - a) * theta).sin().powf(1.0 - a);
    let ka = (num / theta.sin()).powf(1.0 / (1.0 - a));
    (ka / e).powf((1.0 - a) / a)
}

/// One velocity increment over time `h` with law `Phi_s(., h)`, conditioned on
/// `|w| <= r` when a radius is given.
pub fn sample_stable_increment<R: Rng + ?Sized>(
    rng: &mut R,
    s: f64,
    h: f64,
    r: Option<f64>,
) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return invalid(format!("s = {s} must lie in (0, 1]"));
    }
    if !(h > 0.0) {
        return invalid("time step must be positive");
    }
    if let Some(r) = r {
        if !(r > 0.0) {
            return invalid("truncation radius must be positive");
        }
    }
    let scale = h.powf(1.0 / (2.0 * s));
    loop {
        let w = scale * unit_symmetric_stable(rng, 2.0 * s);
        match r {
            Some(r) if w.abs() > r => continue,
            _ => return Ok(w),
        }
    }
}

/// Rotationally invariant increment in `R^d` as a Gaussian scale mixture
/// `sqrt(A) N(0, 2 I)` with `A` positive `s`-stable.
pub fn sample_stable_vector<R: Rng + ?Sized>(rng: &mut R, s: f64, h: f64, out: &mut [f64]) {
    let mix = if s >= 1.0 { 1.0 } else { positive_stable(rng, s) };
    let scale = h.powf(1.0 / (2.0 * s)) * (2.0 * mix).sqrt();
    for o in out.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *o = scale * g;
    }
}
