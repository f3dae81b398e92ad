//! Minimal-acceleration cost `C_h`, the maps `F_h`, `G_h`, and the transport
//! functional `W_h`.
//!
//! `C_h(x,v; x',v') = |v'-v|^2 + 12 |(x'-x)/h - (v'+v)/2|^2` is `h^3` times the
//! mean squared acceleration of the cubic joining the two states in time `h`.
//! With `P = G_h ∘ F_h` and `Q = G_h` one has `|P(a) - Q(b)|^2 = C_h(a, b)`
//! exactly, so `W_h(mu, nu) = W_2(P# mu, Q# nu)`.

use std::io::Write;

use crate::error::{invalid, FkfpeError, Result};
use crate::ot::{self, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: f64,
    pub v: f64,
}

impl PhasePoint {
    pub fn new(x: f64, v: f64) -> Self {
        Self { x, v }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub support: Vec<PhasePoint>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<PhasePoint>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(FkfpeError::EmptyMeasure);
        }
        if support.len() != weights.len() {
            return invalid("support and weights differ in length");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return invalid("weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("weights sum to {total}, expected 1"));
        }
        if support.iter().any(|p| !(p.x.is_finite() && p.v.is_finite())) {
            return Err(FkfpeError::NonFinite("measure support".into()));
        }
        Ok(Self { support, weights })
    }

    /// Builds a measure from unnormalised weights.
    pub fn normalized(support: Vec<PhasePoint>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(FkfpeError::EmptyMeasure);
        }
        Self::new(support, weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(support: Vec<PhasePoint>) -> Result<Self> {
        let n = support.len();
        Self::normalized(support, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Exact push-forward: points move, weights stay.
    pub fn push_forward(&self, mut map: impl FnMut(PhasePoint) -> PhasePoint) -> Self {
        Self {
            support: self.support.iter().map(|&p| map(p)).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Merges coincident atoms, keeping first-occurrence order.
    pub fn merged(&self) -> Self {
        let mut support: Vec<PhasePoint> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, &w) in self.support.iter().zip(&self.weights) {
            match support.iter().position(|q| q == p) {
                Some(k) => weights[k] += w,
                None => {
                    support.push(*p);
                    weights.push(w);
                }
            }
        }
        Self { support, weights }
    }

    /// Equality as measures up to `tol` in weight (supports compared exactly after merging).
    pub fn same_as(&self, other: &Self, tol: f64) -> bool {
        let (a, b) = (self.merged(), other.merged());
        let covered = |a: &Self, b: &Self| {
            a.support.iter().zip(&a.weights).all(|(p, &w)| {
                let wb = b
                    .support
                    .iter()
                    .position(|q| q == p)
                    .map(|k| b.weights[k])
                    .unwrap_or(0.0);
                (w - wb).abs() <= tol
            })
        };
        covered(&a, &b) && covered(&b, &a)
    }
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return invalid(format!("time step h = {h} must be positive"));
    }
    Ok(())
}

#[inline]
pub(crate) fn ch(h: f64, a: PhasePoint, b: PhasePoint) -> f64 {
    let dv = b.v - a.v;
    let r = (b.x - a.x) / h - 0.5 * (b.v + a.v);
    dv * dv + 12.0 * r * r
}

pub fn cost_ch(h: f64, a: PhasePoint, b: PhasePoint) -> Result<f64> {
    check_h(h)?;
    Ok(ch(h, a, b))
}

/// `h ∫_0^h |xi''(t)|^2 dt` for the cubic Hermite curve from `a` at `t = 0` to
/// `b` at `t = h`, integrated by three-point Gauss-Legendre (exact here).
pub fn cubic_oracle(h: f64, a: PhasePoint, b: PhasePoint) -> Result<f64> {
    check_h(h)?;
    // second derivatives of the Hermite basis on [0, h] at tau = t/h
    let acc = |tau: f64| {
        let h00 = 12.0 * tau - 6.0;
        let h10 = 6.0 * tau - 4.0;
        let h01 = 6.0 - 12.0 * tau;
        let h11 = 6.0 * tau - 2.0;
        (h00 * a.x + h01 * b.x) / (h * h) + (h10 * a.v + h11 * b.v) / h
    };
    let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let integral: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&z, &w)| {
            let tau = 0.5 * (z + 1.0);
            w * acc(tau).powi(2)
        })
        .sum::<f64>()
        * 0.5
        * h;
    Ok(h * integral)
}

pub fn map_fh(h: f64, p: PhasePoint) -> Result<PhasePoint> {
    check_h(h)?;
    Ok(PhasePoint::new(p.x + h * p.v, p.v))
}

pub fn map_gh(h: f64, p: PhasePoint) -> Result<PhasePoint> {
    check_h(h)?;
    Ok(PhasePoint::new(3f64.sqrt() * (2.0 * p.x / h - p.v), p.v))
}

pub fn map_gh_inv(h: f64, p: PhasePoint) -> Result<PhasePoint> {
    check_h(h)?;
    Ok(PhasePoint::new(0.5 * h * (p.x / 3f64.sqrt() + p.v), p.v))
}

/// `G_h ∘ F_h`, evaluated in closed form.
pub fn map_gh_fh(h: f64, p: PhasePoint) -> Result<PhasePoint> {
    check_h(h)?;
    Ok(PhasePoint::new(3f64.sqrt() * (2.0 * p.x / h + p.v), p.v))
}

/// `W_h(mu, nu)` through the reduction to squared-Euclidean `W_2`; the plan is
/// indexed by the original supports.
pub fn wh(h: f64, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    check_h(h)?;
    if mu.is_empty() || nu.is_empty() {
        return Err(FkfpeError::EmptyMeasure);
    }
    let p = mu.push_forward(|q| map_gh_fh(h, q).expect("h checked"));
    let q = nu.push_forward(|q| map_gh(h, q).expect("h checked"));
    ot::w2_exact(&p, &q)
}

/// `C_h` cost matrix between two supports, row-major.
pub fn cost_matrix(h: f64, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<f64> {
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for &a in &mu.support {
        for &b in &nu.support {
            c.push(ch(h, a, b));
        }
    }
    c
}

/// Writes `i, j, weight, cost` rows for the nonzero entries of a plan.
pub fn dump_plan_csv(
    mut w: impl Write,
    h: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    plan: &TransportPlan,
) -> Result<()> {
    writeln!(w, "i,j,weight,cost")?;
    for &(i, j, p) in &plan.entries {
        writeln!(w, "{i},{j},{p:e},{:e}", ch(h, mu.support[i], nu.support[j]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pp(x: f64, v: f64) -> PhasePoint {
        PhasePoint::new(x, v)
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost_ch(0.7, pp(1.0, 2.0), pp(1.0 + 0.7 * 2.0, 2.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(cost_ch(1.0, pp(0.0, 0.0), pp(0.0, 1.0)).unwrap(), 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cost_ch(2.0, pp(0.0, 0.0), pp(1.0, 0.0)).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cubic_oracle(1.0, pp(0.0, 0.0), pp(0.0, 1.0)).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cubic_oracle(2.0, pp(0.0, 0.0), pp(1.0, 0.0)).unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cubic_oracle(0.5, pp(1.0, -1.0), pp(0.5, -1.0)).unwrap(), 0.0, epsilon = 1e-12);
        assert!(cost_ch(0.0, pp(0.0, 0.0), pp(0.0, 0.0)).is_err());
        assert!(map_fh(-1.0, pp(0.0, 0.0)).is_err());
    }

    #[test]
    fn map_examples() {
        let q = map_gh_fh(2.0, pp(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(q.x, 3f64.sqrt(), epsilon = 1e-15);
        assert_eq!(q.v, 0.0);
        assert_eq!(map_fh(0.3, pp(2.5, 0.0)).unwrap(), pp(2.5, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let h = rng.random_range(0.1..3.0);
            let p = pp(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let back = map_gh_inv(h, map_gh(h, p).unwrap()).unwrap();
            assert!((back.x - p.x).abs() <= 1e-14 * (1.0 + p.x.abs()) * 4.0);
            assert_eq!(back.v, p.v);
            let composed = map_gh(h, map_fh(h, p).unwrap()).unwrap();
            let direct = map_gh_fh(h, p).unwrap();
            assert!((composed.x - direct.x).abs() <= 1e-12 * (1.0 + direct.x.abs()));
        }
    }

    #[test]
    fn wh_examples() {
        let mu = DiscreteMeasure::uniform(vec![pp(0.0, 0.0)]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![pp(0.0, 1.0)]).unwrap();
        let (w, plan) = wh(1.0, &mu, &nu).unwrap();
        assert_abs_diff_eq!(w, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.total_cost, 4.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..7).map(|_| pp(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        let mu = DiscreteMeasure::uniform(pts).unwrap();
        let free = mu.push_forward(|p| map_fh(0.4, p).unwrap());
        assert!(wh(0.4, &mu, &free).unwrap().0 < 1e-10);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn reduction_matches_assignment_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(1..=6);
            let h = rng.random_range(0.2..2.0);
            let mk = |rng: &mut ChaCha8Rng| (0..n).map(|_| pp(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect::<Vec<_>>();
            let mu = DiscreteMeasure::uniform(mk(&mut rng)).unwrap();
            let nu = DiscreteMeasure::uniform(mk(&mut rng)).unwrap();
            let best = permutations(n)
                .iter()
                .map(|perm| perm.iter().enumerate().map(|(i, &j)| ch(h, mu.support[i], nu.support[j])).sum::<f64>() / n as f64)
                .fold(f64::INFINITY, f64::min);
            let (w, plan) = wh(h, &mu, &nu).unwrap();
            assert!((w * w - best).abs() <= 1e-9 * (1.0 + best), "{} vs {best}", w * w);
            let direct: f64 = plan.entries.iter().map(|&(i, j, p)| p * ch(h, mu.support[i], nu.support[j])).sum();
            assert!((direct - best).abs() <= 1e-9 * (1.0 + best));
        }
    }

    #[test]
    fn asymmetry_witness() {
        let mu = DiscreteMeasure::uniform(vec![pp(0.0, 1.0)]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![pp(1.0, 0.0)]).unwrap();
        let a = wh(1.0, &mu, &nu).unwrap().0;
        let b = wh(1.0, &nu, &mu).unwrap().0;
        assert!((a - b).abs() > 0.1, "{a} {b}");
    }

    #[test]
    fn zero_iff_free_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..6);
            let h = rng.random_range(0.2..1.5);
            let pts: Vec<_> = (0..n).map(|_| pp(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let mu = DiscreteMeasure::uniform(pts).unwrap();
            let nu = mu.push_forward(|p| map_fh(h, p).unwrap());
            assert!(wh(h, &mu, &nu).unwrap().0 < 1e-10);
            let mut bent = nu.clone();
            bent.support[0].v += 0.05;
            assert!(!bent.same_as(&nu, 1e-12));
            assert!(wh(h, &mu, &bent).unwrap().0 > 1e-4);
        }
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(DiscreteMeasure::new(vec![], vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![pp(0.0, 0.0)], vec![0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![pp(0.0, 0.0), pp(1.0, 0.0)], vec![1.5, -0.5]).is_err());
    }

    proptest! {
        #[test]
        fn oracle_agrees_with_closed_form(
            h in prop::sample::select(vec![0.5, 1.0, 2.0]),
            x in -5.0f64..5.0, v in -5.0f64..5.0, x2 in -5.0f64..5.0, v2 in -5.0f64..5.0,
        ) {
            let (a, b) = (pp(x, v), pp(x2, v2));
            let c = cost_ch(h, a, b).unwrap();
            let o = cubic_oracle(h, a, b).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert!((c - o).abs() <= 1e-9 * c.max(1e-12) + 1e-12);
        }

        #[test]
        fn reduction_identity_pointwise(h in 0.05f64..4.0, x in -5.0f64..5.0, v in -5.0f64..5.0, x2 in -5.0f64..5.0, v2 in -5.0f64..5.0) {
            let (a, b) = (pp(x, v), pp(x2, v2));
            let p = map_gh_fh(h, a).unwrap();
            let q = map_gh(h, b).unwrap();
            let d = (p.x - q.x).powi(2) + (p.v - q.v).powi(2);
            let c = ch(h, a, b);
            prop_assert!((d - c).abs() <= 1e-10 * (1.0 + c));
        }
    }
}
