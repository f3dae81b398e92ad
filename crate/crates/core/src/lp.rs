//! Dense two-phase simplex for small transportation problems.
//!
//! Kept deliberately naive (full tableau, Bland's rule) so it can serve as an
//! oracle for the network solvers in [`crate::ot`].

use crate::error::{invalid, FkfpeError, Result};

const EPS: f64 = 1e-12;

/// Minimises `c . x` subject to `A x = b`, `x >= 0`, with `A` row-major
/// (`b.len()` rows). Returns the optimal value and a solution.
pub fn simplex_eq(a: &[f64], b: &[f64], c: &[f64]) -> Result<(f64, Vec<f64>)> {
    let m = b.len();
    let n = c.len();
    if a.len() != m * n {
        return invalid("constraint matrix has the wrong size");
    }
    // columns: n structural, m artificial, then the right-hand side
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    let mut basis = vec![0usize; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sign * a[i * n + j];
        }
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = sign * b[i];
        basis[i] = n + i;
    }
    // phase one: minimise the sum of artificials
    let obj = m;
    for j in 0..width {
        let s: f64 = (0..m).map(|i| t[i * width + j]).sum();
        t[obj * width + j] = if (n..n + m).contains(&j) { 0.0 } else { -s };
    }
    pivot_loop(&mut t, &mut basis, m, width, n + m)?;
    if -t[obj * width + n + m] > 1e-9 {
        return Err(FkfpeError::InvalidParameter("linear program is infeasible".into()));
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i * width + j].abs() > EPS) {
                pivot(&mut t, &mut basis, m, width, i, j);
            }
        }
    }
    // phase two objective on structural columns only
    for j in 0..width {
        t[obj * width + j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let bj = basis[i];
        if bj < n {
            let f = t[obj * width + bj];
            if f != 0.0 {
                for j in 0..width {
                    t[obj * width + j] -= f * t[i * width + j];
                }
            }
        }
    }
    pivot_loop(&mut t, &mut basis, m, width, n)?;
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i * width + n + m];
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok((value, x))
}

fn pivot(t: &mut [f64], basis: &mut [usize], m: usize, width: usize, r: usize, col: usize) {
    let p = t[r * width + col];
    for j in 0..width {
        t[r * width + j] /= p;
    }
    for i in 0..=m {
        if i != r {
            let f = t[i * width + col];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[r * width + j];
                }
            }
        }
    }
    basis[r] = col;
}

fn pivot_loop(t: &mut [f64], basis: &mut [usize], m: usize, width: usize, ncols: usize) -> Result<()> {
    let obj = m;
    let rhs = width - 1;
    for _ in 0..100_000 {
        let Some(col) = (0..ncols).find(|&j| t[obj * width + j] < -EPS) else {
            return Ok(());
        };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..m {
            let a = t[i * width + col];
            if a > EPS {
                let ratio = t[i * width + rhs] / a;
                match best {
                    Some((r, bi)) if ratio > r + EPS || (ratio >= r - EPS && basis[i] > basis[bi]) => {}
                    _ => best = Some((ratio, i)),
                }
            }
        }
        let Some((_, r)) = best else {
            return invalid("linear program is unbounded");
        };
        pivot(t, basis, m, width, r, col);
    }
    Err(FkfpeError::NonConvergence {
        iterations: 100_000,
        marginal_error: f64::NAN,
    })
}

/// Optimal transport cost between weights `a` and `b` for a row-major cost matrix.
pub fn transport_lp(a: &[f64], b: &[f64], cost: &[f64]) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if cost.len() != n * m {
        return invalid("cost matrix has the wrong size");
    }
    let rows = n + m;
    let mut mat = vec![0.0; rows * n * m];
    for i in 0..n {
        for j in 0..m {
            let var = i * m + j;
            mat[i * n * m + var] = 1.0;
            mat[(n + j) * n * m + var] = 1.0;
        }
    }
    let rhs: Vec<f64> = a.iter().chain(b).copied().collect();
    Ok(simplex_eq(&mat, &rhs, cost)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_programs() {
        // min -x - y s.t. x + s1 = 1, y + s2 = 2
        let a = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let (v, x) = simplex_eq(&a, &[1.0, 2.0], &[-1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((v + 3.0).abs() < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn transport_examples() {
        let c = [0.0, 1.0, 1.0, 0.0];
        assert!(transport_lp(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap().abs() < 1e-12);
        let c = [1.0, 0.0, 0.0, 1.0];
        assert!(transport_lp(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap().abs() < 1e-12);
        let c = [2.0, 3.0];
        assert!((transport_lp(&[1.0], &[0.25, 0.75], &c).unwrap() - 2.75).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn lp_matches_network_solver(
            a in proptest::collection::vec(0.1f64..1.0, 1..6),
            b in proptest::collection::vec(0.1f64..1.0, 1..6),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let a: Vec<f64> = a.iter().map(|x| x / sa).collect();
            let b: Vec<f64> = b.iter().map(|x| x / sb).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<f64> = (0..a.len() * b.len()).map(|_| rng.random_range(0.0..5.0)).collect();
            let lp = transport_lp(&a, &b, &cost).unwrap();
            let net = crate::ot::solve_exact(&a, &b, &cost).unwrap().total_cost;
            proptest::prop_assert!((lp - net).abs() <= 1e-9, "{lp} vs {net}");
        }
    }
}
