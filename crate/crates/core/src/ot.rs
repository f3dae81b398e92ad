//! Discrete optimal transport: an exact min-cost-flow solver and a
//! log-domain Sinkhorn solver, both over arbitrary cost matrices.

use rayon::prelude::*;

use crate::accel_cost::DiscreteMeasure;
use crate::error::{invalid, FkfpeError, Result};

/// Combined support cap of the exact solver.
pub const EXACT_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_src: usize,
    pub n_dst: usize,
    /// Nonzero couplings `(i, j, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `sum pi_ij c_ij`.
    pub total_cost: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n_src];
        for &(i, _, p) in &self.entries {
            r[i] += p;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n_dst];
        for &(_, j, p) in &self.entries {
            c[j] += p;
        }
        c
    }

    /// Largest absolute deviation of the plan's marginals from `a` and `b`.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(a)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn cost_with(&self, cost: impl Fn(usize, usize) -> f64) -> f64 {
        self.entries.iter().map(|&(i, j, p)| p * cost(i, j)).sum()
    }
}

fn check_weights(a: &[f64], b: &[f64], cost: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(FkfpeError::EmptyMeasure);
    }
    if cost.len() != a.len() * b.len() {
        return invalid("cost matrix shape does not match the marginals");
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0)) {
        return invalid("marginals must be nonnegative");
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb) {
        return invalid(format!("marginal masses differ: {sa} vs {sb}"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(FkfpeError::NonFinite("cost matrix".into()));
    }
    Ok(())
}

/// Exact transport by successive shortest augmenting paths (Dijkstra with
/// node potentials) on the dense bipartite residual graph.
pub fn solve_exact(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    check_weights(a, b, cost)?;
    let (n, m) = (a.len(), b.len());
    if n + m > EXACT_CAP {
        return Err(FkfpeError::SizeCap {
            size: n + m,
            cap: EXACT_CAP,
        });
    }
    let total: f64 = a.iter().sum();
    let eps = 1e-15 * total.max(1e-300);
    let mut supply = a.to_vec();
    let mut demand = b.to_vec();
    // rescale demand so both sides carry the same mass to rounding
    let sb: f64 = demand.iter().sum();
    if sb > 0.0 {
        demand.iter_mut().for_each(|d| *d *= total / sb);
    }
    let mut flow = vec![0.0f64; n * m];
    let mut pot_src = vec![0.0f64; n];
    let mut pot_dst = vec![0.0f64; m];
    let mut dist_src = vec![0.0f64; n];
    let mut dist_dst = vec![0.0f64; m];
    let mut prev_dst = vec![usize::MAX; m]; // source feeding sink j on the path
    let mut prev_src = vec![usize::MAX; n]; // sink feeding source i (backward arc)
    let mut done_src = vec![false; n];
    let mut done_dst = vec![false; m];

    let max_rounds = 8 * (n + m) * (n + m) + 64;
    let mut rounds = 0;
    while supply.iter().any(|&s| s > eps) && demand.iter().any(|&d| d > eps) {
        rounds += 1;
        if rounds > max_rounds {
            let left: f64 = supply.iter().sum();
            return Err(FkfpeError::NonConvergence {
                iterations: rounds,
                marginal_error: left,
            });
        }
        dist_src.iter_mut().for_each(|d| *d = f64::INFINITY);
        dist_dst.iter_mut().for_each(|d| *d = f64::INFINITY);
        done_src.iter_mut().for_each(|d| *d = false);
        done_dst.iter_mut().for_each(|d| *d = false);
        prev_src.iter_mut().for_each(|p| *p = usize::MAX);
        prev_dst.iter_mut().for_each(|p| *p = usize::MAX);
        for i in 0..n {
            if supply[i] > eps {
                dist_src[i] = 0.0;
            }
        }
        let target;
        loop {
            // pick the closest unsettled node
            let mut best = f64::INFINITY;
            let mut pick: Option<(bool, usize)> = None;
            for i in 0..n {
                if !done_src[i] && dist_src[i] < best {
                    best = dist_src[i];
                    pick = Some((true, i));
                }
            }
            for j in 0..m {
                if !done_dst[j] && dist_dst[j] < best {
                    best = dist_dst[j];
                    pick = Some((false, j));
                }
            }
            let Some((is_src, k)) = pick else {
                return Err(FkfpeError::NonConvergence {
                    iterations: rounds,
                    marginal_error: supply.iter().sum(),
                });
            };
            if is_src {
                done_src[k] = true;
                let row = &cost[k * m..(k + 1) * m];
                for j in 0..m {
                    if done_dst[j] {
                        continue;
                    }
                    let rc = (row[j] + pot_src[k] - pot_dst[j]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_dst[j] {
                        dist_dst[j] = nd;
                        prev_dst[j] = k;
                    }
                }
            } else {
                done_dst[k] = true;
                if demand[k] > eps {
                    target = k;
                    break;
                }
                for i in 0..n {
                    if done_src[i] || flow[i * m + k] <= 0.0 {
                        continue;
                    }
                    let rc = (-cost[i * m + k] + pot_dst[k] - pot_src[i]).max(0.0);
                    let nd = best + rc;
                    if nd < dist_src[i] {
                        dist_src[i] = nd;
                        prev_src[i] = k;
                    }
                }
            }
        }
        let dt = dist_dst[target];
        for i in 0..n {
            pot_src[i] += dist_src[i].min(dt);
        }
        for j in 0..m {
            pot_dst[j] += dist_dst[j].min(dt);
        }
        // bottleneck along the path target <- src <- dst <- ... <- root source
        let mut push = demand[target];
        let mut j = target;
        loop {
            let i = prev_dst[j];
            match prev_src[i] {
                usize::MAX => {
                    push = push.min(supply[i]);
                    break;
                }
                jj => {
                    push = push.min(flow[i * m + jj]);
                    j = jj;
                }
            }
        }
        let mut j = target;
        demand[target] -= push;
        loop {
            let i = prev_dst[j];
            flow[i * m + j] += push;
            match prev_src[i] {
                usize::MAX => {
                    supply[i] -= push;
                    break;
                }
                jj => {
                    flow[i * m + jj] -= push;
                    if flow[i * m + jj] < eps {
                        flow[i * m + jj] = 0.0;
                    }
                    j = jj;
                }
            }
        }
    }

    let mut entries = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = flow[i * m + j];
            if p > 0.0 {
                entries.push((i, j, p));
                total_cost += p * cost[i * m + j];
            }
        }
    }
    Ok(TransportPlan {
        n_src: n,
        n_dst: m,
        entries,
        total_cost,
    })
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Entropic transport with regularisation `eps` (in cost units), solved by
/// log-domain Sinkhorn with geometric `eps`-scaling from the cost range.
pub fn solve_entropic(a: &[f64], b: &[f64], cost: &[f64], eps: f64, max_iter: usize) -> Result<TransportPlan> {
    check_weights(a, b, cost)?;
    if !(eps > 0.0) {
        return invalid(format!("entropic regularisation {eps} must be positive"));
    }
    let (n, m) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let cmax = cost.iter().copied().fold(0.0, f64::max);
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let tol = 1e-9 * a.iter().sum::<f64>();
    let mut e = cmax.max(eps);
    let mut iters = 0;
    let mut err = f64::INFINITY;

    let row_err = |f: &[f64], g: &[f64], e: f64| -> f64 {
        (0..n)
            .into_par_iter()
            .map(|i| {
                if a[i] == 0.0 {
                    return 0.0;
                }
                let row = &cost[i * m..(i + 1) * m];
                let s = log_sum_exp((0..m).map(|j| (f[i] + g[j] - row[j]) / e + lb[j]));
                (s.exp() * a[i] - a[i]).abs()
            })
            .sum()
    };

    loop {
        let mut stage_iters = 0;
        loop {
            f = (0..n)
                .into_par_iter()
                .map(|i| {
                    if a[i] == 0.0 {
                        return 0.0;
                    }
                    let row = &cost[i * m..(i + 1) * m];
                    -e * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / e + lb[j]))
                })
                .collect();
            g = (0..m)
                .into_par_iter()
                .map(|j| {
                    if b[j] == 0.0 {
                        return 0.0;
                    }
                    -e * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / e + la[i]))
                })
                .collect();
            iters += 1;
            stage_iters += 1;
            let final_stage = e <= eps;
            if stage_iters % 5 == 0 || iters >= max_iter {
                err = row_err(&f, &g, e);
                let stage_tol = if final_stage { tol } else { tol.max(1e-3) };
                if err <= stage_tol {
                    break;
                }
            }
            if iters >= max_iter {
                return Err(FkfpeError::NonConvergence {
                    iterations: iters,
                    marginal_error: err,
                });
            }
        }
        if e <= eps {
            break;
        }
        e = (e * 0.25).max(eps);
    }

    let mut entries = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n {
        if a[i] == 0.0 {
            continue;
        }
        for j in 0..m {
            if b[j] == 0.0 {
                continue;
            }
            let c = cost[i * m + j];
            let p = ((f[i] + g[j] - c) / eps + la[i] + lb[j]).exp();
            if p > 0.0 {
                entries.push((i, j, p));
                total_cost += p * c;
            }
        }
    }
    Ok(TransportPlan {
        n_src: n,
        n_dst: m,
        entries,
        total_cost,
    })
}

fn sq_cost(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Vec<f64> {
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for p in &mu.support {
        for q in &nu.support {
            c.push((p.x - q.x).powi(2) + (p.v - q.v).powi(2));
        }
    }
    c
}

/// Exact `W_2` between two measures on the plane; returns `(W_2, plan)`.
pub fn w2_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    let plan = solve_exact(&mu.weights, &nu.weights, &sq_cost(mu, nu))?;
    Ok((plan.total_cost.max(0.0).sqrt(), plan))
}

/// Entropic approximation of `W_2`; the value reported is the transport cost
/// of the regularised plan, without the entropy term.
pub fn w2_entropic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, eps: f64, max_iter: usize) -> Result<(f64, TransportPlan)> {
    let plan = solve_entropic(&mu.weights, &nu.weights, &sq_cost(mu, nu), eps, max_iter)?;
    Ok((plan.total_cost.max(0.0).sqrt(), plan))
}
