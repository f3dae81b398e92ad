//! Operator-splitting driver and its a priori diagnostics.
//!
//! Each step diffuses in velocity with the truncated, renormalised kernel and
//! then takes the kinetic variational step:
//!
//! ```text
//! fbar^n = Phi^h_{s,R} *_v f^{n-1},   f^n = argmin W_h(fbar^n, .)^2 / 2h + ∫ psi
//! ```
//!
//! Between grid times the solution is extended by the untruncated fractional
//! flow, `f(t) = Phi_s(t - t_n) *_v f^n`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{Mode, SchemeConfig};
use crate::diagnostics::DiagnosticsRecord;
use crate::error::{invalid, FkfpeError, Result};
use crate::frac_kernel::{build_kernel, truncate_renormalize, DiffusionOperator};
use crate::grid::{DensityGrid, Geometry};
use crate::kinetic::{el_residual, ElResidual, KineticMap};
use crate::potential::Potential;
use crate::testfn::{GaussianBump, TestFunction};

/// Cumulative leakage beyond which a run aborts.
pub const LEAKAGE_LIMIT: f64 = 1e-4;

/// Tolerance on `|mass - 1|` for the initial datum.
const MASS_TOL: f64 = 1e-9;

/// Per-step quantities needed by the a priori checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub wh2: f64,
    pub leakage: f64,
    pub el: ElResidual,
    /// `∫ (|x'-x|^2 + |v'-v|^2) dP` over the deterministic coupling.
    pub displacement2: f64,
    /// `h^2 ∫ (|v|^2 + |v'|^2) dP`.
    pub velocity2: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: SchemeConfig,
    /// `f^n` for `n = 0..=N`.
    pub grids: Vec<DensityGrid>,
    /// `fbar^n` for `n = 1..=N`, stored at index `n - 1`.
    pub diffused: Vec<DensityGrid>,
    /// `n = 0..=N`; record 0 describes `f^0`.
    pub records: Vec<DiagnosticsRecord>,
    /// `n = 1..=N`, stored at index `n - 1`.
    pub stats: Vec<StepStats>,
    pub leakage: f64,
}

impl Trajectory {
    pub fn h(&self) -> f64 {
        self.config.h
    }

    pub fn steps(&self) -> usize {
        self.grids.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.config.h
    }

    pub fn initial(&self) -> &DensityGrid {
        &self.grids[0]
    }

    pub fn final_state(&self) -> &DensityGrid {
        self.grids.last().expect("trajectory holds f^0")
    }

    pub fn write_diagnostics(&self, w: impl Write, header: &str) -> Result<()> {
        crate::diagnostics::write_csv(w, header, &self.records)
    }
}

fn record(n: usize, t: f64, f: &DensityGrid, p: f64, psi: &dyn Potential, wh2: f64, el_res: f64, secs: f64) -> Result<DiagnosticsRecord> {
    Ok(DiagnosticsRecord {
        n,
        t,
        mass: f.mass(),
        lp_p: f.lp_norm_p(p)?,
        m2v: f.second_moment_v(),
        epot: f.potential_energy(psi),
        wh2,
        el_res,
        wallclock: secs,
    })
}

/// Test function used for the per-step Euler-Lagrange column.
pub fn el_probe(g: &Geometry) -> GaussianBump {
    let sx = if g.nx == 1 { 1e6 } else { g.lx / 3.0 };
    GaussianBump::new(0.0, 0.0, sx, g.lv / 4.0)
}

/// Velocity-diffusion operator for one step of the configured scheme, or
/// `None` when the mode skips diffusion.
pub fn step_diffusion(config: &SchemeConfig, g: &Geometry) -> Result<Option<DiffusionOperator>> {
    if config.mode == Mode::TransportOnly {
        return Ok(None);
    }
    let k = truncate_renormalize(&build_kernel(config.s, config.h, g)?, config.radius())?;
    Ok(Some(DiffusionOperator::new(&k, g)?))
}

fn check_initial(f0: &DensityGrid, psi: &dyn Potential) -> Result<()> {
    if !f0.is_finite() {
        return Err(FkfpeError::NonFinite("initial density".into()));
    }
    if f0.min_value() < 0.0 {
        return invalid("initial density has negative values");
    }
    let m = f0.mass();
    if (m - 1.0).abs() > MASS_TOL {
        return invalid(format!("initial density has mass {m}, expected 1"));
    }
    let e = f0.potential_energy(psi);
    if !e.is_finite() {
        return Err(FkfpeError::NonFinite("initial potential energy".into()));
    }
    Ok(())
}

pub fn run_scheme(config: &SchemeConfig, f0: &DensityGrid, psi: &dyn Potential) -> Result<Trajectory> {
    config.validate()?;
    let g = config.geometry()?;
    g.check_same(&f0.geom)?;
    check_initial(f0, psi)?;
    let h = config.h;
    let kmap = KineticMap::new(g, psi, h, config.remap)?;
    let diffusion = step_diffusion(config, &g)?;
    let probe = el_probe(&g);
    let n_steps = config.steps();

    let mut traj = Trajectory {
        config: config.clone(),
        grids: vec![f0.clone()],
        diffused: Vec::with_capacity(n_steps),
        records: vec![record(0, 0.0, f0, config.p, psi, 0.0, 0.0, 0.0)?],
        stats: Vec::with_capacity(n_steps),
        leakage: 0.0,
    };
    let coupling = kmap.coupling();
    for n in 1..=n_steps {
        let start = Instant::now();
        let prev = traj.grids.last().expect("non-empty");
        let fbar = match &diffusion {
            Some(op) => op.apply(prev)?,
            None => prev.clone(),
        };
        let res = kmap.apply(&fbar, psi)?;
        traj.leakage += res.leakage;
        if traj.leakage > LEAKAGE_LIMIT {
            return Err(FkfpeError::Leakage {
                leakage: traj.leakage,
                limit: LEAKAGE_LIMIT,
            });
        }
        let el = el_residual(&fbar, &res, psi, h, &probe)?;
        let (mut displacement2, mut velocity2) = (0.0, 0.0);
        for j in 0..g.nv {
            let col: f64 = (0..g.nx).map(|i| fbar.get(i, j)).sum::<f64>() * g.cell_volume();
            let (v, w) = (g.v(j), coupling.target_v[j]);
            let dx = 0.5 * h * (v + w);
            displacement2 += col * (dx * dx + (w - v) * (w - v));
            velocity2 += col * h * h * (v * v + w * w);
        }
        let rec = record(n, traj.time(n), &res.f, config.p, psi, res.wh2, el.residual, start.elapsed().as_secs_f64())?;
        if !rec.is_finite() || !res.f.is_finite() {
            return Err(FkfpeError::NonFinite(format!("diagnostics at step {n}")));
        }
        traj.stats.push(StepStats {
            wh2: res.wh2,
            leakage: res.leakage,
            el,
            displacement2,
            velocity2,
        });
        traj.records.push(rec);
        traj.diffused.push(fbar);
        traj.grids.push(res.f);
    }
    Ok(traj)
}

/// Untruncated fractional flow over time `tau`, or `None` for the identity.
fn flow_operator(config: &SchemeConfig, g: &Geometry, tau: f64) -> Result<Option<DiffusionOperator>> {
    if tau <= 0.0 || config.mode == Mode::TransportOnly {
        return Ok(None);
    }
    let k = truncate_renormalize(&build_kernel(config.s, tau, g)?, None)?;
    Ok(Some(DiffusionOperator::new(&k, g)?))
}

fn step_index(traj: &Trajectory, t: f64) -> Result<(usize, f64)> {
    let t_end = traj.time(traj.steps());
    if !(t >= 0.0 && t < t_end) {
        return Err(FkfpeError::TimeOutOfRange { t, t_end });
    }
    let h = traj.h();
    let mut n = (t / h).floor() as usize;
    if traj.time(n + 1) <= t {
        n += 1;
    }
    n = n.min(traj.steps() - 1);
    Ok((n, (t - traj.time(n)).max(0.0)))
}

/// `f_{h,R}(t) = Phi_s(t - t_n) *_v f^n` for `t_n <= t < t_{n+1}`.
pub fn interpolate(traj: &Trajectory, t: f64) -> Result<DensityGrid> {
    let (n, tau) = step_index(traj, t)?;
    let f = &traj.grids[n];
    match flow_operator(&traj.config, &f.geom, tau)? {
        Some(op) => op.apply(f),
        None => Ok(f.clone()),
    }
}

/// Relative slack allowed on the L^p and frozen-constant checks.
pub const CHECK_SLACK: f64 = 0.01;

/// Result of a bound-with-fitted-constant check across refinements.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCheck {
    /// Constant fitted on the coarsest configuration (floored at zero).
    pub constant: f64,
    /// `lhs / scale` per configuration, coarsest first.
    pub ratios: Vec<f64>,
    pub passed: bool,
}

/// Requires `lhs[i] <= C scale[i]` (up to [`CHECK_SLACK`]) for every configuration.
pub fn frozen_check(constant: f64, lhs: &[f64], scale: &[f64]) -> FrozenCheck {
    let ratios: Vec<f64> = lhs.iter().zip(scale).map(|(l, s)| l / s).collect();
    let passed = lhs
        .iter()
        .zip(scale)
        .all(|(l, s)| s.is_infinite() || *l <= constant * s * (1.0 + CHECK_SLACK) + 1e-14);
    FrozenCheck {
        constant,
        ratios,
        passed,
    }
}

/// Fits `C = lhs[0] / scale[0]` and checks every configuration against it.
pub fn frozen_constant_check(lhs: &[f64], scale: &[f64]) -> FrozenCheck {
    let constant = match (lhs.first(), scale.first()) {
        (Some(l), Some(s)) => (l / s).max(0.0),
        _ => 0.0,
    };
    frozen_check(constant, lhs, scale)
}

/// Per-trajectory a priori quantities. Two-element arrays hold the
/// `h^{1/s}` variant first and the `h^{1/2}` variant second.
#[derive(Debug, Clone, PartialEq)]
pub struct AprioriReport {
    pub h: f64,
    pub s: f64,
    pub radius: Option<f64>,
    pub max_mass_error: f64,
    pub min_value: f64,
    pub sum_wh2: f64,
    /// `h ∫ psi f0 + T |D^2 psi| (h^e + h R^{2-2s})`.
    pub sum_wh2_scale: [f64; 2],
    /// `max_i M2(f^i) - M2(f^{i-1}) - 4 W_i^2`.
    pub m2v_excess: f64,
    /// `max_i M2(fbar^i) - M2(f^{i-1})`, the diffusion share the constant bounds.
    pub m2v_diffusion: f64,
    /// `h^e + h R^{2-2s}`.
    pub m2v_scale: [f64; 2],
    /// `max_i (∫|x'-x|^2 + |v'-v|^2 - h^2 ∫(|v|^2+|v'|^2)) / W_i^2` over steps with `W_i > 0`.
    pub coupling_ratio: f64,
    /// `max_t ||f(t)||_p^p / (e^{alpha T (1-p)} ||f0||_p^p)`.
    pub lp_literal_ratio: f64,
    /// `max_n ||f(t)||_p^p / ((1 + alpha h)^{n (p-1)} ||f0||_p^p)`.
    pub lp_growth_ratio: f64,
    pub p: f64,
    pub alpha: f64,
}

impl AprioriReport {
    pub fn mass_ok(&self) -> bool {
        self.max_mass_error <= MASS_TOL
    }

    pub fn nonneg_ok(&self) -> bool {
        self.min_value >= 0.0
    }

    pub fn lp_literal_ok(&self) -> bool {
        self.lp_literal_ratio <= 1.0 + CHECK_SLACK
    }

    pub fn lp_growth_ok(&self) -> bool {
        self.lp_growth_ratio <= 1.0 + CHECK_SLACK
    }
}

fn truncation_term(h: f64, s: f64, r: Option<f64>) -> f64 {
    match r {
        Some(r) => h * r.powf(2.0 - 2.0 * s),
        None if s >= 1.0 => h,
        None => f64::INFINITY,
    }
}

pub fn apriori_report(traj: &Trajectory, psi: &dyn Potential) -> Result<AprioriReport> {
    let cfg = &traj.config;
    let (h, s, p, alpha) = (cfg.h, cfg.s, cfg.p, cfg.alpha);
    let t_end = traj.time(traj.steps());
    let r = cfg.radius();
    let f0 = traj.initial();
    let lp0 = f0.lp_norm_p(p)?;

    let mut max_mass_error: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for f in traj.grids.iter().chain(&traj.diffused) {
        max_mass_error = max_mass_error.max((f.mass() - 1.0).abs());
        min_value = min_value.min(f.min_value());
    }

    let sum_wh2: f64 = traj.stats.iter().map(|st| st.wh2).sum();
    let trunc = truncation_term(h, s, r);
    let hess = psi.hessian_sup();
    let e0 = f0.potential_energy(psi);
    let exps = [1.0 / s, 0.5];
    let m2v_scale = exps.map(|e| h.powf(e) + trunc);
    let sum_wh2_scale = m2v_scale.map(|m| h * e0 + t_end * hess * m);

    let mut m2v_excess = f64::NEG_INFINITY;
    let mut m2v_diffusion = f64::NEG_INFINITY;
    let mut coupling_ratio: f64 = 0.0;
    for (n, st) in traj.stats.iter().enumerate() {
        let d = traj.records[n + 1].m2v - traj.records[n].m2v - 4.0 * st.wh2;
        m2v_excess = m2v_excess.max(d);
        m2v_diffusion = m2v_diffusion.max(traj.diffused[n].second_moment_v() - traj.records[n].m2v);
        if st.wh2 > 0.0 {
            coupling_ratio = coupling_ratio.max((st.displacement2 - st.velocity2) / st.wh2);
        }
    }

    // L^p at every grid time and at every mid-step of the interpolation
    let half = flow_operator(cfg, &f0.geom, 0.5 * h)?;
    let literal = (alpha * t_end * (1.0 - p)).exp() * lp0;
    let mut lp_literal_ratio: f64 = 0.0;
    let mut lp_growth_ratio: f64 = 0.0;
    for n in 0..traj.steps() {
        let fn_ = &traj.grids[n];
        let mid = match &half {
            Some(op) => op.apply(fn_)?.lp_norm_p(p)?,
            None => fn_.lp_norm_p(p)?,
        };
        let at = fn_.lp_norm_p(p)?.max(mid);
        let growth = (1.0 + alpha * h).powf(n as f64 * (p - 1.0)) * lp0;
        lp_literal_ratio = lp_literal_ratio.max(at / literal);
        lp_growth_ratio = lp_growth_ratio.max(at / growth);
    }

    Ok(AprioriReport {
        h,
        s,
        radius: r,
        max_mass_error,
        min_value,
        sum_wh2,
        sum_wh2_scale,
        m2v_excess,
        m2v_diffusion,
        m2v_scale,
        coupling_ratio,
        lp_literal_ratio,
        lp_growth_ratio,
        p,
        alpha,
    })
}

/// Frozen-constant checks across an h-refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// Indexed like [`AprioriReport::sum_wh2_scale`].
    pub sum_wh2: [FrozenCheck; 2],
    pub m2v: [FrozenCheck; 2],
    pub coupling: FrozenCheck,
    pub sum_wh2_decreasing: bool,
}

impl ScalingReport {
    /// True when the sum bound holds for at least one exponent and the other
    /// recursions hold.
    pub fn passed(&self) -> bool {
        (self.sum_wh2[0].passed || self.sum_wh2[1].passed)
            && (self.m2v[0].passed || self.m2v[1].passed)
            && self.coupling.passed
    }
}

/// `reports` must be ordered from the coarsest `h` to the finest.
pub fn scaling_study(reports: &[AprioriReport]) -> Result<ScalingReport> {
    if reports.len() < 2 {
        return invalid("a scaling study needs at least two step sizes");
    }
    if reports.windows(2).any(|w| !(w[1].h < w[0].h)) {
        return invalid("reports must be ordered by decreasing h");
    }
    let sums: Vec<f64> = reports.iter().map(|r| r.sum_wh2).collect();
    let excess: Vec<f64> = reports.iter().map(|r| r.m2v_excess).collect();
    let first = &reports[0];
    let pick = |k: usize, f: &dyn Fn(&AprioriReport) -> [f64; 2]| -> Vec<f64> { reports.iter().map(|r| f(r)[k]).collect() };
    let sum_wh2 = [0, 1].map(|k| frozen_constant_check(&sums, &pick(k, &|r| r.sum_wh2_scale)));
    // the constant multiplies the diffusion increment, so it is fitted there
    let m2v = [0, 1].map(|k| {
        let c = (first.m2v_diffusion / first.m2v_scale[k]).max(0.0);
        frozen_check(c, &excess, &pick(k, &|r| r.m2v_scale))
    });
    let ratios: Vec<f64> = reports.iter().map(|r| r.coupling_ratio).collect();
    let ones = vec![1.0; reports.len()];
    let coupling = frozen_constant_check(&ratios, &ones);
    Ok(ScalingReport {
        sum_wh2,
        m2v,
        coupling,
        sum_wh2_decreasing: sums.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0 && w[1] == 0.0),
    })
}

/// `(-Delta_v)^s phi(t, x, .)` on the nodes of `g`, from the transform on the
/// zero-padded velocity grid.
fn frac_laplacian_slice(vals: &[f64], s: f64, g: &Geometry, fft: &(std::sync::Arc<dyn rustfft::Fft<f64>>, std::sync::Arc<dyn rustfft::Fft<f64>>)) -> Vec<f64> {
    let nv = g.nv;
    let np = 2 * nv;
    let dxi = 2.0 * std::f64::consts::PI / (np as f64 * g.dv());
    let mut buf: Vec<Complex<f64>> = vals.iter().chain(std::iter::repeat(&0.0)).take(np).map(|&x| Complex::new(x, 0.0)).collect();
    fft.0.process(&mut buf);
    for (m, b) in buf.iter_mut().enumerate() {
        let k = if m <= np / 2 { m } else { np - m } as f64;
        *b *= (k * dxi).powf(2.0 * s);
    }
    fft.1.process(&mut buf);
    buf.iter().take(nv).map(|c| c.re / np as f64).collect()
}

/// Density provider substituted for the interpolated trajectory.
pub type DensityAt<'a> = &'a (dyn Fn(f64) -> Result<DensityGrid> + Sync);

/// `|∫∫ f (d_t phi + v d_x phi - psi' d_v phi - (-Delta_v)^s phi) + ∫ f0 phi(0)|`
/// by the midpoint rule with four samples per step.
pub fn weak_residual(traj: &Trajectory, phi: &dyn TestFunction, psi: &dyn Potential) -> Result<f64> {
    weak_residual_with(traj, phi, psi, None)
}

/// As [`weak_residual`], optionally evaluating `f(t)` from `exact` instead
/// of the interpolated trajectory.
pub fn weak_residual_with(traj: &Trajectory, phi: &dyn TestFunction, psi: &dyn Potential, exact: Option<DensityAt>) -> Result<f64> {
    const SUB: usize = 4;
    let cfg = &traj.config;
    let g = traj.initial().geom;
    let h = cfg.h;
    let t_end = traj.time(traj.steps());
    let spatial = g.nx > 1;
    let with_diffusion = cfg.mode != Mode::TransportOnly;
    let x_at = |i: usize| if spatial { g.x(i) } else { 0.0 };

    // support: phi must vanish at t = T and at the velocity edges
    let mut peak: f64 = 0.0;
    let mut at_end: f64 = 0.0;
    let mut at_edge: f64 = 0.0;
    for i in 0..g.nx {
        for j in 0..g.nv {
            let (x, v) = (x_at(i), g.v(j));
            peak = peak.max(phi.value(0.0, x, v).abs());
            at_end = at_end.max(phi.value(t_end, x, v).abs());
        }
        at_edge = at_edge.max(phi.value(0.0, x_at(i), g.v(0)).abs());
        at_edge = at_edge.max(phi.value(0.0, x_at(i), -g.v(0)).abs());
    }
    if at_end > 1e-12 * peak.max(1e-300) && at_end > 0.0 {
        return Err(FkfpeError::SupportViolation(format!("test function is {at_end:e} at t = T")));
    }
    if at_edge > 1e-8 * peak && at_edge > 0.0 {
        return Err(FkfpeError::SupportViolation(format!("test function is {at_edge:e} on the velocity boundary")));
    }
    if peak == 0.0 {
        return Ok(0.0);
    }

    let mut planner = FftPlanner::new();
    let fft = (planner.plan_fft_forward(2 * g.nv), planner.plan_fft_inverse(2 * g.nv));
    let offsets: Vec<f64> = (0..SUB).map(|q| (q as f64 + 0.5) * h / SUB as f64).collect();
    let ops: Vec<Option<DiffusionOperator>> = offsets.iter().map(|&tau| flow_operator(cfg, &g, tau)).collect::<Result<_>>()?;

    let integrand = |f: &DensityGrid, t: f64| -> f64 {
        (0..g.nx)
            .into_par_iter()
            .map(|i| {
                let x = x_at(i);
                let lap = if with_diffusion {
                    let slice: Vec<f64> = (0..g.nv).map(|j| phi.value(t, x, g.v(j))).collect();
                    frac_laplacian_slice(&slice, cfg.s, &g, &fft)
                } else {
                    vec![0.0; g.nv]
                };
                let row = f.slice(i);
                (0..g.nv)
                    .map(|j| {
                        let v = g.v(j);
                        let mut l = phi.dt(t, x, v) - psi.grad(v) * phi.dv(t, x, v) - lap[j];
                        if spatial {
                            l += v * phi.dx(t, x, v);
                        }
                        row[j] * l
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            * g.cell_volume()
    };

    let mut total = 0.0;
    for n in 0..traj.steps() {
        for (q, tau) in offsets.iter().enumerate() {
            let t = traj.time(n) + tau;
            let f = match exact {
                Some(ex) => ex(t)?,
                None => match &ops[q] {
                    Some(op) => op.apply(&traj.grids[n])?,
                    None => traj.grids[n].clone(),
                },
            };
            total += integrand(&f, t) * h / SUB as f64;
        }
    }
    let f0 = traj.initial();
    let init: f64 = (0..g.nx)
        .map(|i| (0..g.nv).map(|j| f0.get(i, j) * phi.value(0.0, x_at(i), g.v(j))).sum::<f64>())
        .sum::<f64>()
        * g.cell_volume();
    Ok((total + init).abs())
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_order(hs: &[f64], errs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = hs.iter().zip(errs).map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub radius: Option<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub order: f64,
}

impl ConvergenceTable {
    pub fn from_rows(rows: Vec<ConvergenceRow>) -> Self {
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let order = fitted_order(&hs, &es);
        Self { rows, order }
    }

    /// Errors strictly decrease as `h` decreases.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    pub fn write_csv(&self, mut w: impl Write, header: &str) -> Result<()> {
        write!(w, "{header}")?;
        writeln!(w, "h,R,l1_error")?;
        for r in &self.rows {
            let rad = r.radius.map_or("inf".to_string(), |x| format!("{x:e}"));
            writeln!(w, "{:e},{},{:e}", r.h, rad, r.error)?;
        }
        writeln!(w, "# fitted order {:.4}", self.order)?;
        Ok(())
    }
}

/// Reference density at the final time of a configuration.
pub type ReferenceProvider<'a> = &'a (dyn Fn(&SchemeConfig) -> Result<DensityGrid> + Sync);

/// Runs every configuration (in parallel) and tabulates the final-time L¹
/// error against `reference`, ordered by decreasing `h`.
pub fn convergence_study(configs: &[SchemeConfig], f0: &DensityGrid, psi: &dyn Potential, reference: ReferenceProvider) -> Result<ConvergenceTable> {
    let Some(first) = configs.first() else {
        return invalid("no configurations given");
    };
    for c in configs {
        if c.with_h(first.h) != *first {
            return Err(FkfpeError::GridMismatch("configurations differ in more than h".into()));
        }
    }
    let mut rows: Vec<ConvergenceRow> = configs
        .par_iter()
        .map(|c| {
            let traj = run_scheme(c, f0, psi)?;
            let reference = reference(c)?;
            Ok(ConvergenceRow {
                h: c.h,
                radius: c.radius(),
                error: traj.final_state().l1_distance(&reference)?,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| b.h.total_cmp(&a.h));
    Ok(ConvergenceTable::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Truncation;
    use crate::potential::{Quadratic, Zero};
    use crate::potential::PotentialKind;
    use crate::testfn::Constant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(s: f64, h: f64) -> SchemeConfig {
        SchemeConfig::baseline(s, h, 0.5, 16, 32, 4.0, 6.0)
    }

    #[test]
    fn mass_and_sign_preserved() {
        for s in [0.5, 0.75, 1.0] {
            let cfg = small(s, 0.125);
            let f0 = cfg.initial_density().unwrap();
            let psi = cfg.build_potential();
            let traj = run_scheme(&cfg, &f0, psi.as_ref()).unwrap();
            assert_eq!(traj.steps(), 4);
            for f in traj.grids.iter().chain(&traj.diffused) {
                assert!((f.mass() - 1.0).abs() < 1e-9);
                assert!(f.min_value() >= 0.0);
            }
            for w in traj.records.windows(2) {
                assert!((w[1].t - w[0].t - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transport_only_without_potential_is_free_shear() {
        let mut cfg = small(1.0, 0.125);
        cfg.mode = Mode::TransportOnly;
        cfg.potential = PotentialKind::Zero;
        cfg.init.sx = 1.2;
        cfg.init.sv = 1.2;
        let f0 = cfg.initial_density().unwrap();
        let traj = run_scheme(&cfg, &f0, &Zero).unwrap();
        let t = 0.5;
        let mut exact = DensityGrid::from_fn(f0.geom, |x, v| {
            (-3..=3)
                .map(|k| {
                    let d = x - t * v + 8.0 * k as f64;
                    (-0.5 * d * d / 1.44).exp()
                })
                .sum::<f64>()
                * (-0.5 * v * v / 1.44).exp()
        });
        exact.normalize().unwrap();
        assert!(traj.final_state().l1_distance(&exact).unwrap() < 1e-6);
        let rep = apriori_report(&traj, &Zero).unwrap();
        assert_eq!(rep.sum_wh2, 0.0);
    }

    #[test]
    fn interpolation_is_right_continuous_and_mass_preserving() {
        let cfg = small(0.75, 0.125);
        let f0 = cfg.initial_density().unwrap();
        let psi = cfg.build_potential();
        let traj = run_scheme(&cfg, &f0, psi.as_ref()).unwrap();
        for n in 0..traj.steps() {
            assert_eq!(interpolate(&traj, traj.time(n)).unwrap(), traj.grids[n]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let t = rng.random_range(0.0..0.5);
            assert!((interpolate(&traj, t).unwrap().mass() - 1.0).abs() < 1e-9);
        }
        assert!(matches!(interpolate(&traj, 0.5), Err(FkfpeError::TimeOutOfRange { .. })));
        assert!(matches!(interpolate(&traj, -0.1), Err(FkfpeError::TimeOutOfRange { .. })));
    }

    #[test]
    fn interpolation_approaches_untruncated_diffusion() {
        let mut cfg = small(0.75, 0.125);
        cfg.truncation = Truncation::None;
        let f0 = cfg.initial_density().unwrap();
        let psi = cfg.build_potential();
        let traj = run_scheme(&cfg, &f0, psi.as_ref()).unwrap();
        let near = interpolate(&traj, 0.125 * (1.0 - 1e-9)).unwrap();
        assert!(near.l1_distance(&traj.diffused[0]).unwrap() < 1e-6);
    }

    #[test]
    fn weak_residual_of_zero_is_zero_and_constant_violates_support() {
        let cfg = small(1.0, 0.125);
        let f0 = cfg.initial_density().unwrap();
        let psi = cfg.build_potential();
        let traj = run_scheme(&cfg, &f0, psi.as_ref()).unwrap();
        assert_eq!(weak_residual(&traj, &Constant(0.0), psi.as_ref()).unwrap(), 0.0);
        assert!(matches!(
            weak_residual(&traj, &Constant(1.0), psi.as_ref()),
            Err(FkfpeError::SupportViolation(_))
        ));
    }

    #[test]
    fn contraction_abort() {
        let mut cfg = small(1.0, 1.0);
        cfg.t_end = 2.0;
        let f0 = cfg.initial_density().unwrap();
        assert!(matches!(
            run_scheme(&cfg, &f0, &Quadratic::new(1.0)),
            Err(FkfpeError::ContractionViolated { .. })
        ));
    }

    #[test]
    fn frozen_constant_protocol() {
        let c = frozen_constant_check(&[1.0, 0.5, 0.24], &[2.0, 1.0, 0.5]);
        assert!(c.passed);
        assert_eq!(c.constant, 0.5);
        assert!(!frozen_constant_check(&[1.0, 0.6], &[2.0, 1.0]).passed);
        assert!(frozen_constant_check(&[1.0, 0.504], &[2.0, 1.0]).passed);
        assert!(frozen_constant_check(&[-1.0, 0.0], &[2.0, 1.0]).passed);
    }

    #[test]
    fn fitted_order_of_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
        assert!((fitted_order(&hs, &es) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn single_thread_runs_are_bit_identical() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let cfg = small(0.75, 0.125);
        let f0 = cfg.initial_density().unwrap();
        let psi = cfg.build_potential();
        let a = pool.install(|| run_scheme(&cfg, &f0, psi.as_ref()).unwrap());
        let b = pool.install(|| run_scheme(&cfg, &f0, psi.as_ref()).unwrap());
        assert_eq!(a.grids, b.grids);
        let ra: Vec<String> = a.records.iter().map(|r| r.csv_row()).collect();
        let rb: Vec<String> = b.records.iter().map(|r| r.csv_row()).collect();
        assert_eq!(ra, rb);
    }
}
