//! Kinetic-transport phase: minimise `W_h(fbar, f)^2 / 2h + ∫ psi f`.
//!
//! In the coordinates `(G_h ∘ F_h)` / `G_h` the problem is a quadratic
//! Wasserstein proximal step for an energy depending on `v` only, so the
//! optimal map is `v' = S(v)` with `S + h psi'(S) = v` and, pulled back,
//! `x' = x + h (v + v') / 2`. [`jko_map_step`] applies this map;
//! [`jko_variational_step`] minimises the objective directly and serves as
//! its oracle.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::accel_cost::{self, DiscreteMeasure, PhasePoint};
use crate::config::RemapKind;
use crate::error::{invalid, FkfpeError, Result};
use crate::grid::{DensityGrid, Geometry};
use crate::ot::{self, TransportPlan};
use crate::potential::Potential;
use crate::testfn::TestFunction;

fn check_contraction(psi: &dyn Potential, h: f64) -> Result<()> {
    if !(h > 0.0) {
        return invalid(format!("time step h = {h} must be positive"));
    }
    let product = h * psi.hessian_sup();
    if !(product < 1.0) {
        return Err(FkfpeError::ContractionViolated { product });
    }
    Ok(())
}

/// Root of `S + h psi'(S) = v`.
pub fn implicit_velocity_map(psi: &dyn Potential, h: f64, v: f64) -> Result<f64> {
    check_contraction(psi, h)?;
    Ok(solve_velocity(psi, h, v))
}

fn solve_velocity(psi: &dyn Potential, h: f64, v: f64) -> f64 {
    let g = |s: f64| s + h * psi.grad(s) - v;
    let tol = 1e-14 * (1.0 + v.abs());
    let mut s = v;
    let mut r = g(s);
    for _ in 0..100 {
        if r.abs() <= tol {
            return s;
        }
        let step = r / (1.0 + h * psi.hess(s));
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = s - lambda * step;
            let rt = g(trial);
            if rt.abs() < r.abs() {
                s = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r.abs() <= tol {
        return s;
    }
    // g is strictly increasing: bisect on an expanding bracket
    let mut width = 1.0 + v.abs();
    let (mut lo, mut hi) = (v - width, v + width);
    while g(lo) > 0.0 || g(hi) < 0.0 {
        width *= 2.0;
        lo = v - width;
        hi = v + width;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JkoPath {
    Map,
    Variational,
}

/// Deterministic coupling: the cell at `(x_i, v_j)` moves to
/// `(x_i + h (v_j + w_j) / 2, w_j)` with `w_j = target_v[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub h: f64,
    pub target_v: Vec<f64>,
}

impl Coupling {
    pub fn image(&self, g: &Geometry, i: usize, j: usize) -> PhasePoint {
        let (x, v) = (g.x(i), g.v(j));
        let w = self.target_v[j];
        PhasePoint::new(x + 0.5 * self.h * (v + w), w)
    }

    /// Images of every occupied cell of `fbar`, as a measure.
    pub fn push(&self, fbar: &DensityGrid) -> Result<DiscreteMeasure> {
        let g = fbar.geom;
        let cv = g.cell_volume();
        let mut pts = Vec::new();
        let mut w = Vec::new();
        for i in 0..g.nx {
            for j in 0..g.nv {
                let m = fbar.get(i, j) * cv;
                if m > 0.0 {
                    pts.push(self.image(&g, i, j));
                    w.push(m);
                }
            }
        }
        DiscreteMeasure::normalized(pts, w)
    }
}

#[derive(Debug, Clone)]
pub struct JkoResult {
    pub f: DensityGrid,
    /// `wh2 / 2h + sum w psi(v')` over the exact images.
    pub objective: f64,
    pub wh2: f64,
    pub coupling: Coupling,
    pub plan: Option<TransportPlan>,
    pub path: JkoPath,
    /// Mass whose image left the velocity window.
    pub leakage: f64,
}

/// Grid measure of the occupied cells (cell centres, cell masses).
pub fn grid_measure(f: &DensityGrid) -> Result<DiscreteMeasure> {
    let atoms = f.atoms();
    DiscreteMeasure::normalized(
        atoms.iter().map(|a| PhasePoint::new(a.0, a.1)).collect(),
        atoms.iter().map(|a| a.2).collect(),
    )
}

/// Area-weighted deposit of point masses; returns the density and the mass
/// deposited at a velocity boundary because it fell outside the window.
pub fn deposit_bilinear(g: Geometry, atoms: impl IntoIterator<Item = (f64, f64, f64)>) -> (DensityGrid, f64) {
    let mut out = DensityGrid::zeros(g);
    let (dx, dv) = (g.dx(), g.dv());
    let mut leak = 0.0;
    for (x, v, m) in atoms {
        let mut eta = (v + g.lv) / dv;
        if eta < 0.0 || eta > (g.nv - 1) as f64 {
            leak += m;
            eta = eta.clamp(0.0, (g.nv - 1) as f64);
        }
        let j0 = (eta.floor() as usize).min(g.nv - 2);
        let b = eta - j0 as f64;
        let cols = [(j0, 1.0 - b), (j0 + 1, b)];
        if g.nx == 1 {
            for (j, wj) in cols {
                out.values[j] += m * wj;
            }
            continue;
        }
        let xi = (g.wrap_x(x) + g.lx) / dx;
        let i0 = (xi.floor() as usize).min(g.nx - 1);
        let a = xi - i0 as f64;
        let rows = [(i0, 1.0 - a), ((i0 + 1) % g.nx, a)];
        for (i, wi) in rows {
            for (j, wj) in cols {
                out.values[g.index(i, j)] += m * wi * wj;
            }
        }
    }
    let inv = 1.0 / g.cell_volume();
    out.values.iter_mut().for_each(|x| *x *= inv);
    (out, leak)
}

/// Periodic band-limited interpolation kernel for `n` (even) nodes of spacing `d`.
fn periodic_sinc(y: f64, d: f64, n: usize) -> f64 {
    let r = y / d;
    let nearest = r.round();
    if (r - nearest).abs() < 1e-12 {
        return if (nearest as i64).rem_euclid(n as i64) == 0 { 1.0 } else { 0.0 };
    }
    let a = std::f64::consts::PI * r;
    a.sin() / (n as f64 * (a / n as f64).tan())
}

/// Forward and inverse x-transforms.
type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

/// Precomputed kinetic map for one `(geometry, psi, h, remap)`.
pub struct KineticMap {
    geom: Geometry,
    h: f64,
    remap: RemapKind,
    targets: Vec<f64>,
    shifts: Vec<f64>,
    leaks: Vec<bool>,
    vmat: Vec<f64>,
    fft: Option<FftPair>,
}

impl KineticMap {
    pub fn new(geom: Geometry, psi: &dyn Potential, h: f64, remap: RemapKind) -> Result<Self> {
        check_contraction(psi, h)?;
        let nv = geom.nv;
        let dv = geom.dv();
        let targets: Vec<f64> = (0..nv).map(|j| solve_velocity(psi, h, geom.v(j))).collect();
        let shifts: Vec<f64> = (0..nv).map(|j| 0.5 * h * (geom.v(j) + targets[j])).collect();
        let leaks = targets
            .iter()
            .map(|&w| w < -geom.lv - 0.5 * dv || w > geom.lv - 0.5 * dv)
            .collect();
        let mut map = Self {
            geom,
            h,
            remap,
            targets,
            shifts,
            leaks,
            vmat: Vec::new(),
            fft: None,
        };
        if remap == RemapKind::Spectral {
            let np = 2 * nv;
            let mut vmat = vec![0.0; nv * nv];
            for k in 0..nv {
                let w = geom.v(k);
                let u = w + h * psi.grad(w);
                if u.abs() > 3.0 * geom.lv - dv {
                    continue;
                }
                let jac = 1.0 + h * psi.hess(w);
                for j in 0..nv {
                    vmat[k * nv + j] = jac * periodic_sinc(u - geom.v(j), dv, np);
                }
            }
            map.vmat = vmat;
            if geom.nx > 1 {
                let mut planner = FftPlanner::new();
                map.fft = Some((planner.plan_fft_forward(geom.nx), planner.plan_fft_inverse(geom.nx)));
            }
        }
        Ok(map)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn coupling(&self) -> Coupling {
        Coupling {
            h: self.h,
            target_v: self.targets.clone(),
        }
    }

    pub fn apply(&self, fbar: &DensityGrid, psi: &dyn Potential) -> Result<JkoResult> {
        let g = self.geom;
        g.check_same(&fbar.geom)?;
        let (nx, nv) = (g.nx, g.nv);
        let cv = g.cell_volume();
        let col_mass: Vec<f64> = (0..nv)
            .map(|j| (0..nx).map(|i| fbar.get(i, j)).sum::<f64>() * cv)
            .collect();
        let mut wh2 = 0.0;
        let mut energy = 0.0;
        let mut leakage = 0.0;
        for j in 0..nv {
            let (v, w) = (g.v(j), self.targets[j]);
            wh2 += col_mass[j] * (w - v) * (w - v);
            energy += col_mass[j] * psi.value(w);
            if self.leaks[j] {
                leakage += col_mass[j];
            }
        }
        let f = match self.remap {
            RemapKind::Bilinear => {
                let atoms = (0..nx).flat_map(|i| {
                    (0..nv).map(move |j| {
                        let p = self.coupling_image(i, j);
                        (p.x, p.v, fbar.get(i, j) * cv)
                    })
                });
                deposit_bilinear(g, atoms).0
            }
            RemapKind::Spectral => self.spectral(fbar)?,
        };
        Ok(JkoResult {
            f,
            objective: wh2 / (2.0 * self.h) + energy,
            wh2,
            coupling: self.coupling(),
            plan: None,
            path: JkoPath::Map,
            leakage,
        })
    }

    fn coupling_image(&self, i: usize, j: usize) -> PhasePoint {
        PhasePoint::new(self.geom.x(i) + self.shifts[j], self.targets[j])
    }

    fn spectral(&self, fbar: &DensityGrid) -> Result<DensityGrid> {
        let g = self.geom;
        let (nx, nv) = (g.nx, g.nv);
        let mut sheared = fbar.clone();
        if let Some((fwd, inv)) = &self.fft {
            let period = 2.0 * g.lx;
            let cols: Vec<Vec<f64>> = (0..nv)
                .into_par_iter()
                .map(|j| {
                    let mut buf: Vec<Complex<f64>> =
                        (0..nx).map(|i| Complex::new(fbar.get(i, j), 0.0)).collect();
                    fwd.process(&mut buf);
                    let c = self.shifts[j];
                    for (m, b) in buf.iter_mut().enumerate() {
                        let km = if m <= nx / 2 { m as f64 } else { m as f64 - nx as f64 };
                        let phase = -2.0 * std::f64::consts::PI * km * c / period;
                        *b *= Complex::new(phase.cos(), phase.sin());
                    }
                    inv.process(&mut buf);
                    buf.iter().map(|z| z.re / nx as f64).collect()
                })
                .collect();
            for (j, col) in cols.iter().enumerate() {
                for (i, &val) in col.iter().enumerate() {
                    sheared.values[g.index(i, j)] = val;
                }
            }
        }
        let mut out = DensityGrid::zeros(g);
        out.values
            .par_chunks_mut(nv)
            .zip(sheared.values.par_chunks(nv))
            .for_each(|(dst, src)| {
                for (k, d) in dst.iter_mut().enumerate() {
                    let row = &self.vmat[k * nv..(k + 1) * nv];
                    *d = row.iter().zip(src).map(|(a, b)| a * b).sum();
                }
            });
        let target_mass = fbar.mass();
        out.values.iter_mut().for_each(|x| {
            if *x < 0.0 {
                *x = 0.0
            }
        });
        let m = out.mass();
        if !(m > 0.0) {
            return Err(FkfpeError::NonFinite("remapped density".into()));
        }
        let k = target_mass / m;
        out.values.iter_mut().for_each(|x| *x *= k);
        Ok(out)
    }
}

pub fn jko_map_step(fbar: &DensityGrid, psi: &dyn Potential, h: f64, remap: RemapKind) -> Result<JkoResult> {
    KineticMap::new(fbar.geom, psi, h, remap)?.apply(fbar, psi)
}

/// Minimiser of `(u - v)^2 / 2h + psi(u)` by zooming lattice search.
fn prox_lattice(psi: &dyn Potential, h: f64, v: f64, scale: f64) -> f64 {
    const K: i32 = 16;
    let q = |u: f64| (u - v) * (u - v) / (2.0 * h) + psi.value(u);
    let mut c = v;
    let mut w = (1.5 * h * psi.grad(v).abs()).max(scale);
    for _ in 0..400 {
        let mut best = (f64::INFINITY, 0);
        for k in -K..=K {
            let u = c + w * k as f64 / K as f64;
            let val = q(u);
            if val < best.0 {
                best = (val, k);
            }
        }
        c += w * best.1 as f64 / K as f64;
        if best.1.abs() == K {
            w *= 2.0;
            continue;
        }
        w *= 0.25;
        if w < 1e-13 * (1.0 + c.abs()) {
            break;
        }
    }
    c
}

/// Direct minimisation over grid-supported candidates: each source velocity
/// takes its proximal target, positions follow the `C_h`-optimal
/// `x' = x + h (v + v') / 2`, and the transport term is evaluated by entropic
/// OT with regularisation `eps` on the `C_h` cost matrix.
pub fn jko_variational_step(fbar: &DensityGrid, psi: &dyn Potential, h: f64, eps: f64) -> Result<JkoResult> {
    if !(h > 0.0) {
        return invalid("time step must be positive");
    }
    let g = fbar.geom;
    let src = grid_measure(fbar)?;
    if 2 * src.len() > ot::EXACT_CAP {
        return Err(FkfpeError::SizeCap {
            size: 2 * src.len(),
            cap: ot::EXACT_CAP,
        });
    }
    let target_v: Vec<f64> = (0..g.nv)
        .map(|j| prox_lattice(psi, h, g.v(j), g.dv()))
        .collect();
    let coupling = Coupling { h, target_v };
    let dst = coupling.push(fbar)?;
    let cost = accel_cost::cost_matrix(h, &src, &dst);
    let plan = ot::solve_entropic(&src.weights, &dst.weights, &cost, eps, 200_000)?;
    let energy: f64 = dst.support.iter().zip(&dst.weights).map(|(p, w)| w * psi.value(p.v)).sum();
    let wh2 = plan.total_cost;
    let (f, leakage) = deposit_bilinear(g, dst.support.iter().zip(&dst.weights).map(|(p, w)| (p.x, p.v, *w)));
    Ok(JkoResult {
        f,
        objective: wh2 / (2.0 * h) + energy,
        wh2,
        coupling,
        plan: Some(plan),
        path: JkoPath::Variational,
        leakage,
    })
}

/// Objective `W_h(fbar, nu)^2 / 2h + ∫ psi d nu` with exact transport.
pub fn candidate_objective(fbar: &DensityGrid, nu: &DiscreteMeasure, psi: &dyn Potential, h: f64) -> Result<f64> {
    let src = grid_measure(fbar)?;
    let (w, _) = accel_cost::wh(h, &src, nu)?;
    let energy: f64 = nu.support.iter().zip(&nu.weights).map(|(p, m)| m * psi.value(p.v)).sum();
    Ok(w * w / (2.0 * h) + energy)
}

/// Terms of the first-order optimality condition of one kinetic step, in
/// per-step units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElResidual {
    /// `∫ [(x'-x) d_x phi + (v'-v) d_v phi](x',v') dP`.
    pub coupling: f64,
    /// `h ∫ (v d_x phi - psi'(v) d_v phi) f`.
    pub transport: f64,
    /// `(h^2/2) ∫ psi'(v) d_x phi f`, the second-order remainder.
    pub remainder: f64,
    /// `|coupling - transport|`.
    pub residual: f64,
}

pub fn el_residual(
    fbar: &DensityGrid,
    res: &JkoResult,
    psi: &dyn Potential,
    h: f64,
    phi: &dyn TestFunction,
) -> Result<ElResidual> {
    let g = fbar.geom;
    g.check_same(&res.f.geom)?;
    let cv = g.cell_volume();
    let mut coupling = 0.0;
    for i in 0..g.nx {
        for j in 0..g.nv {
            let m = fbar.get(i, j) * cv;
            if m == 0.0 {
                continue;
            }
            let (x, v) = (g.x(i), g.v(j));
            let p = res.coupling.image(&g, i, j);
            let xp = if g.nx == 1 { p.x } else { g.wrap_x(p.x) };
            coupling += m * ((p.x - x) * phi.dx(0.0, xp, p.v) + (p.v - v) * phi.dv(0.0, xp, p.v));
        }
    }
    let mut transport = 0.0;
    let mut remainder = 0.0;
    for i in 0..g.nx {
        let x = g.x(i);
        for j in 0..g.nv {
            let m = res.f.get(i, j) * cv;
            if m == 0.0 {
                continue;
            }
            let v = g.v(j);
            let (px, pv) = (phi.dx(0.0, x, v), phi.dv(0.0, x, v));
            transport += m * (v * px - psi.grad(v) * pv);
            remainder += m * psi.grad(v) * px;
        }
    }
    transport *= h;
    remainder *= 0.5 * h * h;
    Ok(ElResidual {
        coupling,
        transport,
        remainder,
        residual: (coupling - transport).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Quadratic, Quartic, Zero};
    use crate::testfn::{Constant, GaussianBump};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn velocity_map_examples() {
        let q = Quadratic::new(1.0);
        assert!((implicit_velocity_map(&q, 0.5, 3.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(implicit_velocity_map(&Zero, 0.5, 1.7).unwrap(), 1.7);
        let quartic = Quartic { cap: 1.5 };
        let s = implicit_velocity_map(&quartic, 0.1, 1.0).unwrap();
        // bisection oracle on S + 0.1 S^3 = 1
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid + 0.1 * mid.powi(3) > 1.0 { hi = mid } else { lo = mid }
        }
        assert!((s - lo).abs() < 1e-12);
        assert!((s - 0.9215).abs() < 1e-3, "{s}");
        assert!((s + 0.1 * s.powi(3) - 1.0).abs() <= 1e-12);
        assert!(matches!(
            implicit_velocity_map(&q, 1.0, 1.0),
            Err(FkfpeError::ContractionViolated { .. })
        ));
    }

    #[test]
    fn velocity_map_residual_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let quartic = Quartic { cap: 3.0 };
        for _ in 0..1000 {
            let v = rng.random_range(-3.0..3.0);
            let s = implicit_velocity_map(&quartic, 0.03, v).unwrap();
            assert!((s + 0.03 * s.powi(3) - v).abs() <= 1e-12);
        }
    }

    fn bump_grid(nx: usize, nv: usize, l: f64, x0: f64, v0: f64, w: f64) -> DensityGrid {
        let g = Geometry::new(nx, nv, l, l).unwrap();
        DensityGrid::gaussian(g, x0, v0, w, w).unwrap()
    }

    #[test]
    fn free_transport_when_potential_vanishes() {
        let f = bump_grid(32, 32, 4.0, 0.0, 0.5, 0.6);
        for remap in [RemapKind::Bilinear, RemapKind::Spectral] {
            let r = jko_map_step(&f, &Zero, 0.25, remap).unwrap();
            assert_eq!(r.wh2, 0.0);
            assert!((r.f.mass() - 1.0).abs() < 1e-10);
            assert!(r.f.min_value() >= 0.0);
            let exact = DensityGrid::from_fn(f.geom, |x, v| {
                let d = (x - 0.25 * v) - 0.0;
                (-0.5 * d * d / 0.36 - 0.5 * (v - 0.5).powi(2) / 0.36).exp()
            });
            let mut exact = exact;
            exact.normalize().unwrap();
            let err = r.f.l1_distance(&exact).unwrap();
            let tol = if remap == RemapKind::Spectral { 1e-6 } else { 0.1 };
            assert!(err < tol, "{remap:?}: {err}");
        }
    }

    #[test]
    fn bump_centre_moves_as_predicted() {
        let g = Geometry::new(32, 64, 4.0, 4.0).unwrap();
        let f = DensityGrid::gaussian(g, 0.0, 1.0, 0.15, 0.15).unwrap();
        let q = Quadratic::new(1.0);
        let r = jko_map_step(&f, &q, 0.5, RemapKind::Bilinear).unwrap();
        let xm: f64 = (0..g.nx).map(|i| g.x(i) * r.f.x_marginal()[i]).sum::<f64>() * g.dx();
        let vm: f64 = (0..g.nv).map(|j| g.v(j) * r.f.v_marginal()[j]).sum::<f64>() * g.dv();
        assert!((vm - 1.0 / 1.5).abs() < g.dv(), "{vm}");
        assert!((xm - 0.25 * (1.0 + 1.0 / 1.5)).abs() < g.dx(), "{xm}");
    }

    #[test]
    fn energy_decreases_for_convex_potentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = Quadratic::new(1.0);
        for _ in 0..10 {
            let f = bump_grid(16, 64, 4.0, rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5), rng.random_range(0.3..0.8));
            for remap in [RemapKind::Bilinear, RemapKind::Spectral] {
                let r = jko_map_step(&f, &q, 0.25, remap).unwrap();
                assert!(r.f.potential_energy(&q) <= f.potential_energy(&q) + 1e-12);
            }
        }
    }

    #[test]
    fn variational_matches_map_on_small_grid() {
        let g = Geometry::new(16, 16, 4.0, 4.0).unwrap();
        let f = DensityGrid::gaussian(g, 0.0, 0.5, 0.8, 0.8).unwrap();
        let q = Quadratic::new(1.0);
        let m = jko_map_step(&f, &q, 0.25, RemapKind::Spectral).unwrap();
        let v = jko_variational_step(&f, &q, 0.25, 1e-3).unwrap();
        assert!(v.objective >= m.objective - 1e-3);
        assert!((v.objective - m.objective).abs() <= 1e-3 * (1.0 + m.objective.abs()));
        let free = jko_variational_step(&f, &Zero, 0.25, 1e-3).unwrap();
        assert!(free.objective.abs() < 1e-6, "{}", free.objective);
    }

    #[test]
    fn map_beats_candidates() {
        let g = Geometry::new(8, 16, 3.0, 3.0).unwrap();
        let f = DensityGrid::gaussian(g, 0.0, 0.3, 0.8, 0.7).unwrap();
        let q = Quadratic::new(1.0);
        let h = 0.25;
        let r = jko_map_step(&f, &q, h, RemapKind::Bilinear).unwrap();
        let images = r.coupling.push(&f).unwrap();
        let own = candidate_objective(&f, &images, &q, h).unwrap();
        assert!((own - r.objective).abs() < 1e-9);
        let src = grid_measure(&f).unwrap();
        let free = src.push_forward(|p| PhasePoint::new(p.x + h * p.v, p.v));
        assert!(own <= candidate_objective(&f, &free, &q, h).unwrap());
        assert!(own <= candidate_objective(&f, &src, &q, h).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let pert = images.push_forward(|p| PhasePoint::new(p.x + rng.random_range(-0.05..0.05), p.v + rng.random_range(-0.05..0.05)));
            assert!(own <= candidate_objective(&f, &pert, &q, h).unwrap() + 1e-12);
        }
    }

    #[test]
    fn el_residual_basics() {
        let f = bump_grid(32, 32, 4.0, 0.0, 0.5, 0.6);
        let q = Quadratic::new(1.0);
        let r = jko_map_step(&f, &q, 0.25, RemapKind::Spectral).unwrap();
        assert_eq!(el_residual(&f, &r, &q, 0.25, &Constant(3.0)).unwrap().residual, 0.0);
        let free = jko_map_step(&f, &Zero, 0.25, RemapKind::Spectral).unwrap();
        let phi = GaussianBump::new(0.0, 0.0, 1.0, 1.5).linear_in_x();
        let e = el_residual(&f, &free, &Zero, 0.25, &phi).unwrap();
        assert!(e.residual < 1e-6, "{e:?}");
    }

    #[test]
    fn deposit_conserves_mass_and_counts_leakage() {
        let g = Geometry::new(4, 8, 1.0, 1.0).unwrap();
        let (f, leak) = deposit_bilinear(g, vec![(0.1, 0.2, 0.5), (-0.9, 5.0, 0.25), (0.99, -0.3, 0.25)]);
        assert!((f.mass() - 1.0).abs() < 1e-14);
        assert_eq!(leak, 0.25);
    }

    proptest::proptest! {
        #[test]
        fn velocity_map_solves_and_is_monotone(v in -6.0f64..6.0, dv in 0.01f64..2.0, h in 0.01f64..0.14) {
            let psi = Quartic { cap: 1.5 };
            let a = implicit_velocity_map(&psi, h, v).unwrap();
            let b = implicit_velocity_map(&psi, h, v + dv).unwrap();
            proptest::prop_assert!((a + h * psi.grad(a) - v).abs() < 1e-10);
            proptest::prop_assert!(b > a);
        }
    }
}
