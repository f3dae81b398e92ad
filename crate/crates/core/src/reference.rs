//! Oracles that share no machinery with the splitting scheme: a
//! method-of-lines solver, an SDE Monte Carlo chain, characteristic flows and
//! the stationary stable law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::config::{InitialBump, Mode, SchemeConfig};
use crate::error::{invalid, FkfpeError, Result};
use crate::frac_kernel::build_kernel;
use crate::grid::{DensityGrid, Geometry};
use crate::kinetic::implicit_velocity_map;
use crate::particles::ParticleEnsemble;
use crate::potential::Potential;
use crate::stable::sample_stable_increment;

/// Numerical flux whose differences reproduce the sixth-order central derivative.
const FACE: [f64; 6] = [1.0 / 60.0, -8.0 / 60.0, 37.0 / 60.0, 37.0 / 60.0, -8.0 / 60.0, 1.0 / 60.0];

/// RK4 stability radius used for the internal step (both axes, with margin).
const RK4_RADIUS: f64 = 2.5;

struct MolSystem<'a> {
    g: Geometry,
    psi: &'a dyn Potential,
    transport_x: bool,
    diffusion: bool,
    symbol: Vec<f64>,
}

impl MolSystem<'_> {
    fn rhs(&self, f: &[f64], out: &mut [f64]) {
        let g = self.g;
        let (nx, nv) = (g.nx, g.nv);
        let (dx, dv) = (g.dx(), g.dv());
        out.par_chunks_mut(nv).enumerate().for_each_init(
            || {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(nv), planner.plan_fft_inverse(nv), vec![Complex::new(0.0, 0.0); nv], vec![0.0; nv + 1])
            },
            |(fwd, inv, buf, faces), (i, row)| {
                let src = &f[i * nv..(i + 1) * nv];
                // drift d_v(psi' f) with zero flux through the velocity edges
                let flux = |j: isize| -> f64 {
                    if j < 0 || j >= nv as isize {
                        0.0
                    } else {
                        let v = g.v(j as usize);
                        self.psi.grad(v) * src[j as usize]
                    }
                };
                faces[0] = 0.0;
                faces[nv] = 0.0;
                for (k, face) in faces.iter_mut().enumerate().take(nv).skip(1) {
                    let j = k as isize - 1;
                    *face = (0..6).map(|m| FACE[m] * flux(j - 2 + m as isize)).sum();
                }
                for j in 0..nv {
                    row[j] = (faces[j + 1] - faces[j]) / dv;
                }
                // x-transport -d_x(v f), periodic
                if self.transport_x {
                    let at = |ii: isize| -> &[f64] {
                        let w = ii.rem_euclid(nx as isize) as usize;
                        &f[w * nv..(w + 1) * nv]
                    };
                    let ii = i as isize;
                    let face = |left: isize, j: usize| -> f64 { (0..6).map(|m| FACE[m] * at(left - 2 + m as isize)[j]).sum() };
                    for (j, r) in row.iter_mut().enumerate() {
                        let v = g.v(j);
                        *r -= v * (face(ii, j) - face(ii - 1, j)) / dx;
                    }
                }
                if self.diffusion {
                    for (b, &x) in buf.iter_mut().zip(src) {
                        *b = Complex::new(x, 0.0);
                    }
                    fwd.process(buf);
                    for (b, m) in buf.iter_mut().zip(&self.symbol) {
                        *b *= *m;
                    }
                    inv.process(buf);
                    for (r, b) in row.iter_mut().zip(buf.iter()) {
                        *r -= b.re / nv as f64;
                    }
                }
            },
        );
    }
}

/// Method-of-lines solution at `config.t_end`: sixth-order conservative
/// fluxes for transport and drift, a periodic spectral multiplier for
/// `(-Delta_v)^s`, classical RK4 at a CFL-limited internal step.
pub fn reference_pde_solve(config: &SchemeConfig, f0: &DensityGrid, psi: &dyn Potential) -> Result<DensityGrid> {
    config.validate()?;
    let g = config.geometry()?;
    g.check_same(&f0.geom)?;
    let nv = g.nv;
    let dxi = std::f64::consts::PI / g.lv;
    let symbol: Vec<f64> = (0..nv)
        .map(|m| {
            let k = if m <= nv / 2 { m } else { nv - m } as f64;
            (k * dxi).powf(2.0 * config.s)
        })
        .collect();
    let sys = MolSystem {
        g,
        psi,
        transport_x: g.nx > 1 && config.mode != Mode::Homogeneous,
        diffusion: config.mode != Mode::TransportOnly,
        symbol,
    };
    let stencil = 2.0 * FACE.iter().map(|c| c.abs()).sum::<f64>();
    let vmax = g.lv;
    let mut lambda = 0.0;
    if sys.transport_x {
        lambda += vmax * stencil / g.dx();
    }
    let (mut gmax, mut hmax) = (0.0f64, 0.0f64);
    for j in 0..nv {
        gmax = gmax.max(psi.grad(g.v(j)).abs());
        hmax = hmax.max(psi.hess(g.v(j)).abs());
    }
    lambda += gmax * stencil / g.dv() + hmax;
    if sys.diffusion {
        lambda += (std::f64::consts::PI / g.dv()).powf(2.0 * config.s);
    }
    let t_end = config.t_end;
    let steps = ((t_end * lambda / RK4_RADIUS).ceil() as usize).max(1);
    let dt = t_end / steps as f64;

    let n = f0.values.len();
    let mut y = f0.values.clone();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        sys.rhs(&y, &mut k[0]);
        for q in 1..4 {
            let c = if q == 3 { dt } else { 0.5 * dt };
            let (prev, rest) = k.split_at_mut(q);
            tmp.par_iter_mut()
                .zip(&y)
                .zip(&prev[q - 1])
                .for_each(|((t, a), b)| *t = a + c * b);
            sys.rhs(&tmp, &mut rest[0]);
        }
        y.par_iter_mut().enumerate().for_each(|(idx, a)| {
            *a += dt / 6.0 * (k[0][idx] + 2.0 * k[1][idx] + 2.0 * k[2][idx] + k[3][idx]);
        });
    }
    let out = DensityGrid::from_values(g, y)?;
    if !out.is_finite() {
        return Err(FkfpeError::NonFinite("reference solution".into()));
    }
    Ok(out)
}

/// Monte Carlo chain mirroring one splitting step per time step: a stable
/// velocity increment (truncated at the configured radius), then the
/// implicit velocity update and the matching position update.
pub fn sde_simulate(config: &SchemeConfig, f0: &DensityGrid, psi: &dyn Potential, m: usize) -> Result<ParticleEnsemble> {
    config.validate()?;
    if m < 10_000 {
        return invalid(format!("at least 10000 particles required, got {m}"));
    }
    let g = f0.geom;
    let (h, s, r) = (config.h, config.s, config.radius());
    implicit_velocity_map(psi, h, 0.0)?;
    let steps = config.steps();
    let diffuse = config.mode != Mode::TransportOnly;
    let spatial = g.nx > 1 && config.mode != Mode::Homogeneous;

    let mut cdf = Vec::with_capacity(f0.values.len());
    let mut acc = 0.0;
    for &val in &f0.values {
        acc += val.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(FkfpeError::EmptyMeasure);
    }
    let (dx, dv) = (g.dx(), g.dv());
    let seed = config.seed;
    let particles: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let (i, j) = (k / g.nv, k % g.nv);
            let mut x = if spatial { g.x(i) + (rng.random::<f64>() - 0.5) * dx } else { 0.0 };
            let mut v = g.v(j) + (rng.random::<f64>() - 0.5) * dv;
            for _ in 0..steps {
                let vbar = if diffuse { v + sample_stable_increment(&mut rng, s, h, r)? } else { v };
                let vn = implicit_velocity_map(psi, h, vbar)?;
                if spatial {
                    x = g.wrap_x(x + 0.5 * h * (vbar + vn));
                }
                v = vn;
            }
            Ok((x, v))
        })
        .collect::<Result<_>>()?;
    let (x, v) = particles.into_iter().unzip();
    ParticleEnsemble::new(1, x, v)
}

fn rk4_char(psi: &dyn Potential, x: f64, v: f64, t: f64, dir: f64) -> (f64, f64, f64) {
    // (x, v, ∫ psi''(v) dt) along dx/dt = dir v, dv/dt = -dir psi'(v)
    let steps = ((t.abs() / 1e-3).ceil() as usize).max(1);
    let dt = t.abs() / steps as f64;
    let rhs = |v: f64| (dir * v, -dir * psi.grad(v), psi.hess(v));
    let (mut x, mut v, mut a) = (x, v, 0.0);
    for _ in 0..steps {
        let k1 = rhs(v);
        let k2 = rhs(v + 0.5 * dt * k1.1);
        let k3 = rhs(v + 0.5 * dt * k2.1);
        let k4 = rhs(v + dt * k3.1);
        x += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        a += dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
    }
    (x, v, a)
}

/// Flows every particle along `x' = v`, `v' = -psi'(v)` for time `t` (RK4).
/// Positions are not wrapped.
pub fn characteristics_transport(ens: &ParticleEnsemble, psi: &dyn Potential, t: f64) -> Result<ParticleEnsemble> {
    if ens.dim != 1 {
        return invalid("characteristic flow is implemented for one dimension");
    }
    let moved: Vec<(f64, f64)> = ens
        .x
        .par_iter()
        .zip(&ens.v)
        .map(|(&x, &v)| {
            let (x, v, _) = rk4_char(psi, x, v, t, 1.0);
            (x, v)
        })
        .collect();
    let (x, v) = moved.into_iter().unzip();
    ParticleEnsemble::new(1, x, v)
}

/// Density transported by the characteristic flow: `f(t, z) = f0(z0) J`,
/// with `z0` the backward foot and `J = exp ∫ psi''(v(tau)) dtau`.
pub fn characteristics_density(f0: &(dyn Fn(f64, f64) -> f64 + Sync), psi: &dyn Potential, t: f64, g: Geometry) -> DensityGrid {
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / g.nv, k % g.nv);
            let (x0, v0, a) = rk4_char(psi, g.x(i), g.v(j), t, -1.0);
            f0(x0, v0) * a.exp()
        })
        .collect();
    DensityGrid { geom: g, values }
}

/// Closed-form flow for `psi = k v^2 / 2`.
pub fn quadratic_flow(k: f64, x0: f64, v0: f64, t: f64) -> (f64, f64) {
    if k == 0.0 {
        return (x0 + t * v0, v0);
    }
    let e = (-k * t).exp();
    (x0 + v0 * (1.0 - e) / k, v0 * e)
}

/// Analytic unit-mass density of a Gaussian initial bump, periodic in `x`
/// (constant in `x` when the grid is homogeneous).
pub fn initial_bump_density(b: InitialBump, g: Geometry) -> impl Fn(f64, f64) -> f64 + Sync {
    let period = 2.0 * g.lx;
    let homogeneous = g.nx == 1;
    move |x, v| {
        let gv = (-0.5 * (v - b.v0).powi(2) / (b.sv * b.sv)).exp() / (b.sv * (2.0 * std::f64::consts::PI).sqrt());
        if homogeneous {
            return gv / period;
        }
        let gx: f64 = (-6..=6)
            .map(|k| {
                let d = g.wrap_x(x) - b.x0 + k as f64 * period;
                (-0.5 * d * d / (b.sx * b.sx)).exp()
            })
            .sum::<f64>()
            / (b.sx * (2.0 * std::f64::consts::PI).sqrt());
        gx * gv
    }
}

/// Stationary velocity law of the homogeneous equation with `psi = v^2/2`,
/// tabulated on the v-nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryLaw {
    pub s: f64,
    pub geom: Geometry,
    pub density: Vec<f64>,
}

impl StationaryLaw {
    /// L¹ distance to a velocity density on the same nodes.
    pub fn l1_distance(&self, other: &[f64]) -> Result<f64> {
        if other.len() != self.density.len() {
            return Err(FkfpeError::GridMismatch("velocity grids differ".into()));
        }
        Ok(self.density.iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.geom.dv())
    }
}

/// The law with characteristic function `exp(-|xi|^{2s} / 2s)`, i.e. the
/// fractional heat kernel at time `1 / 2s`, clipped and normalised on the grid.
pub fn stationary_stable(s: f64, g: &Geometry) -> Result<StationaryLaw> {
    let k = build_kernel(s, 1.0 / (2.0 * s), g)?;
    let nv = g.nv;
    let mut density: Vec<f64> = (0..nv).map(|j| k.samples[j + nv / 2 - 1].max(0.0)).collect();
    let mass: f64 = density.iter().sum::<f64>() * g.dv();
    density.iter_mut().for_each(|d| *d /= mass);
    Ok(StationaryLaw { s, geom: *g, density })
}
