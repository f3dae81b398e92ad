//! Uniform phase-space grid and the scalar functionals evaluated on it.
//!
//! Nodes sit at `x_i = -L_x + i dx` and `v_j = -L_v + j dv`; each node is the
//! centre of a midpoint-rule cell. `x` is periodic on `[-L_x, L_x)`, `v` is
//! truncated to `[-L_v, L_v)` with zero padding outside. Values are stored
//! row-major with `v` fastest, so a velocity slice at fixed `x` is contiguous.

use crate::error::{invalid, FkfpeError, Result};
use crate::potential::Potential;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub nx: usize,
    pub nv: usize,
    pub lx: f64,
    pub lv: f64,
}

impl Geometry {
    pub fn new(nx: usize, nv: usize, lx: f64, lv: f64) -> Result<Self> {
        if !nx.is_power_of_two() || !nv.is_power_of_two() {
            return invalid(format!("N_x={nx}, N_v={nv} must be powers of two"));
        }
        if nv < 4 {
            return invalid("N_v must be at least 4");
        }
        if !(lx > 0.0 && lx.is_finite() && lv > 0.0 && lv.is_finite()) {
            return invalid(format!("extents L_x={lx}, L_v={lv} must be positive"));
        }
        Ok(Self { nx, nv, lx, lv })
    }

    /// Single x-cell geometry used by the spatially homogeneous mode.
    pub fn homogeneous(nv: usize, lv: f64) -> Result<Self> {
        Self::new(1, nv, 0.5, lv)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.lv / self.nv as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dv()
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.lx + i as f64 * self.dx()
    }

    pub fn v(&self, j: usize) -> f64 {
        -self.lv + j as f64 * self.dv()
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    /// Wraps `x` into the periodic window `[-L_x, L_x)`.
    pub fn wrap_x(&self, x: f64) -> f64 {
        let p = 2.0 * self.lx;
        let y = (x + self.lx).rem_euclid(p);
        // rem_euclid can return p itself for tiny negative inputs
        if y >= p {
            -self.lx
        } else {
            y - self.lx
        }
    }

    pub fn velocities(&self) -> Vec<f64> {
        (0..self.nv).map(|j| self.v(j)).collect()
    }

    pub fn check_same(&self, other: &Geometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FkfpeError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub geom: Geometry,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn zeros(geom: Geometry) -> Self {
        Self {
            geom,
            values: vec![0.0; geom.len()],
        }
    }

    pub fn from_values(geom: Geometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geom.len() {
            return Err(FkfpeError::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                geom.nx,
                geom.nv
            )));
        }
        Ok(Self { geom, values })
    }

    /// Samples `f(x, v)` at every node.
    pub fn from_fn(geom: Geometry, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(geom.len());
        for i in 0..geom.nx {
            let x = geom.x(i);
            for j in 0..geom.nv {
                values.push(f(x, geom.v(j)));
            }
        }
        Self { geom, values }
    }

    /// Product density `a(x) b(v)` normalised to unit mass.
    pub fn separable(geom: Geometry, a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64) -> Result<Self> {
        let mut f = Self::from_fn(geom, |x, v| a(x) * b(v));
        f.normalize()?;
        Ok(f)
    }

    /// Gaussian bump with x-width `sx` (periodically wrapped) and v-width `sv`.
    pub fn gaussian(geom: Geometry, x0: f64, v0: f64, sx: f64, sv: f64) -> Result<Self> {
        let period = 2.0 * geom.lx;
        Self::separable(
            geom,
            |x| {
                if geom.nx == 1 {
                    return 1.0;
                }
                (-3..=3)
                    .map(|k| {
                        let d = x - x0 + k as f64 * period;
                        (-0.5 * d * d / (sx * sx)).exp()
                    })
                    .sum()
            },
            |v| (-0.5 * (v - v0).powi(2) / (sv * sv)).exp(),
        )
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let nv = self.geom.nv;
        &self.values[i * nv..(i + 1) * nv]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.geom.index(i, j)]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geom.cell_volume()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(FkfpeError::EmptyMeasure);
        }
        let inv = 1.0 / m;
        self.values.iter_mut().for_each(|x| *x *= inv);
        Ok(())
    }

    /// `∫ |f|^p` by the midpoint rule.
    pub fn lp_norm_p(&self, p: f64) -> Result<f64> {
        if !(p > 1.0) {
            return invalid(format!("L^p exponent must exceed 1, got {p}"));
        }
        Ok(self.values.iter().map(|x| x.abs().powf(p)).sum::<f64>() * self.geom.cell_volume())
    }

    pub fn second_moment_v(&self) -> f64 {
        self.weighted_v(|v| v * v)
    }

    pub fn potential_energy(&self, psi: &dyn Potential) -> f64 {
        self.weighted_v(|v| psi.value(v))
    }

    /// `∫ w(v) f dx dv`.
    pub fn weighted_v(&self, w: impl Fn(f64) -> f64) -> f64 {
        let wv: Vec<f64> = (0..self.geom.nv).map(|j| w(self.geom.v(j))).collect();
        let mut acc = 0.0;
        for i in 0..self.geom.nx {
            acc += self.slice(i).iter().zip(&wv).map(|(f, w)| f * w).sum::<f64>();
        }
        acc * self.geom.cell_volume()
    }

    /// Velocity marginal `∫ f dx` on the v-nodes.
    pub fn v_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.geom.nv];
        for i in 0..self.geom.nx {
            for (acc, f) in m.iter_mut().zip(self.slice(i)) {
                *acc += f;
            }
        }
        let dx = self.geom.dx();
        m.iter_mut().for_each(|x| *x *= dx);
        m
    }

    /// Position marginal `∫ f dv` on the x-nodes.
    pub fn x_marginal(&self) -> Vec<f64> {
        let dv = self.geom.dv();
        (0..self.geom.nx)
            .map(|i| self.slice(i).iter().sum::<f64>() * dv)
            .collect()
    }

    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        self.geom.check_same(&other.geom)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.geom.cell_volume())
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    /// Cell centres and masses of the nonzero cells.
    pub fn atoms(&self) -> Vec<(f64, f64, f64)> {
        let cv = self.geom.cell_volume();
        let mut out = Vec::new();
        for i in 0..self.geom.nx {
            for j in 0..self.geom.nv {
                let w = self.get(i, j) * cv;
                if w > 0.0 {
                    out.push((self.geom.x(i), self.geom.v(j), w));
                }
            }
        }
        out
    }
}

/// Midpoint-rule integral of `a(v) b(v)` on the v-nodes.
pub fn dot_v(geom: &Geometry, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * geom.dv()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Quadratic, Zero};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn geom() -> Geometry {
        Geometry::new(32, 64, 4.0, 8.0).unwrap()
    }

    #[test]
    fn uniform_density_has_unit_mass() {
        let g = geom();
        let f = DensityGrid::from_fn(g, |_, _| 1.0 / (4.0 * g.lx * g.lv));
        assert_abs_diff_eq!(f.mass(), 1.0, epsilon = 1e-14);
        assert_eq!(DensityGrid::zeros(g).mass(), 0.0);
    }

    #[test]
    fn gaussian_mass_from_raw_samples() {
        let g = Geometry::new(64, 128, 8.0, 8.0).unwrap();
        let f = DensityGrid::from_fn(g, |x, v| {
            (-(x * x + v * v) / 2.0).exp() / (2.0 * PI)
        });
        assert_abs_diff_eq!(f.mass(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn lp_examples() {
        let g = Geometry::new(4, 4, 1.0, 1.0).unwrap();
        // cell volume 0.25: one unit phase-volume block has 4 cells
        let mut f = DensityGrid::zeros(g);
        for j in 0..4 {
            f.values[j] = 1.0;
        }
        assert_abs_diff_eq!(f.lp_norm_p(2.0).unwrap(), 1.0, epsilon = 1e-15);
        let mut f2 = f.clone();
        f2.values.iter_mut().for_each(|x| *x *= 2.0);
        assert_abs_diff_eq!(f2.lp_norm_p(2.0).unwrap(), 4.0, epsilon = 1e-14);
        assert!(f.lp_norm_p(1.0).is_err());
    }

    #[test]
    fn lp_of_standard_gaussian_times_uniform() {
        // x uniform on a unit-length window: L_x = 1/2
        let g = Geometry::new(8, 256, 0.5, 10.0).unwrap();
        let f = DensityGrid::from_fn(g, |_, v| (-v * v / 2.0).exp() / (2.0 * PI).sqrt());
        assert_abs_diff_eq!(f.lp_norm_p(2.0).unwrap(), 1.0 / (2.0 * PI.sqrt()), epsilon = 1e-3);
    }

    #[test]
    fn moments_and_energy() {
        let g = Geometry::new(4, 64, 1.0, 4.0).unwrap();
        let dv = g.dv();
        let j0 = g.nv / 2;
        let mut point = DensityGrid::zeros(g);
        for i in 0..g.nx {
            point.values[g.index(i, j0)] = 1.0;
        }
        point.normalize().unwrap();
        assert_eq!(point.second_moment_v(), 0.0);

        let j2 = j0 + (2.0 / dv) as usize;
        let mut at2 = DensityGrid::zeros(g);
        at2.values[g.index(0, j2)] = 1.0;
        at2.normalize().unwrap();
        assert_abs_diff_eq!(at2.potential_energy(&Quadratic::new(1.0)), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(at2.second_moment_v(), 4.0, epsilon = 1e-14);
        let j1 = j0 + (1.0 / dv) as usize;
        let mut at1 = DensityGrid::zeros(g);
        at1.values[g.index(0, j1)] = 1.0;
        at1.normalize().unwrap();
        assert_abs_diff_eq!(at2.second_moment_v(), 4.0 * at1.second_moment_v(), epsilon = 1e-13);
        assert_eq!(at1.potential_energy(&Zero), 0.0);
    }

    #[test]
    fn gaussian_moments() {
        let g = Geometry::new(8, 256, 2.0, 12.0).unwrap();
        for &sv in &[0.5, 1.0, 1.5] {
            let f = DensityGrid::gaussian(g, 0.0, 0.0, 0.5, sv).unwrap();
            assert_abs_diff_eq!(f.mass(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.second_moment_v(), sv * sv, epsilon = 1e-6);
        }
        let f = DensityGrid::gaussian(g, 0.0, 0.0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(f.potential_energy(&Quadratic::new(1.0)), 0.5, epsilon = 1e-3);
    }

    #[test]
    fn wrap_and_marginals() {
        let g = geom();
        assert_abs_diff_eq!(g.wrap_x(4.5), -3.5, epsilon = 1e-14);
        assert_abs_diff_eq!(g.wrap_x(-4.0), -4.0, epsilon = 1e-14);
        assert!(g.wrap_x(-1e-300 - 4.0) < 4.0);
        let f = DensityGrid::gaussian(g, 1.0, 0.5, 0.7, 0.9).unwrap();
        let dv = g.dv();
        let dx = g.dx();
        assert_abs_diff_eq!(f.v_marginal().iter().sum::<f64>() * dv, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.x_marginal().iter().sum::<f64>() * dx, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Geometry::new(3, 64, 1.0, 1.0).is_err());
        assert!(Geometry::new(4, 64, 0.0, 1.0).is_err());
        let g = geom();
        assert!(DensityGrid::from_values(g, vec![0.0; 3]).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::potential::Quadratic;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn functionals_are_homogeneous(vals in proptest::collection::vec(0.0f64..3.0, 64), c in 0.1f64..5.0, p in 1.1f64..4.0) {
            let g = Geometry::new(4, 16, 1.0, 2.0).unwrap();
            let f = DensityGrid::from_values(g, vals).unwrap();
            let mut cf = f.clone();
            cf.values.iter_mut().for_each(|x| *x *= c);
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
            prop_assert!(rel(cf.mass(), c * f.mass()));
            prop_assert!(rel(cf.second_moment_v(), c * f.second_moment_v()));
            let q = Quadratic::new(1.0);
            prop_assert!(rel(cf.potential_energy(&q), c * f.potential_energy(&q)));
            prop_assert!(rel(cf.lp_norm_p(p).unwrap(), c.powf(p) * f.lp_norm_p(p).unwrap()));
        }
    }
}
