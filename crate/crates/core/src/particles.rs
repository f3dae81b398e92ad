//! Equally weighted particle ensembles in `R^d x R^d`, `d <= 3`.

use std::io::Write;

use rand::Rng;

use crate::error::{invalid, FkfpeError, Result};
use crate::grid::{DensityGrid, Geometry};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    /// Positions, `dim` consecutive coordinates per particle.
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return invalid(format!("particle dimension {dim} not in 1..=3"));
        }
        if x.len() != v.len() || !x.len().is_multiple_of(dim) {
            return invalid("position and velocity arrays do not match");
        }
        if x.is_empty() {
            return Err(FkfpeError::EmptyMeasure);
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(FkfpeError::NonFinite("particle coordinates".into()));
        }
        Ok(Self { dim, x, v })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Component `k` of every velocity.
    pub fn v_component(&self, k: usize) -> Vec<f64> {
        self.v.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn x_component(&self, k: usize) -> Vec<f64> {
        self.x.iter().skip(k).step_by(self.dim).copied().collect()
    }

    /// Draws `m` one-dimensional particles from a grid density: a cell is
    /// chosen by mass, then the point is uniform within the cell.
    pub fn sample_from_grid<R: Rng + ?Sized>(f: &DensityGrid, m: usize, rng: &mut R) -> Result<Self> {
        let g = f.geom;
        let mut cdf = Vec::with_capacity(f.values.len());
        let mut acc = 0.0;
        for &val in &f.values {
            acc += val.max(0.0);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(FkfpeError::EmptyMeasure);
        }
        let (dx, dv) = (g.dx(), g.dv());
        let mut x = Vec::with_capacity(m);
        let mut v = Vec::with_capacity(m);
        for _ in 0..m {
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let (i, j) = (k / g.nv, k % g.nv);
            let xi = if g.nx == 1 { g.x(0) } else { g.wrap_x(g.x(i) + (rng.random::<f64>() - 0.5) * dx) };
            x.push(xi);
            v.push(g.v(j) + (rng.random::<f64>() - 0.5) * dv);
        }
        Self::new(1, x, v)
    }

    /// Velocity histogram (first component) as a density on the v-nodes of `g`;
    /// particles outside the grid are dropped.
    pub fn v_histogram(&self, g: &Geometry) -> Vec<f64> {
        let dv = g.dv();
        let mut h = vec![0.0; g.nv];
        for v in self.v_component(0) {
            let j = ((v + g.lv) / dv + 0.5).floor();
            if j >= 0.0 && (j as usize) < g.nv {
                h[j as usize] += 1.0;
            }
        }
        let scale = 1.0 / (self.len() as f64 * dv);
        h.iter_mut().for_each(|c| *c *= scale);
        h
    }

    pub fn write_csv(&self, mut w: impl Write, header: &str) -> Result<()> {
        write!(w, "{header}")?;
        let d = self.dim;
        let cols: Vec<String> = (0..d)
            .map(|k| format!("x{k}"))
            .chain((0..d).map(|k| format!("v{k}")))
            .collect();
        writeln!(w, "{}", if d == 1 { "x,v".to_string() } else { cols.join(",") })?;
        for p in 0..self.len() {
            let row: Vec<String> = self.x[p * d..(p + 1) * d]
                .iter()
                .chain(&self.v[p * d..(p + 1) * d])
                .map(|c| format!("{c:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and a
/// piecewise-constant density on the v-nodes of `g` (cells centred on nodes).
pub fn ks_against_grid(samples: &[f64], density: &[f64], g: &Geometry) -> f64 {
    let dv = g.dv();
    let total: f64 = density.iter().sum::<f64>() * dv;
    let mut edges = Vec::with_capacity(g.nv + 1);
    let mut acc = 0.0;
    edges.push(0.0);
    for d in density {
        acc += d * dv / total;
        edges.push(acc);
    }
    let cdf = |v: f64| {
        let pos = (v + g.lv) / dv + 0.5;
        if pos <= 0.0 {
            return 0.0;
        }
        let k = pos.floor() as usize;
        if k >= g.nv {
            return 1.0;
        }
        edges[k] + (pos - k as f64) * (edges[k + 1] - edges[k])
    };
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_checks() {
        assert!(ParticleEnsemble::new(4, vec![0.0; 4], vec![0.0; 4]).is_err());
        assert!(ParticleEnsemble::new(2, vec![0.0; 3], vec![0.0; 3]).is_err());
        assert!(ParticleEnsemble::new(1, vec![f64::NAN], vec![0.0]).is_err());
        let e = ParticleEnsemble::new(3, vec![0.0; 12], vec![1.0; 12]).unwrap();
        assert_eq!(e.len(), 4);
        assert!((e.weight() * e.len() as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_sampling_round_trips_through_histogram() {
        let g = Geometry::new(16, 64, 2.0, 6.0).unwrap();
        let f = DensityGrid::gaussian(g, 0.0, 0.5, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = ParticleEnsemble::sample_from_grid(&f, 200_000, &mut rng).unwrap();
        let ks = ks_against_grid(&e.v_component(0), &f.v_marginal(), &g);
        assert!(ks < 0.006, "{ks}");
        let hist = e.v_histogram(&g);
        let l1: f64 = hist.iter().zip(f.v_marginal()).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.dv();
        assert!(l1 < 0.03, "{l1}");
    }

    #[test]
    fn csv_layout() {
        let e = ParticleEnsemble::new(1, vec![0.5, 1.5], vec![-1.0, 2.0]).unwrap();
        let mut out = Vec::new();
        e.write_csv(&mut out, "# test\n").unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s.lines().count(), 4);
        assert_eq!(s.lines().nth(1), Some("x,v"));
    }
}
