//! Fractional heat kernel tables and the velocity-diffusion phase.
//!
//! Fourier convention: `F f(xi) = ∫ f e^{-i v xi} dv`, inverse with `1/(2 pi)`,
//! so `Phi_s(., t) = F^{-1}[exp(-t |xi|^{2s})]` has unit mass.
//!
//! Point samples are exact values of the kernel periodised over `4 L_v`: the
//! spectrum is folded onto a grid four times finer than the v-grid (every alias
//! summed until it underflows) before one inverse FFT, then restricted.
//!
//! The diffusion operator itself works with the band-limited discrete kernel
//! whose transform equals `exp(-t |xi|^{2s})` at every grid frequency. It stays
//! accurate when the kernel is narrower than a cell (small `h`, `s < 1`), where
//! point samples cannot represent the peak.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, FkfpeError, Result};
use crate::grid::{DensityGrid, Geometry};
use crate::potential::Potential;

/// Cap on the number of spectral aliases summed per kernel build.
const MAX_ALIAS_TERMS: usize = 1 << 26;

#[derive(Debug, Clone)]
pub struct KernelTable {
    pub s: f64,
    pub t: f64,
    pub nv: usize,
    pub lv: f64,
    /// Values at offsets `k dv`, `k = -(nv-1)..=(nv-1)`, index `k + nv - 1`.
    pub samples: Vec<f64>,
    /// `None` for the untruncated kernel.
    pub radius: Option<f64>,
    /// Discrete L¹ of the periodised point samples over one period, before truncation.
    pub l1: f64,
    /// Share of the kernel's mass inside the truncation ball (trapezoidal).
    pub mass_fraction: f64,
    pub renormalized: bool,
    fine: Vec<f64>,
}

impl KernelTable {
    pub fn dv(&self) -> f64 {
        2.0 * self.lv / self.nv as f64
    }

    /// Delta table (the `t -> 0` limit).
    pub fn identity(geom: &Geometry) -> Self {
        let nv = geom.nv;
        let mut samples = vec![0.0; 2 * nv - 1];
        samples[nv - 1] = 1.0 / geom.dv();
        let mut fine = vec![0.0; 8 * nv];
        fine[0] = 4.0 / geom.dv();
        Self {
            s: 1.0,
            t: 0.0,
            nv,
            lv: geom.lv,
            samples,
            radius: None,
            l1: 1.0,
            mass_fraction: 1.0,
            renormalized: true,
            fine,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.t == 0.0
    }

    pub fn offset(&self, k: isize) -> f64 {
        k as f64 * self.dv()
    }

    /// `(offset, value)` pairs for export.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        let n = self.nv as isize;
        (-(n - 1)..n)
            .map(|k| (self.offset(k), self.samples[(k + n - 1) as usize]))
            .collect()
    }

    /// Periodised kernel at the fine nodes `k dv / 4`, `k = 0..8 nv` (wrap-around order).
    pub fn fine_samples(&self) -> &[f64] {
        &self.fine
    }

    pub fn discrete_mass(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.dv()
    }

    pub fn second_moment(&self) -> f64 {
        self.pairs().iter().map(|(w, k)| w * w * k).sum::<f64>() * self.dv()
    }

    pub fn renorm_factor(&self) -> f64 {
        1.0 / self.mass_fraction
    }

    /// Truncated second-moment ratio of the kernel the diffusion operator applies.
    pub fn moment_ratio(&self) -> Result<f64> {
        let k = operator_kernel(self)?;
        let dv = self.dv();
        let np = k.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for (idx, &w) in k.iter().enumerate() {
            let off = signed(idx, np) as f64 * dv;
            num += off * off * w;
            den += w;
        }
        if den <= 0.0 {
            return Err(FkfpeError::InvalidParameter("empty truncation ball".into()));
        }
        Ok(num / den)
    }
}

fn signed(idx: usize, n: usize) -> isize {
    if idx <= n / 2 {
        idx as isize
    } else {
        idx as isize - n as isize
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return invalid(format!("s = {s} must lie in (0, 1]"));
    }
    Ok(())
}

/// Samples `Phi_s(., t)` on the v-grid of `geom`.
pub fn build_kernel(s: f64, t: f64, geom: &Geometry) -> Result<KernelTable> {
    check_s(s)?;
    if !(t > 0.0 && t.is_finite()) {
        return invalid(format!("kernel time t = {t} must be positive"));
    }
    let nv = geom.nv;
    let dv = geom.dv();
    let m = 8 * nv;
    let period = 2.0 * nv as f64 * dv;
    let dxi = 2.0 * PI / period;

    // fold every alias j = b + n m onto bucket b
    let mut spectrum = vec![0.0f64; m];
    spectrum[0] = 1.0;
    let mut j = 1usize;
    while j < MAX_ALIAS_TERMS {
        let term = (-t * (j as f64 * dxi).powf(2.0 * s)).exp();
        if term < 1e-18 {
            break;
        }
        spectrum[j % m] += term;
        spectrum[(m - j % m) % m] += term;
        j += 1;
    }

    let mut buf: Vec<Complex<f64>> = spectrum.iter().map(|&c| Complex::new(c, 0.0)).collect();
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let mut fine: Vec<f64> = buf.iter().map(|c| c.re / period).collect();
    for k in 1..m / 2 {
        let avg = 0.5 * (fine[k] + fine[m - k]);
        fine[k] = avg;
        fine[m - k] = avg;
    }
    fine.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });

    Ok(KernelTable::from_fine(s, t, geom, fine))
}

impl KernelTable {
    /// Rebuilds a table from periodised fine samples (spacing `dv / 4`, `8 N_v` values).
    pub(crate) fn from_fine(s: f64, t: f64, geom: &Geometry, fine: Vec<f64>) -> Self {
        let nv = geom.nv;
        let m = fine.len();
        let samples: Vec<f64> = (-(nv as isize - 1)..nv as isize)
            .map(|k| fine[(4 * k).rem_euclid(m as isize) as usize])
            .collect();
        let l1 = (0..2 * nv).map(|k| fine[4 * k]).sum::<f64>() * geom.dv();
        KernelTable {
            s,
            t,
            nv,
            lv: geom.lv,
            samples,
            radius: None,
            l1,
            mass_fraction: 1.0,
            renormalized: false,
            fine,
        }
    }
}

fn ball_weight(offset: f64, r: f64, dv: f64) -> f64 {
    let a = offset.abs();
    if (a - r).abs() <= 1e-9 * dv {
        0.5
    } else if a < r {
        1.0
    } else {
        0.0
    }
}

/// Restricts the kernel to `|w| <= r` and rescales to unit discrete mass.
/// `None` only renormalises.
pub fn truncate_renormalize(k: &KernelTable, r: Option<f64>) -> Result<KernelTable> {
    let dv = k.dv();
    if let Some(r) = r {
        if !(r >= dv) {
            return invalid(format!("truncation radius {r} is smaller than one cell ({dv})"));
        }
    }
    if k.is_identity() {
        return Ok(KernelTable { radius: r, ..k.clone() });
    }
    let nv = k.nv as isize;
    let mut out = k.clone();
    out.radius = r;
    if let Some(r) = r {
        // trapezoidal share of one full period of point samples
        let m = k.fine.len();
        let full: f64 = (0..2 * k.nv).map(|j| k.fine[4 * j]).sum();
        let inside: f64 = (0..2 * k.nv)
            .map(|j| {
                let off = signed(4 * j, m) as f64 * dv / 4.0;
                ball_weight(off, r, dv) * k.fine[4 * j]
            })
            .sum();
        out.mass_fraction = inside / full;
        for kk in -(nv - 1)..nv {
            if k.offset(kk).abs() > r + 1e-9 * dv {
                out.samples[(kk + nv - 1) as usize] = 0.0;
            }
        }
    }
    let mass = out.discrete_mass();
    if !(mass > 0.0) {
        return Err(FkfpeError::EmptyMeasure);
    }
    out.samples.iter_mut().for_each(|x| *x /= mass);
    out.renormalized = true;
    Ok(out)
}

/// Band-limited discrete kernel on the padded period `4 L_v`, in FFT order,
/// truncated and renormalised to unit sum.
fn operator_kernel(k: &KernelTable) -> Result<Vec<f64>> {
    let np = 2 * k.nv;
    if k.is_identity() {
        let mut d = vec![0.0; np];
        d[0] = 1.0;
        return Ok(d);
    }
    let dv = k.dv();
    let dxi = 2.0 * PI / (np as f64 * dv);
    let mut buf: Vec<Complex<f64>> = (0..np)
        .map(|m| {
            let xi = signed(m, np).unsigned_abs() as f64 * dxi;
            Complex::new((-k.t * xi.powf(2.0 * k.s)).exp(), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_inverse(np).process(&mut buf);
    let mut ker: Vec<f64> = buf.iter().map(|c| c.re / np as f64).collect();
    for j in 1..np / 2 {
        let avg = 0.5 * (ker[j] + ker[np - j]);
        ker[j] = avg;
        ker[np - j] = avg;
    }
    if let Some(r) = k.radius {
        for (j, w) in ker.iter_mut().enumerate() {
            *w *= ball_weight(signed(j, np) as f64 * dv, r, dv);
        }
    }
    let total: f64 = ker.iter().sum();
    if !(total > 0.0) {
        return Err(FkfpeError::InvalidParameter("empty truncation ball".into()));
    }
    ker.iter_mut().for_each(|w| *w /= total);
    Ok(ker)
}

/// Velocity convolution with a renormalised kernel, applied per x-slice.
///
/// Mass that would leave `[-L_v, L_v)` is folded back by dividing each source
/// column by the share of its kernel that lands inside the domain, so the
/// step conserves mass exactly.
pub struct DiffusionOperator {
    nv: usize,
    lv: f64,
    identity: bool,
    multiplier: Vec<f64>,
    inv_share: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl DiffusionOperator {
    pub fn new(k: &KernelTable, geom: &Geometry) -> Result<Self> {
        if k.nv != geom.nv || (k.lv - geom.lv).abs() > 1e-12 * geom.lv {
            return Err(FkfpeError::GridMismatch(format!(
                "kernel built for N_v={}, L_v={} applied to N_v={}, L_v={}",
                k.nv, k.lv, geom.nv, geom.lv
            )));
        }
        if !k.renormalized {
            return invalid("diffusion needs a renormalised kernel table");
        }
        let nv = geom.nv;
        let np = 2 * nv;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(np);
        let inv = planner.plan_fft_inverse(np);
        let mut op = Self {
            nv,
            lv: geom.lv,
            identity: k.is_identity(),
            multiplier: vec![1.0; np],
            inv_share: vec![1.0; nv],
            fwd,
            inv,
        };
        if op.identity {
            return Ok(op);
        }
        let ker = operator_kernel(k)?;
        let mut buf: Vec<Complex<f64>> = ker.iter().map(|&w| Complex::new(w, 0.0)).collect();
        op.fwd.process(&mut buf);
        op.multiplier = buf.iter().map(|c| c.re).collect();

        let mut scratch = vec![Complex::new(0.0, 0.0); np];
        let ones = vec![1.0; nv];
        let mut share = vec![0.0; nv];
        op.convolve(&ones, &mut share, &mut scratch);
        for (inv_z, z) in op.inv_share.iter_mut().zip(&share) {
            if !(*z > 1e-300) {
                return invalid("kernel share inside the velocity domain vanished");
            }
            *inv_z = 1.0 / z;
        }
        Ok(op)
    }

    /// Real transform of the discrete kernel on the padded grid (FFT order).
    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    fn convolve(&self, input: &[f64], out: &mut [f64], buf: &mut [Complex<f64>]) {
        let np = 2 * self.nv;
        for (b, x) in buf.iter_mut().zip(input.iter().chain(std::iter::repeat(&0.0))) {
            *b = Complex::new(*x, 0.0);
        }
        self.fwd.process(buf);
        for (b, m) in buf.iter_mut().zip(&self.multiplier) {
            *b *= *m;
        }
        self.inv.process(buf);
        let scale = 1.0 / np as f64;
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o = b.re * scale;
        }
    }

    pub fn apply(&self, f: &DensityGrid) -> Result<DensityGrid> {
        if f.geom.nv != self.nv || (f.geom.lv - self.lv).abs() > 1e-12 * self.lv {
            return Err(FkfpeError::GridMismatch("density and kernel grids differ".into()));
        }
        if self.identity {
            return Ok(f.clone());
        }
        let nv = self.nv;
        let mut out = DensityGrid::zeros(f.geom);
        out.values
            .par_chunks_mut(nv)
            .zip(f.values.par_chunks(nv))
            .for_each_init(
                || (vec![Complex::new(0.0, 0.0); 2 * nv], vec![0.0; nv]),
                |(buf, g), (dst, src)| {
                    for ((gi, s), z) in g.iter_mut().zip(src).zip(&self.inv_share) {
                        *gi = s * z;
                    }
                    self.convolve(g, dst, buf);
                    let before: f64 = src.iter().sum();
                    let mut after = 0.0;
                    for d in dst.iter_mut() {
                        if *d < 0.0 {
                            *d = 0.0;
                        }
                        after += *d;
                    }
                    if after > 0.0 {
                        let k = before / after;
                        dst.iter_mut().for_each(|d| *d *= k);
                    }
                },
            );
        Ok(out)
    }
}

/// One diffusion phase `f -> Phi^h_{s,R} *_v f`.
pub fn diffusion_step(f: &DensityGrid, k: &KernelTable) -> Result<DensityGrid> {
    DiffusionOperator::new(k, &f.geom)?.apply(f)
}

/// Truncated moment ratio `∫_{B_R} |w|^2 Phi / ∫_{B_R} Phi` on the v-grid of `geom`.
pub fn moment_ratio(s: f64, h: f64, r: Option<f64>, geom: &Geometry) -> Result<f64> {
    let k = truncate_renormalize(&build_kernel(s, h, geom)?, r)?;
    k.moment_ratio()
}

/// Returns `(∫ psi fbar, ∫ psi f + sup|psi''| moment_ratio / 2)` for `fbar` the
/// diffused density.
pub fn potential_inflation_check(
    f: &DensityGrid,
    psi: &dyn Potential,
    s: f64,
    h: f64,
    r: Option<f64>,
) -> Result<(f64, f64)> {
    let k = truncate_renormalize(&build_kernel(s, h, &f.geom)?, r)?;
    let fbar = diffusion_step(f, &k)?;
    let lhs = fbar.potential_energy(psi);
    let rhs = f.potential_energy(psi) + 0.5 * psi.hessian_sup() * k.moment_ratio()?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Quadratic, Zero};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vgrid(nv: usize, lv: f64) -> Geometry {
        Geometry::new(1, nv, 1.0, lv).unwrap()
    }

    #[test]
    fn gaussian_closed_form() {
        let g = vgrid(256, 8.0);
        for &h in &[0.01, 0.1, 1.0] {
            let k = build_kernel(1.0, h, &g).unwrap();
            let err = k
                .pairs()
                .iter()
                .map(|&(w, val)| (val - (-w * w / (4.0 * h)).exp() / (4.0 * PI * h).sqrt()).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "h={h}: {err}");
        }
    }

    #[test]
    fn cauchy_closed_form() {
        let g = vgrid(1024, 32.0);
        for &h in &[0.05, 0.5] {
            let k = build_kernel(0.5, h, &g).unwrap();
            let err = k
                .pairs()
                .iter()
                .map(|&(w, val)| (val - h / (PI * (h * h + w * w))).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-4, "h={h}: {err}");
        }
    }

    #[test]
    fn symmetric_and_unit_l1() {
        let g = vgrid(256, 16.0);
        for &s in &[0.5, 0.6, 0.75, 0.9, 1.0] {
            let k = build_kernel(s, 1.0, &g).unwrap();
            assert!((k.l1 - 1.0).abs() < 1e-3, "s={s}: {}", k.l1);
            let n = k.samples.len();
            for i in 0..n {
                assert_eq!(k.samples[i].to_bits(), k.samples[n - 1 - i].to_bits());
            }
            assert!(k.samples.iter().all(|&x| x >= 0.0));
        }
        assert!(build_kernel(0.5, 0.0, &g).is_err());
        assert!(build_kernel(1.5, 1.0, &g).is_err());
    }

    #[test]
    fn truncation_examples() {
        let g = vgrid(256, 16.0);
        let k = build_kernel(0.5, 1.0, &g).unwrap();
        let t = truncate_renormalize(&k, Some(1.0)).unwrap();
        assert!((t.mass_fraction - 0.5).abs() < 5e-4, "{}", t.mass_fraction);
        assert!((t.renorm_factor() - 2.0).abs() < 1e-3);
        assert_abs_diff_eq!(t.discrete_mass(), 1.0, epsilon = 1e-12);
        assert!(t.pairs().iter().all(|&(w, v)| w.abs() <= 1.0 + 1e-12 || v == 0.0));

        let gk = build_kernel(1.0, 0.5, &g).unwrap();
        let wide = truncate_renormalize(&gk, Some(g.lv)).unwrap();
        assert!(wide.renorm_factor() <= 1.0 + 1e-3);
        let plain = truncate_renormalize(&gk, None).unwrap();
        for (a, b) in wide.samples.iter().zip(&plain.samples) {
            assert!((a - b).abs() <= 1e-3 * b.max(1e-300) + 1e-15);
        }
        assert!(truncate_renormalize(&k, Some(0.5 * g.dv())).is_err());
    }

    #[test]
    fn moment_ratio_examples() {
        let g = vgrid(64, 8.0);
        for &h in &[0.125, 0.25, 0.5] {
            let r = moment_ratio(1.0, h, Some(g.lv), &g).unwrap();
            assert!((r / (2.0 * h) - 1.0).abs() < 0.02, "h={h}: {r}");
        }
        let fine = vgrid(128, 8.0);
        let r = moment_ratio(0.5, 1.0, Some(1.0), &fine).unwrap();
        let exact = (2.0 / PI) * (1.0 - PI / 4.0) / 0.5;
        assert!((r - exact).abs() < 1e-2, "{r} vs {exact}");
        for &s in &[0.5, 0.75, 1.0] {
            let a = moment_ratio(s, 0.25, Some(2.0), &fine).unwrap();
            let b = moment_ratio(s, 0.125, Some(2.0), &fine).unwrap();
            let c = moment_ratio(s, 0.0625, Some(2.0), &fine).unwrap();
            assert!(c <= b && b <= a, "s={s}: {a} {b} {c}");
        }
    }

    fn bump(g: Geometry, sv: f64) -> DensityGrid {
        DensityGrid::gaussian(g, 0.0, 0.0, 0.5, sv).unwrap()
    }

    #[test]
    fn heat_step_adds_variance() {
        let g = Geometry::new(4, 128, 1.0, 8.0).unwrap();
        let f = bump(g, 0.3);
        let h = 0.2;
        let k = truncate_renormalize(&build_kernel(1.0, h, &g).unwrap(), None).unwrap();
        let out = diffusion_step(&f, &k).unwrap();
        assert!((out.mass() - f.mass()).abs() < 1e-12);
        assert!((out.second_moment_v() - f.second_moment_v() - 2.0 * h).abs() < 1e-6);
    }

    #[test]
    fn identity_kernel_is_exact() {
        let g = Geometry::new(4, 64, 1.0, 4.0).unwrap();
        let f = bump(g, 0.5);
        let out = diffusion_step(&f, &KernelTable::identity(&g)).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g = Geometry::new(4, 64, 1.0, 4.0).unwrap();
        let other = Geometry::new(4, 128, 1.0, 4.0).unwrap();
        let k = truncate_renormalize(&build_kernel(1.0, 0.1, &other).unwrap(), None).unwrap();
        assert!(diffusion_step(&bump(g, 0.5), &k).is_err());
        let raw = build_kernel(1.0, 0.1, &g).unwrap();
        assert!(diffusion_step(&bump(g, 0.5), &raw).is_err());
    }

    #[test]
    fn semigroup_untruncated() {
        let g = Geometry::new(2, 1024, 1.0, 128.0).unwrap();
        let f = bump(g, 0.75);
        for &s in &[0.5, 0.75, 1.0] {
            let k = |t: f64| truncate_renormalize(&build_kernel(s, t, &g).unwrap(), None).unwrap();
            let two = diffusion_step(&diffusion_step(&f, &k(0.1)).unwrap(), &k(0.15)).unwrap();
            let one = diffusion_step(&f, &k(0.25)).unwrap();
            let d = two.l1_distance(&one).unwrap();
            assert!(d < 1e-6, "s={s}: {d}");
        }
    }

    #[test]
    fn lp_contraction_and_mass() {
        let g = Geometry::new(4, 128, 1.0, 8.0).unwrap();
        let f = DensityGrid::from_fn(g, |x, v| {
            (-(v - 1.0).powi(2) / 0.2).exp() * (1.0 + 0.5 * (PI * x).cos()) + 0.5 * (-(v + 2.0).powi(2)).exp()
        });
        for &s in &[0.5, 0.75, 1.0] {
            for &r in &[None, Some(2.0)] {
                let k = truncate_renormalize(&build_kernel(s, 0.05, &g).unwrap(), r).unwrap();
                let out = diffusion_step(&f, &k).unwrap();
                assert!((out.mass() - f.mass()).abs() < 1e-10 * f.mass());
                assert!(out.min_value() >= 0.0);
                for &p in &[1.5, 2.0, 4.0] {
                    assert!(out.lp_norm_p(p).unwrap() <= f.lp_norm_p(p).unwrap() * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn heavy_tail_second_moment_grows() {
        let dv: f64 = 0.078125;
        let m: Vec<f64> = [10.0, 20.0, 40.0]
            .iter()
            .map(|&lv| {
                let nv = (2.0 * lv / dv).round() as usize;
                build_kernel(0.75, 1.0, &vgrid(nv, lv)).unwrap().second_moment()
            })
            .collect();
        assert!(m[0] < m[1] && m[1] < m[2], "{m:?}");
        assert!(m[2] - m[1] > 0.5 * (m[1] - m[0]), "{m:?}");
    }

    #[test]
    fn inflation_examples() {
        let g = Geometry::new(2, 128, 1.0, 8.0).unwrap();
        let f = bump(g, 0.7);
        let (l, r) = potential_inflation_check(&f, &Zero, 0.75, 0.25, Some(2.0)).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
        let q = Quadratic::new(1.0);
        for &s in &[0.5, 0.75, 1.0] {
            let k = truncate_renormalize(&build_kernel(s, 0.25, &g).unwrap(), Some(2.0)).unwrap();
            let (lhs, _) = potential_inflation_check(&f, &q, s, 0.25, Some(2.0)).unwrap();
            let gap = lhs - f.potential_energy(&q);
            assert!((gap - 0.5 * k.moment_ratio().unwrap()).abs() < 1e-6, "s={s}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut rf = DensityGrid::from_fn(g, |_, v| if v.abs() < 5.0 { rng.random::<f64>() } else { 0.0 });
            rf.normalize().unwrap();
            let (lhs, rhs) = potential_inflation_check(&rf, &q, 0.6, 0.1, Some(2.0)).unwrap();
            assert!(lhs <= rhs + 1e-8, "{lhs} > {rhs}");
        }
    }

    proptest::proptest! {
        #[test]
        fn diffusion_keeps_mass_and_sign(s in 0.5f64..=1.0, t in 0.01f64..1.0, r in 0.5f64..6.0, v0 in -2.0f64..2.0) {
            let g = vgrid(64, 8.0);
            let f = DensityGrid::gaussian(g, 0.0, v0, 1e6, 0.5).unwrap();
            let k = truncate_renormalize(&build_kernel(s, t, &g).unwrap(), Some(r)).unwrap();
            let out = diffusion_step(&f, &k).unwrap();
            proptest::prop_assert!((out.mass() - f.mass()).abs() <= 1e-12);
            proptest::prop_assert!(out.min_value() >= 0.0);
        }
    }
}
