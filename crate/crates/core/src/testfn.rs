//! Smooth test functions `phi(t, x, v)` with analytic derivatives.

use std::f64::consts::PI;

pub trait TestFunction: Sync {
    fn value(&self, t: f64, x: f64, v: f64) -> f64;
    fn dt(&self, t: f64, x: f64, v: f64) -> f64;
    fn dx(&self, t: f64, x: f64, v: f64) -> f64;
    fn dv(&self, t: f64, x: f64, v: f64) -> f64;
}

/// `cos^4(pi t / 2T)` on `|t| < T`, zero outside: smooth to third order at `T`.
#[derive(Debug, Clone, Copy)]
pub struct TimeWindow {
    pub t_end: f64,
}

impl TimeWindow {
    pub fn value(&self, t: f64) -> f64 {
        if t.abs() >= self.t_end {
            return 0.0;
        }
        (0.5 * PI * t / self.t_end).cos().powi(4)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        if t.abs() >= self.t_end {
            return 0.0;
        }
        let a = 0.5 * PI / self.t_end;
        -4.0 * a * (a * t).cos().powi(3) * (a * t).sin()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _: f64, _: f64, _: f64) -> f64 {
        self.0
    }
    fn dt(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
    fn dx(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
    fn dv(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
}

/// `amp * w(t) * (x - x0)^px * exp(-(x-x0)^2 / 2sx^2 - (v-v0)^2 / 2sv^2)` with
/// `px` in `{0, 1}` and `w` an optional [`TimeWindow`].
#[derive(Debug, Clone, Copy)]
pub struct GaussianBump {
    pub x0: f64,
    pub v0: f64,
    pub sx: f64,
    pub sv: f64,
    pub amp: f64,
    pub linear_x: bool,
    pub window: Option<TimeWindow>,
}

impl GaussianBump {
    pub fn new(x0: f64, v0: f64, sx: f64, sv: f64) -> Self {
        Self {
            x0,
            v0,
            sx,
            sv,
            amp: 1.0,
            linear_x: false,
            window: None,
        }
    }

    pub fn with_window(mut self, t_end: f64) -> Self {
        self.window = Some(TimeWindow { t_end });
        self
    }

    pub fn linear_in_x(mut self) -> Self {
        self.linear_x = true;
        self
    }

    fn time(&self, t: f64) -> (f64, f64) {
        match self.window {
            Some(w) => (w.value(t), w.deriv(t)),
            None => (1.0, 0.0),
        }
    }

    fn parts(&self, x: f64, v: f64) -> (f64, f64, f64, f64) {
        let dxr = x - self.x0;
        let dvr = v - self.v0;
        let gx = (-0.5 * dxr * dxr / (self.sx * self.sx)).exp();
        let gv = (-0.5 * dvr * dvr / (self.sv * self.sv)).exp();
        let (a, da) = if self.linear_x {
            (dxr * gx, gx * (1.0 - dxr * dxr / (self.sx * self.sx)))
        } else {
            (gx, -dxr / (self.sx * self.sx) * gx)
        };
        (a, da, gv, -dvr / (self.sv * self.sv) * gv)
    }
}

impl TestFunction for GaussianBump {
    fn value(&self, t: f64, x: f64, v: f64) -> f64 {
        let (a, _, b, _) = self.parts(x, v);
        self.amp * self.time(t).0 * a * b
    }
    fn dt(&self, t: f64, x: f64, v: f64) -> f64 {
        let (a, _, b, _) = self.parts(x, v);
        self.amp * self.time(t).1 * a * b
    }
    fn dx(&self, t: f64, x: f64, v: f64) -> f64 {
        let (_, da, b, _) = self.parts(x, v);
        self.amp * self.time(t).0 * da * b
    }
    fn dv(&self, t: f64, x: f64, v: f64) -> f64 {
        let (a, _, _, db) = self.parts(x, v);
        self.amp * self.time(t).0 * a * db
    }
}

/// Ten bumps of varying centre and width, used as a residual battery.
pub fn bump_battery(lx: f64, lv: f64, window: Option<f64>) -> Vec<GaussianBump> {
    let mut out = Vec::new();
    for k in 0..10 {
        let fx = (k as f64 * 0.37).sin();
        let fv = (k as f64 * 0.61 + 0.3).cos();
        let mut b = GaussianBump::new(0.3 * lx * fx, 0.25 * lv * fv, 0.12 * lx * (1.0 + 0.3 * (k % 3) as f64), 0.06 * lv * (1.0 + 0.25 * (k % 4) as f64));
        if k % 4 == 3 {
            b = b.linear_in_x();
        }
        if let Some(t) = window {
            b = b.with_window(t);
        }
        out.push(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_differences() {
        let fs = bump_battery(4.0, 4.0, Some(1.0));
        let e = 1e-6;
        for f in &fs {
            for &(t, x, v) in &[(0.1, 0.3, -0.2), (0.7, -1.0, 0.5), (-0.4, 0.0, 1.3)] {
                let fd_t = (f.value(t + e, x, v) - f.value(t - e, x, v)) / (2.0 * e);
                let fd_x = (f.value(t, x + e, v) - f.value(t, x - e, v)) / (2.0 * e);
                let fd_v = (f.value(t, x, v + e) - f.value(t, x, v - e)) / (2.0 * e);
                assert!((fd_t - f.dt(t, x, v)).abs() < 1e-7);
                assert!((fd_x - f.dx(t, x, v)).abs() < 1e-7);
                assert!((fd_v - f.dv(t, x, v)).abs() < 1e-7);
            }
        }
        let w = TimeWindow { t_end: 2.0 };
        assert_eq!(w.value(2.0), 0.0);
        assert_eq!(w.value(0.0), 1.0);
    }
}
