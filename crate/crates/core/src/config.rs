//! Scheme configuration and its flat `key = value` file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, FkfpeError, Result};
use crate::grid::{DensityGrid, Geometry};
use crate::potential::{Potential, PotentialKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// `R = h^{-1/2}`.
    Coupled,
    Fixed(f64),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    TransportOnly,
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemapKind {
    /// Forward push of cell masses with area-weighted deposit.
    Bilinear,
    /// Backward semi-Lagrangian remap with trigonometric interpolation.
    Spectral,
}

/// Separable Gaussian initial datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialBump {
    pub x0: f64,
    pub v0: f64,
    pub sx: f64,
    pub sv: f64,
}

impl Default for InitialBump {
    fn default() -> Self {
        Self {
            x0: 0.0,
            v0: 0.0,
            sx: 1.0,
            sv: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub s: f64,
    pub h: f64,
    pub t_end: f64,
    pub truncation: Truncation,
    pub lx: f64,
    pub lv: f64,
    pub nx: usize,
    pub nv: usize,
    pub p: f64,
    pub alpha: f64,
    pub seed: u64,
    pub mode: Mode,
    pub potential: PotentialKind,
    pub remap: RemapKind,
    pub init: InitialBump,
}

impl SchemeConfig {
    /// Full-mode configuration with quadratic friction and a unit bump.
    pub fn baseline(s: f64, h: f64, t_end: f64, nx: usize, nv: usize, lx: f64, lv: f64) -> Self {
        Self {
            s,
            h,
            t_end,
            truncation: Truncation::Coupled,
            lx,
            lv,
            nx,
            nv,
            p: 2.0,
            alpha: 1.01,
            seed: 0,
            mode: Mode::Full,
            potential: PotentialKind::Quadratic(1.0),
            remap: RemapKind::Spectral,
            init: InitialBump::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s <= 1.0) {
            return invalid(format!("s = {} must lie in (0, 1]", self.s));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return invalid(format!("h = {} must be positive", self.h));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return invalid(format!("T = {} must be positive", self.t_end));
        }
        let n = (self.t_end / self.h).round();
        if n < 1.0 || (n * self.h - self.t_end).abs() > 1e-9 * self.t_end {
            return invalid(format!("T = {} is not an integer multiple of h = {}", self.t_end, self.h));
        }
        if let Truncation::Fixed(r) = self.truncation {
            if !(r > 0.0) {
                return invalid("truncation radius must be positive");
            }
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return invalid(format!("p = {} must lie in (1, inf)", self.p));
        }
        let hs = self.build_potential().hessian_sup();
        if !(self.alpha > hs) {
            return invalid(format!("alpha = {} must exceed the Hessian bound {hs}", self.alpha));
        }
        for (name, w) in [("init_sx", self.init.sx), ("init_sv", self.init.sv)] {
            if !(w > 0.0) {
                return invalid(format!("{name} must be positive"));
            }
        }
        self.geometry().map(|_| ())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }

    pub fn geometry(&self) -> Result<Geometry> {
        match self.mode {
            Mode::Homogeneous => Geometry::homogeneous(self.nv, self.lv),
            _ => Geometry::new(self.nx, self.nv, self.lx, self.lv),
        }
    }

    /// Truncation radius for the configured step; `None` means untruncated.
    pub fn radius(&self) -> Option<f64> {
        match self.truncation {
            Truncation::Coupled => Some(self.h.powf(-0.5)),
            Truncation::Fixed(r) => Some(r),
            Truncation::None => None,
        }
    }

    pub fn build_potential(&self) -> Box<dyn Potential> {
        self.potential.build(self.lv)
    }

    pub fn initial_density(&self) -> Result<DensityGrid> {
        let b = self.init;
        DensityGrid::gaussian(self.geometry()?, b.x0, b.v0, b.sx, b.sv)
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        text.parse()
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("s", fmt_f(self.s));
        kv("h", fmt_f(self.h));
        kv("T", fmt_f(self.t_end));
        match self.truncation {
            Truncation::Coupled => kv("truncation", "coupled".into()),
            Truncation::None => kv("truncation", "none".into()),
            Truncation::Fixed(r) => {
                kv("truncation", "fixed".into());
                kv("R", fmt_f(r));
            }
        }
        kv("L_x", fmt_f(self.lx));
        kv("L_v", fmt_f(self.lv));
        kv("N_x", self.nx.to_string());
        kv("N_v", self.nv.to_string());
        kv("p", fmt_f(self.p));
        kv("alpha", fmt_f(self.alpha));
        kv("seed", self.seed.to_string());
        kv(
            "mode",
            match self.mode {
                Mode::Full => "full",
                Mode::TransportOnly => "transport",
                Mode::Homogeneous => "homogeneous",
            }
            .into(),
        );
        kv("potential", self.potential.to_string());
        kv(
            "remap",
            match self.remap {
                RemapKind::Bilinear => "bilinear",
                RemapKind::Spectral => "spectral",
            }
            .into(),
        );
        kv("init_x0", fmt_f(self.init.x0));
        kv("init_v0", fmt_f(self.init.v0));
        kv("init_sx", fmt_f(self.init.sx));
        kv("init_sv", fmt_f(self.init.sv));
        out
    }

    /// 64-bit FNV-1a digest of the canonical text, printed in output headers.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

const KEYS: &[&str] = &[
    "s", "h", "T", "truncation", "R", "L_x", "L_v", "N_x", "N_v", "p", "alpha", "seed", "mode",
    "potential", "remap", "init_x0", "init_v0", "init_sx", "init_sv",
];

impl FromStr for SchemeConfig {
    type Err = FkfpeError;

    fn from_str(text: &str) -> Result<Self> {
        let mut map: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(FkfpeError::Config {
                    line: line_no,
                    msg: format!("expected `key = value`, found `{line}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(FkfpeError::Config {
                    line: line_no,
                    msg: format!("unknown key `{k}`"),
                });
            }
            if map.insert(k, (line_no, v)).is_some() {
                return Err(FkfpeError::Config {
                    line: line_no,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }

        fn get<T: FromStr>(map: &BTreeMap<&str, (usize, &str)>, key: &str) -> Result<Option<T>> {
            match map.get(key) {
                None => Ok(None),
                Some(&(line, v)) => v.parse::<T>().map(Some).map_err(|_| FkfpeError::Config {
                    line,
                    msg: format!("cannot parse value `{v}` for `{key}`"),
                }),
            }
        }
        fn req<T: FromStr>(map: &BTreeMap<&str, (usize, &str)>, key: &str) -> Result<T> {
            get(map, key)?.ok_or_else(|| FkfpeError::MissingKey(key.to_string()))
        }
        fn choice<T: Copy>(
            map: &BTreeMap<&str, (usize, &str)>,
            key: &str,
            default: T,
            opts: &[(&str, T)],
        ) -> Result<T> {
            match map.get(key) {
                None => Ok(default),
                Some(&(line, v)) => opts
                    .iter()
                    .find(|(name, _)| *name == v)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| FkfpeError::Config {
                        line,
                        msg: format!(
                            "`{key}` must be one of {:?}, found `{v}`",
                            opts.iter().map(|o| o.0).collect::<Vec<_>>()
                        ),
                    }),
            }
        }

        let mode = choice(
            &map,
            "mode",
            Mode::Full,
            &[
                ("full", Mode::Full),
                ("transport", Mode::TransportOnly),
                ("homogeneous", Mode::Homogeneous),
            ],
        )?;
        let homogeneous = mode == Mode::Homogeneous;
        let trunc_kind = choice(&map, "truncation", 0u8, &[("coupled", 0), ("fixed", 1), ("none", 2)])?;
        let radius: Option<f64> = get(&map, "R")?;
        let truncation = match (trunc_kind, radius) {
            (0, None) => Truncation::Coupled,
            (1, Some(r)) => Truncation::Fixed(r),
            (1, None) => return Err(FkfpeError::MissingKey("R".into())),
            (2, None) => Truncation::None,
            (_, Some(_)) => {
                let line = map["R"].0;
                return Err(FkfpeError::Config {
                    line,
                    msg: "`R` is only valid with `truncation = fixed`".into(),
                });
            }
            _ => unreachable!(),
        };
        let potential = match map.get("potential") {
            None => PotentialKind::Quadratic(1.0),
            Some(&(line, v)) => v.parse().map_err(|e: FkfpeError| FkfpeError::Config {
                line,
                msg: e.to_string(),
            })?,
        };
        let remap = choice(
            &map,
            "remap",
            RemapKind::Spectral,
            &[("bilinear", RemapKind::Bilinear), ("spectral", RemapKind::Spectral)],
        )?;
        let lv: f64 = req(&map, "L_v")?;
        let (lx, nx) = if homogeneous {
            (get(&map, "L_x")?.unwrap_or(0.5), get(&map, "N_x")?.unwrap_or(1))
        } else {
            (req(&map, "L_x")?, req(&map, "N_x")?)
        };
        let alpha_default = 1.01 * potential.build(lv).hessian_sup() + 0.01;
        let d = InitialBump::default();
        let cfg = SchemeConfig {
            s: req(&map, "s")?,
            h: req(&map, "h")?,
            t_end: req(&map, "T")?,
            truncation,
            lx,
            lv,
            nx,
            nv: req(&map, "N_v")?,
            p: get(&map, "p")?.unwrap_or(2.0),
            alpha: get(&map, "alpha")?.unwrap_or(alpha_default),
            seed: get(&map, "seed")?.unwrap_or(0),
            mode,
            potential,
            remap,
            init: InitialBump {
                x0: get(&map, "init_x0")?.unwrap_or(d.x0),
                v0: get(&map, "init_v0")?.unwrap_or(d.v0),
                sx: get(&map, "init_sx")?.unwrap_or(d.sx),
                sv: get(&map, "init_sv")?.unwrap_or(d.sv),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
# baseline
s = 1
h = 0.125
T = 1
L_x = 8
L_v = 8
N_x = 32
N_v = 64
";

    #[test]
    fn parses_and_round_trips() {
        let c: SchemeConfig = BASE.parse().unwrap();
        assert_eq!(c.steps(), 8);
        assert_eq!(c.truncation, Truncation::Coupled);
        assert_eq!(c.radius(), Some(0.125f64.powf(-0.5)));
        let again: SchemeConfig = c.to_text().parse().unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        let other = c.with_h(0.0625);
        assert_ne!(c.hash(), other.hash());
    }

    #[test]
    fn missing_key_is_named() {
        let text = BASE.replace("s = 1\n", "");
        match text.parse::<SchemeConfig>() {
            Err(FkfpeError::MissingKey(k)) => assert_eq!(k, "s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = format!("{BASE}colour = red\n");
        match text.parse::<SchemeConfig>() {
            Err(FkfpeError::Config { line, msg }) => {
                assert_eq!(line, 9);
                assert!(msg.contains("colour"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_invalid_values() {
        for (from, to) in [
            ("s = 1", "s = 1.5"),
            ("T = 1", "T = 1.01"),
            ("N_v = 64", "N_v = 60"),
            ("h = 0.125", "h = abc"),
        ] {
            assert!(BASE.replace(from, to).parse::<SchemeConfig>().is_err(), "{to}");
        }
        let low_alpha = format!("{BASE}alpha = 0.5\n");
        assert!(low_alpha.parse::<SchemeConfig>().is_err());
        let fixed_no_r = format!("{BASE}truncation = fixed\n");
        assert!(matches!(fixed_no_r.parse::<SchemeConfig>(), Err(FkfpeError::MissingKey(_))));
    }

    #[test]
    fn homogeneous_needs_no_x_keys() {
        let text = "s = 0.75\nh = 0.1\nT = 1\nL_v = 16\nN_v = 128\nmode = homogeneous\ntruncation = fixed\nR = 16\n";
        let c: SchemeConfig = text.parse().unwrap();
        assert_eq!(c.geometry().unwrap().nx, 1);
        assert_eq!(c.radius(), Some(16.0));
    }
}
