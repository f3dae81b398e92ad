//! Per-step scalar diagnostics.

use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord {
    pub n: usize,
    pub t: f64,
    pub mass: f64,
    /// `∫ f^p` for the configured exponent.
    pub lp_p: f64,
    pub m2v: f64,
    pub epot: f64,
    /// `W_h^2` of the kinetic phase ending at this step.
    pub wh2: f64,
    pub el_res: f64,
    /// Seconds spent on the step.
    pub wallclock: f64,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: &'static str = "n,t,mass,lp_p,m2v,epot,wh2,el_res";

    pub fn is_finite(&self) -> bool {
        [self.t, self.mass, self.lp_p, self.m2v, self.epot, self.wh2, self.el_res]
            .iter()
            .all(|x| x.is_finite())
    }

    /// CSV row without the wall-clock column, so reruns compare equal.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.n, self.t, self.mass, self.lp_p, self.m2v, self.epot, self.wh2, self.el_res
        )
    }
}

pub fn write_csv(mut w: impl Write, header: &str, records: &[DiagnosticsRecord]) -> Result<()> {
    write!(w, "{header}")?;
    writeln!(w, "{}", DiagnosticsRecord::CSV_HEADER)?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}
