//! Binary and CSV serialisation of grids and kernel tables.
//!
//! Binary layout, little endian: magic `FKFP`, version `u32`, `N_x` and `N_v`
//! as `u64`, `L_x` and `L_v` as `f64`, then the `N_x * N_v` cell values as
//! `f64` in row-major order (v fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{FkfpeError, Result};
use crate::frac_kernel::{self, KernelTable};
use crate::grid::{DensityGrid, Geometry};

pub const MAGIC: &[u8; 4] = b"FKFP";
pub const FORMAT_VERSION: u32 = 1;

/// Comment header carried by every text output.
pub fn header(config_hash: u64, seed: u64) -> String {
    format!(
        "# fkfpe {} config={config_hash:016x} seed={seed}\n",
        crate::VERSION
    )
}

fn write_raw(mut w: impl Write, nx: u64, nv: u64, lx: f64, lv: f64, values: &[f64]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&nx.to_le_bytes())?;
    w.write_all(&nv.to_le_bytes())?;
    w.write_all(&lx.to_le_bytes())?;
    w.write_all(&lv.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_raw(mut r: impl Read) -> Result<(u64, u64, f64, f64, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FkfpeError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(FkfpeError::Format(format!("unsupported version {version}")));
    }
    let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let nx = next_u64(&mut r)?;
    let nv = next_u64(&mut r)?;
    let lx = f64::from_bits(next_u64(&mut r)?);
    let lv = f64::from_bits(next_u64(&mut r)?);
    let n = nx
        .checked_mul(nv)
        .filter(|&n| n <= (1 << 32))
        .ok_or_else(|| FkfpeError::Format("grid too large".into()))? as usize;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(FkfpeError::Format("trailing bytes".into()));
    }
    Ok((nx, nv, lx, lv, values))
}

pub fn write_grid(path: impl AsRef<Path>, f: &DensityGrid) -> Result<()> {
    let g = f.geom;
    write_raw(
        BufWriter::new(File::create(path)?),
        g.nx as u64,
        g.nv as u64,
        g.lx,
        g.lv,
        &f.values,
    )
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<DensityGrid> {
    let (nx, nv, lx, lv, values) = read_raw(BufReader::new(File::open(path)?))?;
    let geom = Geometry::new(nx as usize, nv as usize, lx, lv)?;
    DensityGrid::from_values(geom, values)
}

/// `x, v, value` rows after the comment header.
pub fn write_grid_csv(mut w: impl Write, header: &str, f: &DensityGrid) -> Result<()> {
    write!(w, "{header}")?;
    writeln!(w, "x,v,value")?;
    let g = f.geom;
    for i in 0..g.nx {
        for j in 0..g.nv {
            writeln!(w, "{:e},{:e},{:e}", g.x(i), g.v(j), f.get(i, j))?;
        }
    }
    Ok(())
}

/// Two-column gnuplot data file.
pub fn write_dat(mut w: impl Write, header: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    write!(w, "{header}")?;
    for (x, y) in xs.iter().zip(ys) {
        writeln!(w, "{x:e} {y:e}")?;
    }
    Ok(())
}

pub fn write_kernel_csv(mut w: impl Write, header: &str, k: &KernelTable) -> Result<()> {
    write!(w, "{header}")?;
    writeln!(w, "v,phi")?;
    for (v, p) in k.pairs() {
        writeln!(w, "{v:e},{p:e}")?;
    }
    Ok(())
}

/// Cache file name for the untruncated kernel `(s, t, N_v, L_v)`.
pub fn kernel_cache_path(dir: impl AsRef<Path>, s: f64, t: f64, nv: usize, lv: f64) -> PathBuf {
    dir.as_ref().join(format!(
        "kernel_s{:016x}_t{:016x}_n{nv}_l{:016x}.bin",
        s.to_bits(),
        t.to_bits(),
        lv.to_bits()
    ))
}

/// Loads the untruncated table from the cache directory, building and storing
/// it on a miss. The file reuses the grid header with `N_x = 1`, `N_v` the
/// number of fine samples (`8 N_v` of the grid), and `L_x`, `L_v` holding `t`
/// and `L_v`; `s` is carried by the file name only.
pub fn load_or_build_kernel(dir: impl AsRef<Path>, s: f64, t: f64, geom: &Geometry) -> Result<KernelTable> {
    let path = kernel_cache_path(&dir, s, t, geom.nv, geom.lv);
    if let Ok(file) = File::open(&path) {
        let (nx, n, tt, lv, values) = read_raw(BufReader::new(file))?;
        if nx != 1 || n as usize != 8 * geom.nv || tt != t || lv != geom.lv {
            return Err(FkfpeError::Format(format!("kernel cache {} does not match its key", path.display())));
        }
        return Ok(KernelTable::from_fine(s, t, geom, values));
    }
    let built = frac_kernel::build_kernel(s, t, geom)?;
    std::fs::create_dir_all(&dir)?;
    let fine = built.fine_samples();
    write_raw(BufWriter::new(File::create(&path)?), 1, fine.len() as u64, t, geom.lv, fine)?;
    Ok(built)
}
