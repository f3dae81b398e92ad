//! `fkfpe` experiment runner.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use fkfpe::config::{Mode, SchemeConfig};
use fkfpe::error::FkfpeError;
use fkfpe::io;
use fkfpe::reference::{characteristics_density, initial_bump_density, reference_pde_solve};
use fkfpe::splitting::{apriori_report, convergence_study, run_scheme, Trajectory, LEAKAGE_LIMIT};
use fkfpe::validate::{run_suite, Suite};

const EXIT_OK: u8 = 0;
const EXIT_CHECK_FAILED: u8 = 2;
const EXIT_ABORT: u8 = 3;
const EXIT_USAGE: u8 = 64;

const MASS_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "fkfpe", version, about = "Splitting solver for the fractional kinetic Fokker-Planck equation")]
struct Cli {
    /// Output directory (the FKFPE_OUT environment variable takes precedence).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker thread cap; 1 gives bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write diagnostics, final grid and marginals.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an acceptance suite: kernel, cost, jko, scheme or oracle.
    Validate { suite: String },
    /// Halve h repeatedly (R = h^-1/2) and tabulate the L1 error against an oracle.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Tabulate the fractional heat kernel as (v, phi) pairs.
    KernelTable {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 256)]
        nv: usize,
        #[arg(long, default_value_t = 8.0)]
        lv: f64,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, err: err.into() }
    }
}

impl From<FkfpeError> for Failure {
    fn from(e: FkfpeError) -> Self {
        let code = match e {
            FkfpeError::Config { .. }
            | FkfpeError::MissingKey(_)
            | FkfpeError::InvalidParameter(_)
            | FkfpeError::GridMismatch(_)
            | FkfpeError::Format(_) => EXIT_USAGE,
            _ => EXIT_ABORT,
        };
        Self { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Self { code: EXIT_ABORT, err }
    }
}

type CmdResult = Result<u8, Failure>;

/// Provenance record written before any computation starts.
struct RunManifest {
    config_path: Option<PathBuf>,
    config: Option<SchemeConfig>,
    out_dir: PathBuf,
    checks: Vec<String>,
    seed: u64,
}

impl RunManifest {
    fn header(&self) -> String {
        io::header(self.config.as_ref().map_or(0, |c| c.hash()), self.seed)
    }

    fn write(&self) -> anyhow::Result<()> {
        let mut text = self.header();
        let _ = writeln!(text, "version = {}", fkfpe::VERSION);
        if let Some(p) = &self.config_path {
            let _ = writeln!(text, "config_path = {}", p.display());
        }
        let _ = writeln!(text, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(text, "seed = {}", self.seed);
        let _ = writeln!(text, "checks = {}", self.checks.join(","));
        if let Some(c) = &self.config {
            text.push_str("# resolved config\n");
            text.push_str(&c.to_text());
        }
        let path = self.out_dir.join("manifest.txt");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn create(&self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.out_dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }
}

fn resolve_out(flag: &Path) -> anyhow::Result<PathBuf> {
    let dir = std::env::var_os("FKFPE_OUT").map_or_else(|| flag.to_path_buf(), PathBuf::from);
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(fs::canonicalize(&dir)?)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SchemeConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::usage)?;
    let mut cfg: SchemeConfig = text.parse().map_err(|e: FkfpeError| Failure::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn manifest(cli: &Cli, config_path: Option<&Path>, config: Option<SchemeConfig>, checks: &[&str]) -> Result<RunManifest, Failure> {
    let out_dir = resolve_out(&cli.out).map_err(Failure::usage)?;
    let config_path = config_path.map(|p| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()));
    let seed = config.as_ref().map_or(cli.seed.unwrap_or(0), |c| c.seed);
    let m = RunManifest {
        config_path,
        config,
        out_dir,
        checks: checks.iter().map(|s| s.to_string()).collect(),
        seed,
    };
    m.write()?;
    Ok(m)
}

fn write_outputs(m: &RunManifest, traj: &Trajectory) -> anyhow::Result<()> {
    let header = m.header();
    traj.write_diagnostics(m.create("diagnostics.csv")?, &header)?;
    let last = traj.final_state();
    io::write_grid(m.out_dir.join("final.bin"), last)?;
    let g = last.geom;
    let xs: Vec<f64> = (0..g.nx).map(|i| g.x(i)).collect();
    let vs: Vec<f64> = (0..g.nv).map(|j| g.v(j)).collect();
    io::write_dat(m.create("final_x_marginal.dat")?, &header, &xs, &last.x_marginal())?;
    io::write_dat(m.create("final_v_marginal.dat")?, &header, &vs, &last.v_marginal())?;
    io::write_dat(m.create("initial_v_marginal.dat")?, &header, &vs, &traj.initial().v_marginal())?;
    Ok(())
}

fn cmd_run(cli: &Cli, path: &Path) -> CmdResult {
    let cfg = load_config(path, cli.seed)?;
    let m = manifest(cli, Some(path), Some(cfg.clone()), &["mass", "nonnegativity", "leakage", "lp_growth"])?;
    let f0 = cfg.initial_density()?;
    let psi = cfg.build_potential();
    let traj = run_scheme(&cfg, &f0, psi.as_ref())?;
    write_outputs(&m, &traj)?;
    let rep = apriori_report(&traj, psi.as_ref())?;
    let checks = [
        ("mass", rep.max_mass_error <= MASS_TOL, format!("max |mass - 1| = {:.3e}", rep.max_mass_error)),
        ("nonnegativity", rep.nonneg_ok(), format!("min value {:.3e}", rep.min_value)),
        ("leakage", traj.leakage <= LEAKAGE_LIMIT, format!("cumulative {:.3e}", traj.leakage)),
        ("lp_growth", rep.lp_growth_ok(), format!("max ratio {:.4}", rep.lp_growth_ratio)),
    ];
    println!("{} steps, h = {}, output in {}", traj.steps(), traj.h(), m.out_dir.display());
    let mut ok = true;
    for (name, passed, detail) in &checks {
        ok &= passed;
        println!("{:<4} {name}: {detail}", if *passed { "ok" } else { "FAIL" });
    }
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_validate(cli: &Cli, suite: &str) -> CmdResult {
    let suite: Suite = suite.parse().map_err(Failure::usage)?;
    let ids: Vec<String> = suite.criteria().iter().map(|i| format!("criterion{i}")).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    let m = manifest(cli, None, None, &ids)?;
    let results = run_suite(suite)?;
    let mut report = m.header();
    for r in &results {
        let _ = write!(report, "{r}");
    }
    print!("{report}");
    fs::write(m.out_dir.join(format!("validate_{}.txt", suite_name(suite))), &report).context("writing report")?;
    Ok(if results.iter().all(|r| r.passed()) { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::Kernel => "kernel",
        Suite::Cost => "cost",
        Suite::Jko => "jko",
        Suite::Scheme => "scheme",
        Suite::Oracle => "oracle",
    }
}

fn cmd_convergence(cli: &Cli, path: &Path, levels: usize) -> CmdResult {
    if levels < 3 {
        return Err(Failure::usage(anyhow::anyhow!("levels = {levels}: at least 3 levels are needed to fit an order")));
    }
    let cfg = load_config(path, cli.seed)?;
    let m = manifest(cli, Some(path), Some(cfg.clone()), &["monotone_error"])?;
    let f0 = cfg.initial_density()?;
    let psi = cfg.build_potential();
    let reference = if cfg.mode == Mode::TransportOnly {
        characteristics_density(&initial_bump_density(cfg.init, f0.geom), psi.as_ref(), cfg.t_end, f0.geom)
    } else {
        reference_pde_solve(&cfg, &f0, psi.as_ref())?
    };
    let configs: Vec<SchemeConfig> = (0..levels).map(|k| cfg.with_h(cfg.h / f64::from(1u32 << k))).collect();
    let table = convergence_study(&configs, &f0, psi.as_ref(), &|_: &SchemeConfig| Ok(reference.clone()))?;
    table.write_csv(m.create("convergence.csv")?, &m.header())?;
    println!("{:>12} {:>12} {:>12}", "h", "R", "L1 error");
    for r in &table.rows {
        let rad = r.radius.map_or("inf".into(), |x| format!("{x:.4}"));
        println!("{:>12.6} {rad:>12} {:>12.4e}", r.h, r.error);
    }
    println!("fitted order {:.4}", table.order);
    let monotone = table.monotone();
    if !monotone {
        println!("FAIL error column is not monotone");
    }
    Ok(if monotone { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_kernel_table(cli: &Cli, s: f64, t: f64, nv: usize, lv: f64) -> CmdResult {
    let geom = fkfpe::Geometry::homogeneous(nv, lv)?;
    let m = manifest(cli, None, None, &[])?;
    let table = io::load_or_build_kernel(m.out_dir.join("kernel_cache"), s, t, &geom)?;
    let name = format!("kernel_s{s}_t{t}_n{nv}.csv");
    io::write_kernel_csv(m.create(&name)?, &m.header(), &table)?;
    println!("wrote {}", m.out_dir.join(name).display());
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> CmdResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Run { config } => cmd_run(cli, config),
        Command::Validate { suite } => cmd_validate(cli, suite),
        Command::Convergence { config, levels } => cmd_convergence(cli, config, *levels),
        Command::KernelTable { s, t, nv, lv } => cmd_kernel_table(cli, *s, *t, *nv, *lv),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let kind = if f.code == EXIT_ABORT { "abort" } else { "error" };
            eprintln!("fkfpe: {kind}: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
