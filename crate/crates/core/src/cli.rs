//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 2 for configuration problems, 1 for numerical failures.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::experiments::{provenance_lines, run_study, straightness_metric, train_single, RunConfig, StudyConfig};
use crate::field_io::{write_density, write_momentum};
use crate::grid_solver::{project_cone_k2, solve_otflow_grid};
use crate::measures::{discretize_gaussian, sample_distribution, BoxDomain, Distribution, GaussianSpec, GridSpec, ParticleSet};
use crate::neural_flow::{integrate_field, loss_jn, write_checkpoint, write_history_csv, MlpParams, VelocityField};
use crate::transport_oracles::{hungarian, w1_empirical, w2_squared_1d};

#[derive(Debug, Parser)]
#[command(name = "otflow", version, about = "Dynamic optimal transport solvers, OT-regularized flows and reproducible studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true, env = "OTFLOW_THREADS")]
    pub threads: Option<usize>,

    /// Master seed, replacing `seed` from the config.
    #[arg(long, global = true, env = "OTFLOW_SEED")]
    pub seed: Option<u64>,

    /// Progress on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    /// Exact W2² between two discretized 1-D Gaussians on [0, 1].
    #[value(name = "w2-1d")]
    W21d,
    /// Two-sample empirical W1 of a centred Gaussian in the unit cube.
    W1,
    /// Optimal assignment for a square cost matrix read from CSV.
    Assignment,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub kind: OracleKind,
    #[arg(long, default_value_t = 0.35)]
    pub source_mean: f64,
    #[arg(long, default_value_t = 0.65)]
    pub target_mean: f64,
    #[arg(long, default_value_t = 0.1)]
    pub stddev: f64,
    /// Grid cells (w2-1d) or sample size (w1).
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Cost matrix, one comma-separated row per line.
    #[arg(long)]
    pub costs: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the grid problem in `[grid]`; writes report.csv, rho.field, m.field.
    SolveGrid(RunArgs),
    /// Train the flow in `[flow]`; writes history.csv and checkpoint.txt.
    Train(RunArgs),
    /// Evaluate one exact transport oracle and print the result.
    Oracle(OracleArgs),
    /// Run a configured study; writes the study CSV and its plot data.
    Study(RunArgs),
    /// Quick built-in checks with known answers.
    Selftest,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::Parameter { .. } | Error::InvalidSpec(_) => 2,
        _ => 1,
    }
}

fn config_error(e: Error) -> Error {
    // An unreadable config is a config error, not an I/O failure mid-run.
    match e {
        Error::Io { path, source } => Error::Config {
            key: path.display().to_string(),
            reason: source.to_string(),
        },
        other => other,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn missing(key: &str) -> Error {
    Error::Config {
        key: key.into(),
        reason: "section required by this command".into(),
    }
}

fn solve_grid(args: &RunArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).map_err(config_error)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let gp = cfg.grid.as_ref().ok_or_else(|| missing("grid"))?;
    create_dir(&args.out)?;
    let rho0 = discretize_gaussian(&gp.source, &gp.grid)?;
    let rho1 = discretize_gaussian(&gp.target, &gp.grid)?;
    let head: Vec<String> = provenance_lines(&cfg.config_hash, cfg.seed, "command = solve-grid")
        .into_iter()
        .chain([format!("alpha = {}", gp.pdhg.alpha.as_f64())])
        .map(|l| format!("# {l}"))
        .collect();
    let report_path = args.out.join("report.csv");
    let result = solve_otflow_grid(&rho0, &rho1, &gp.grid, &gp.pdhg);
    let (vars, rep) = match result {
        Ok(v) => v,
        Err(e) => {
            let mut lines = head;
            lines.push(format!("# failed: {e}"));
            write_lines(&report_path, &lines)?;
            return Err(e);
        }
    };
    let file = File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&report_path, e);
    for l in &head {
        writeln!(w, "{l}").map_err(io)?;
    }
    rep.write_csv(&mut w).map_err(io)?;
    writeln!(w, "# iterations = {}", rep.iterations).map_err(io)?;
    writeln!(w, "# converged = {}", rep.converged).map_err(io)?;
    writeln!(w, "# action = {}", rep.action).map_err(io)?;
    writeln!(w, "# kl_or_gap = {}", rep.kl_or_gap).map_err(io)?;
    writeln!(w, "# residual = {}", rep.residual).map_err(io)?;
    w.flush().map_err(io)?;
    write_density(&args.out.join("rho.field"), &vars.rho)?;
    write_momentum(&args.out.join("m.field"), &vars.m)?;
    if gp.grid.dim() == 1 {
        println!("w2_squared_1d = {}", w2_squared_1d(&rho0, &rho1)?);
    }
    println!("action = {}", rep.action);
    println!("kl_or_gap = {}", rep.kl_or_gap);
    println!("residual = {}", rep.residual);
    println!("iterations = {}", rep.iterations);
    if verbose {
        eprintln!("wrote {}", args.out.display());
    }
    if !rep.converged {
        return Err(Error::Numerical(format!(
            "no convergence within {} iterations (residual {:e})",
            rep.iterations, rep.residual
        )));
    }
    Ok(())
}

fn train_cmd(args: &RunArgs, seed: Option<u64>, verbose: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).map_err(config_error)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let fp = cfg.flow.as_ref().ok_or_else(|| missing("flow"))?;
    create_dir(&args.out)?;
    let out = train_single(fp, cfg.seed)?;
    let mut head = provenance_lines(&cfg.config_hash, cfg.seed, "command = train");
    head.push(format!("alpha = {}", fp.alpha));
    write_history_csv(&args.out.join("history.csv"), &out.history, &head)?;
    if let Some(e) = out.failure {
        return Err(e);
    }
    write_checkpoint(&args.out.join("checkpoint.txt"), &out.params, cfg.seed)?;
    if let Some(last) = out.history.last() {
        println!("epochs = {}", last.epoch);
        println!("J_train = {}", last.j_train);
        println!("J_heldout = {}", last.j_heldout);
        println!("param_norm = {}", last.param_norm);
    }
    if verbose {
        eprintln!("wrote {}", args.out.display());
    }
    Ok(())
}

fn read_costs(path: &Path) -> Result<(Vec<f64>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| config_error(Error::io(path, e)))?;
    let bad = |reason: String| Error::Parse { path: path.to_path_buf(), reason };
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| bad(format!("`{x}`: {e}")))).collect())
        .collect::<Result<_>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(bad(format!("expected a square matrix, found {n} rows of varying length")));
    }
    if rows.iter().flatten().any(|c| !c.is_finite()) {
        return Err(bad("costs must be finite".into()));
    }
    Ok((rows.concat(), n))
}

fn oracle(args: &OracleArgs, seed: Option<u64>) -> Result<()> {
    match args.kind {
        OracleKind::W21d => {
            let g = GridSpec::unit(1, args.n, 2)?;
            let a = discretize_gaussian(&GaussianSpec::new(vec![args.source_mean], args.stddev), &g)?;
            let b = discretize_gaussian(&GaussianSpec::new(vec![args.target_mean], args.stddev), &g)?;
            println!("w2_squared_1d = {}", w2_squared_1d(&a, &b)?);
        }
        OracleKind::W1 => {
            let dom = BoxDomain::unit(args.dim);
            let dist = Distribution::Gaussian(GaussianSpec::new(vec![0.5; args.dim], args.stddev));
            let s = seed.unwrap_or(0);
            let a = sample_distribution(&dist, &dom, args.n, crate::experiments::derive_seed(s, 1, 0))?;
            let b = sample_distribution(&dist, &dom, args.n, crate::experiments::derive_seed(s, 1, 1))?;
            println!("w1 = {}", w1_empirical(&a, &b)?);
        }
        OracleKind::Assignment => {
            let path = args.costs.as_ref().ok_or_else(|| Error::Config {
                key: "--costs".into(),
                reason: "required for --kind assignment".into(),
            })?;
            let (c, n) = read_costs(path)?;
            let perm = hungarian(&c, n);
            let cost: f64 = perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
            let p: Vec<String> = perm.iter().map(|j| j.to_string()).collect();
            println!("assignment = {}", p.join(","));
            println!("cost = {cost}");
        }
    }
    Ok(())
}

struct Constant(Vec<f64>);

impl VelocityField for Constant {
    type Scratch = ();
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn scratch(&self) {}
    fn eval(&self, _: &mut (), _: &[f64], _: f64, v: &mut [f64]) -> f64 {
        v.copy_from_slice(&self.0);
        0.0
    }
}

fn check(name: &str, ok: bool) -> bool {
    println!("{} {name}", if ok { "ok  " } else { "FAIL" });
    ok
}

fn selftest() -> Result<bool> {
    let mut all = true;
    let (a, b) = project_cone_k2(-1.0, &[0.5])?;
    all &= check("cone projection keeps interior points", a == -1.0 && b == [0.5]);
    let (a, b) = project_cone_k2(0.0, &[0.0])?;
    all &= check("cone projection keeps the apex", a == 0.0 && b == [0.0]);

    let g = GridSpec::unit(1, 64, 2)?;
    let rho = discretize_gaussian(&GaussianSpec::new(vec![0.5], 0.1), &g)?;
    all &= check("w2 of a density with itself is zero", w2_squared_1d(&rho, &rho)?.abs() < 1e-12);
    let kl = crate::functionals::kl_divergence(&rho, &rho)?;
    all &= check("kl of a density with itself is zero", kl.value().abs() < 1e-12);

    all &= check("identity costs give the identity assignment", {
        let c = [0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        hungarian(&c, 3) == [0, 1, 2]
    });

    let pts = ParticleSet::uniform(2, vec![0.1, -0.3, 1.2, 0.4, -2.0, 0.0])?;
    let zero = MlpParams::zeros(BoxDomain::cube(2, -4.0, 4.0)?, &[4], 10.0)?;
    let lb = loss_jn(&pts, &zero, 10.0, 4)?;
    let expect = pts.iter().map(|x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + (2.0 * std::f64::consts::PI).ln()).sum::<f64>() / 3.0;
    all &= check("zero velocity gives the Gaussian energy", (lb.c_mean - expect).abs() < 1e-12 && lb.l_mean == 0.0);

    let traj = integrate_field(&Constant(vec![0.3, -0.2]), &pts, 8)?;
    all &= check("constant field paths are straight", straightness_metric(&traj) < 1e-10);

    all &= check("splitmix64 reference value", crate::experiments::splitmix64(0) == 0xE220_A839_7B1D_CDAF);
    Ok(all)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        // Only the first call configures the global pool; later calls are harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::SolveGrid(a) => solve_grid(a, cli.seed, cli.verbose).map(|_| true),
        Command::Train(a) => train_cmd(a, cli.seed, cli.verbose).map(|_| true),
        Command::Oracle(a) => oracle(a, cli.seed).map(|_| true),
        Command::Study(a) => {
            let mut cfg = StudyConfig::load(&a.config).map_err(config_error)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let out = run_study(&cfg, &a.out)?;
            let bad = out.rows.iter().filter(|r| !r.is_ok()).count();
            println!("rows = {}", out.rows.len());
            println!("infeasible = {bad}");
            for f in &out.fits {
                println!("slope d={} = {} (se {})", f.dim, f.slope, f.stderr);
            }
            println!("csv = {}", out.csv.display());
            println!("plot = {}", out.plot.display());
            Ok(true)
        }
        Command::Selftest => selftest(),
    }
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("otflow: {e}");
            exit_code(&e)
        }
    }
}
