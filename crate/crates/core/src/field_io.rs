//! Text serialization of space-time fields.
//!
//! ```text
//! # otflow field v1
//! # kind = density            (or momentum)
//! # lower = 0,0
//! # upper = 1,1
//! dim,n_space,n_time,horizon
//! 2,32,16,1
//! <one value per line, row-major in the in-memory layout>
//! ```
//!
//! Density values run over time nodes `0..=n_time`, then cells. Momentum
//! values run over midpoints `0..n_time`, then axis blocks of faces. Values
//! use the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{BoxDomain, DensityField, GridSpec, MomentumField};

const MAGIC: &str = "# otflow field v1";
const HEADER: &str = "dim,n_space,n_time,horizon";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn render(kind: &str, grid: &GridSpec, values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    writeln!(s, "{MAGIC}").unwrap();
    writeln!(s, "# kind = {kind}").unwrap();
    writeln!(s, "# lower = {}", join(&grid.domain().lower)).unwrap();
    writeln!(s, "# upper = {}", join(&grid.domain().upper)).unwrap();
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "{},{},{},{}", grid.dim(), grid.n_space(), grid.n_time(), grid.horizon()).unwrap();
    for v in values {
        writeln!(s, "{v}").unwrap();
    }
    s
}

fn parse(path: &Path, kind: &str) -> Result<(GridSpec, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Parse { path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not an otflow field file".into()));
    }
    let mut meta = |key: &str| -> Result<String> {
        let l = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        match l.strip_prefix('#').and_then(|r| r.split_once('=')) {
            Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
            _ => Err(bad(format!("expected `# {key} = ...`, found `{l}`"))),
        }
    };
    let found = meta("kind")?;
    if found != kind {
        return Err(bad(format!("file holds a {found} field, expected {kind}")));
    }
    let nums = |s: &str| -> Result<Vec<f64>> { s.split(',').map(|x| x.trim().parse().map_err(|e| bad(format!("{e}")))).collect() };
    let lower = nums(&meta("lower")?)?;
    let upper = nums(&meta("upper")?)?;
    if lines.next() != Some(HEADER) {
        return Err(bad(format!("missing `{HEADER}` header")));
    }
    let dims = lines.next().ok_or_else(|| bad("missing grid row".into()))?;
    let f: Vec<&str> = dims.split(',').collect();
    if f.len() != 4 {
        return Err(bad(format!("grid row `{dims}` needs 4 fields")));
    }
    let int = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("grid row: {e}")));
    let (dim, n_space, n_time) = (int(f[0])?, int(f[1])?, int(f[2])?);
    let horizon: f64 = f[3].trim().parse().map_err(|e| bad(format!("grid row: {e}")))?;
    if dim != lower.len() {
        return Err(bad(format!("dim {dim} but {} box bounds", lower.len())));
    }
    let grid = GridSpec::new(BoxDomain::new(lower, upper)?, n_space, n_time, horizon)?;
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("value `{l}`: {e}"))))
        .collect::<Result<Vec<f64>>>()?;
    Ok((grid, values))
}

pub fn write_density(path: &Path, rho: &DensityField) -> Result<()> {
    fs::write(path, render("density", rho.grid(), rho.values())).map_err(|e| Error::io(path, e))
}

pub fn write_momentum(path: &Path, m: &MomentumField) -> Result<()> {
    fs::write(path, render("momentum", m.grid(), m.values())).map_err(|e| Error::io(path, e))
}

pub fn read_density(path: &Path) -> Result<DensityField> {
    let (g, v) = parse(path, "density")?;
    DensityField::new(g, v)
}

pub fn read_momentum(path: &Path) -> Result<MomentumField> {
    let (g, v) = parse(path, "momentum")?;
    MomentumField::new(g, v)
}
