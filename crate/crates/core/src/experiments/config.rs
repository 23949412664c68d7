//! Declarative study configuration (TOML). Every error names the offending
//! key as `section.key`.

use std::fs;
use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::functionals::Alpha;
use crate::grid_solver::PdhgParams;
use crate::measures::{BoxDomain, Distribution, GaussianSpec, GridSpec};
use crate::neural_flow::{MlpParams, Schedule, DEFAULT_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    AlphaSweep,
    DataLimit,
    W1Rate,
    Straightness,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::AlphaSweep => "alpha_sweep",
            StudyKind::DataLimit => "data_limit",
            StudyKind::W1Rate => "w1_rate",
            StudyKind::Straightness => "straightness",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [StudyKind::AlphaSweep, StudyKind::DataLimit, StudyKind::W1Rate, StudyKind::Straightness]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Grid problem: truncated Gaussian marginals on a uniform box grid.
#[derive(Debug, Clone)]
pub struct GridProblem {
    pub grid: GridSpec,
    pub source: GaussianSpec,
    pub target: GaussianSpec,
    /// Solver settings; `alpha` is overridden per sweep point in studies.
    pub pdhg: PdhgParams,
}

/// Monte Carlo problem: data law in a box, network and training schedule.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub domain: BoxDomain,
    pub data: Distribution,
    pub hidden: Vec<usize>,
    pub clip_radius: f64,
    pub init_scale: f64,
    pub n_steps: usize,
    pub alpha: f64,
    pub heldout: usize,
    /// Held-out points used for the per-epoch history line.
    pub monitor: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub schedule: Schedule,
}

impl FlowProblem {
    pub fn init_params(&self, seed: u64) -> Result<MlpParams> {
        MlpParams::random(self.domain.clone(), &self.hidden, self.clip_radius, self.init_scale, seed)
    }
}

/// Empirical W1 study: centred isotropic Gaussian in the unit cube.
#[derive(Debug, Clone)]
pub struct W1Problem {
    pub dims: Vec<usize>,
    pub stddev: f64,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub sweep: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// File name inside the output directory.
    pub output: String,
    pub grid: Option<GridProblem>,
    pub flow: Option<FlowProblem>,
    pub w1: Option<W1Problem>,
    /// SHA-256 of the config text, lowercase hex.
    pub config_hash: String,
}

fn err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Typed access to one table with dotted key names in errors.
pub(crate) struct Section<'a> {
    prefix: String,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn key(&self, k: &str) -> String {
        if self.prefix.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.prefix)
        }
    }

    pub fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.table.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(err(self.key(k), "unknown key")),
            None => Ok(()),
        }
    }

    fn num(&self, k: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(err(self.key(k), format!("expected a number, found {}", v.type_str()))),
        }
    }

    pub fn f64_or(&self, k: &str, default: f64) -> Result<f64> {
        self.table.get(k).map_or(Ok(default), |v| self.num(k, v))
    }

    pub fn positive(&self, k: &str, default: f64) -> Result<f64> {
        let v = self.f64_or(k, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(err(self.key(k), format!("{v} must be positive")))
        }
    }

    pub fn usize_or(&self, k: &str, default: usize) -> Result<usize> {
        match self.table.get(k) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(v) => Err(err(self.key(k), format!("expected a nonnegative integer, found {v}"))),
        }
    }

    pub fn u64_req(&self, k: &str) -> Result<u64> {
        match self.table.get(k) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(v) => Err(err(self.key(k), format!("expected a nonnegative integer, found {v}"))),
            None => Err(err(self.key(k), "missing")),
        }
    }

    pub fn str_or(&self, k: &str, default: &str) -> Result<String> {
        match self.table.get(k) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(err(self.key(k), format!("expected a string, found {}", v.type_str()))),
        }
    }

    fn array(&self, k: &str) -> Result<Option<&'a Vec<Value>>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Array(a)) => Ok(Some(a)),
            Some(v) => Err(err(self.key(k), format!("expected an array, found {}", v.type_str()))),
        }
    }

    pub fn vec_f64(&self, k: &str) -> Result<Option<Vec<f64>>> {
        self.array(k)?.map(|a| a.iter().map(|v| self.num(k, v)).collect()).transpose()
    }

    pub fn vec_usize(&self, k: &str) -> Result<Option<Vec<usize>>> {
        self.array(k)?
            .map(|a| {
                a.iter()
                    .map(|v| match v {
                        Value::Integer(i) if *i > 0 => Ok(*i as usize),
                        _ => Err(err(self.key(k), format!("expected positive integers, found {v}"))),
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn sub(&self, k: &str) -> Result<Option<Section<'a>>> {
        match self.table.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section { prefix: self.key(k), table: t })),
            Some(v) => Err(err(self.key(k), format!("expected a table, found {}", v.type_str()))),
        }
    }

    pub fn alpha_or_inf(&self, k: &str) -> Result<Alpha> {
        match self.table.get(k) {
            None => Ok(Alpha::Infinite),
            Some(Value::String(s)) if s == "inf" => Ok(Alpha::Infinite),
            Some(v) => {
                let a = self.num(k, v)?;
                Alpha::new(a).map_err(|e| err(self.key(k), e.to_string()))
            }
        }
    }
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| text[..s.start].lines().count().max(1));
        err(
            line.map_or("<document>".to_string(), |l| format!("<line {l}>")),
            e.message().to_string(),
        )
    })
}

fn root(table: &Table) -> Section<'_> {
    Section { prefix: String::new(), table }
}

fn gaussian(s: &Section, prefix: &str, dim: usize, default_mean: f64, stddev: f64) -> Result<GaussianSpec> {
    let key = format!("{prefix}_mean");
    let mean = s.vec_f64(&key)?.unwrap_or_else(|| vec![default_mean; dim]);
    if mean.len() != dim {
        return Err(err(s.key(&key), format!("needs {dim} coordinates")));
    }
    Ok(GaussianSpec::new(mean, stddev))
}

impl GridProblem {
    /// Defaults: 1-D, 64 cells, 32 steps, means 0.35 → 0.65, sd 0.1.
    pub(crate) fn from_section(s: &Section) -> Result<Self> {
        s.only(&[
            "dim", "n_space", "n_time", "stddev", "source_mean", "target_mean", "alpha", "max_iters", "residual_tol",
            "objective_tol", "terminal_tol", "step_ratio", "log_every",
        ])?;
        let dim = s.usize_or("dim", 1)?;
        if !(1..=3).contains(&dim) {
            return Err(err(s.key("dim"), format!("{dim} must be 1, 2 or 3")));
        }
        let grid = GridSpec::unit(dim, s.usize_or("n_space", 64)?, s.usize_or("n_time", 32)?)
            .map_err(|e| err(s.key("n_space"), e.to_string()))?;
        let sd = s.positive("stddev", 0.1)?;
        let source = gaussian(s, "source", dim, 0.35, sd)?;
        let target = gaussian(s, "target", dim, 0.65, sd)?;
        for (k, g) in [("source_mean", &source), ("target_mean", &target)] {
            g.validate(grid.domain()).map_err(|e| err(s.key(k), e.to_string()))?;
        }
        let pdhg = PdhgParams {
            max_iters: s.usize_or("max_iters", 200_000)?,
            residual_tol: s.positive("residual_tol", 1e-5)?,
            objective_tol: s.positive("objective_tol", 1e-7)?,
            terminal_tol: s.positive("terminal_tol", 1e-6)?,
            step_ratio: s.positive("step_ratio", 3.0)?,
            log_every: s.usize_or("log_every", 20)?.max(1),
            alpha: s.alpha_or_inf("alpha")?,
            ..PdhgParams::default()
        };
        Ok(Self { grid, source, target, pdhg })
    }
}

impl FlowProblem {
    /// `lower`/`upper` default to `[-4, 4]^d` with `d` the length of the
    /// first component mean; components are `{ weight, mean, stddev }`.
    pub(crate) fn from_section(s: &Section) -> Result<Self> {
        s.only(&[
            "lower", "upper", "components", "hidden", "clip_radius", "init_scale", "n_steps", "alpha", "heldout",
            "monitor", "train_size", "eval_size", "epochs", "steps_per_epoch", "batch_size", "learning_rate", "decay",
        ])?;
        let comps = s.array("components")?.ok_or_else(|| err(s.key("components"), "missing"))?;
        if comps.is_empty() {
            return Err(err(s.key("components"), "needs at least one component"));
        }
        let mut parsed = Vec::new();
        for (i, c) in comps.iter().enumerate() {
            let t = c.as_table().ok_or_else(|| err(s.key("components"), format!("entry {i} is not a table")))?;
            let cs = Section { prefix: format!("{}[{i}]", s.key("components")), table: t };
            cs.only(&["weight", "mean", "stddev"])?;
            let mean = cs.vec_f64("mean")?.ok_or_else(|| err(cs.key("mean"), "missing"))?;
            parsed.push((cs.f64_or("weight", 1.0)?, GaussianSpec::new(mean, cs.positive("stddev", 0.5)?)));
        }
        let d = parsed[0].1.dim();
        if d == 0 || parsed.iter().any(|(_, g)| g.dim() != d) {
            return Err(err(s.key("components"), "component means must share one nonzero dimension"));
        }
        let lower = s.vec_f64("lower")?.unwrap_or_else(|| vec![-4.0; d]);
        let upper = s.vec_f64("upper")?.unwrap_or_else(|| vec![4.0; d]);
        if lower.len() != d || upper.len() != d {
            return Err(err(s.key("lower"), format!("box bounds need {d} coordinates")));
        }
        let domain = BoxDomain::new(lower, upper).map_err(|e| err(s.key("lower"), e.to_string()))?;
        let data = if parsed.len() == 1 {
            Distribution::Gaussian(parsed.pop().unwrap().1)
        } else {
            Distribution::Mixture(parsed)
        };
        data.validate(&domain).map_err(|e| err(s.key("components"), e.to_string()))?;
        let hidden = s.vec_usize("hidden")?.unwrap_or_else(|| vec![8]);
        let def = Schedule::default();
        let schedule = Schedule {
            epochs: s.usize_or("epochs", def.epochs)?,
            steps_per_epoch: s.usize_or("steps_per_epoch", def.steps_per_epoch)?,
            batch_size: s.usize_or("batch_size", def.batch_size)?,
            learning_rate: s.f64_or("learning_rate", def.learning_rate)?,
            decay: s.positive("decay", def.decay)?,
        };
        for (k, v) in [("epochs", schedule.epochs), ("steps_per_epoch", schedule.steps_per_epoch), ("batch_size", schedule.batch_size)] {
            if v == 0 {
                return Err(err(s.key(k), "must be positive"));
            }
        }
        if !(schedule.learning_rate >= 0.0) || schedule.decay > 1.0 {
            return Err(err(s.key("learning_rate"), "needs learning_rate ≥ 0 and decay ≤ 1"));
        }
        let p = Self {
            domain,
            data,
            hidden,
            clip_radius: s.positive("clip_radius", 10.0)?,
            init_scale: s.positive("init_scale", 0.5)?,
            n_steps: s.usize_or("n_steps", DEFAULT_STEPS)?,
            alpha: s.positive("alpha", 10.0)?,
            heldout: s.usize_or("heldout", 100_000)?,
            monitor: s.usize_or("monitor", 4096)?,
            train_size: s.usize_or("train_size", 1024)?,
            eval_size: s.usize_or("eval_size", 2000)?,
            schedule,
        };
        for (k, v) in [("n_steps", p.n_steps), ("heldout", p.heldout), ("monitor", p.monitor), ("train_size", p.train_size), ("eval_size", p.eval_size)] {
            if v == 0 {
                return Err(err(s.key(k), "must be positive"));
            }
        }
        Ok(p)
    }
}

impl W1Problem {
    fn from_section(s: &Section) -> Result<Self> {
        s.only(&["dims", "stddev"])?;
        let dims = s.vec_usize("dims")?.unwrap_or_else(|| vec![1, 2, 3]);
        if dims.is_empty() || dims.iter().any(|&d| d > 3) {
            return Err(err(s.key("dims"), "dimensions must lie in 1..=3"));
        }
        let stddev = s.positive("stddev", 0.15)?;
        for &d in &dims {
            GaussianSpec::new(vec![0.5; d], stddev)
                .validate(&BoxDomain::unit(d))
                .map_err(|e| err(s.key("stddev"), e.to_string()))?;
        }
        Ok(Self { dims, stddev })
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = parse_table(text)?;
        let r = root(&table);
        r.only(&["study", "sweep", "trials", "seed", "output", "grid", "flow", "w1"])?;
        let name = r.str_or("study", "")?;
        let kind = StudyKind::parse(&name).ok_or_else(|| {
            err("study", format!("`{name}` is not one of alpha_sweep, data_limit, w1_rate, straightness"))
        })?;
        let sweep = r.vec_f64("sweep")?.ok_or_else(|| err("sweep", "missing"))?;
        if sweep.is_empty() || sweep.windows(2).any(|w| !(w[1] > w[0])) || sweep.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(err("sweep", "values must be positive, finite and strictly increasing"));
        }
        if matches!(kind, StudyKind::DataLimit | StudyKind::W1Rate) && sweep.iter().any(|v| v.fract() != 0.0 || *v < 2.0) {
            return Err(err("sweep", "sample sizes must be integers ≥ 2"));
        }
        let trials = r.usize_or("trials", 1)?;
        if trials == 0 {
            return Err(err("trials", "must be at least 1"));
        }
        let seed = r.u64_req("seed")?;
        let output = r.str_or("output", &format!("{}.csv", kind.name()))?;
        let grid = r.sub("grid")?.map(|s| GridProblem::from_section(&s)).transpose()?;
        let flow = r.sub("flow")?.map(|s| FlowProblem::from_section(&s)).transpose()?;
        let w1 = r.sub("w1")?.map(|s| W1Problem::from_section(&s)).transpose()?;
        let need = |present: bool, key: &str| if present { Ok(()) } else { Err(err(key, format!("required by study `{name}`"))) };
        match kind {
            StudyKind::AlphaSweep => need(grid.is_some(), "grid")?,
            StudyKind::DataLimit | StudyKind::Straightness => need(flow.is_some(), "flow")?,
            StudyKind::W1Rate => {}
        }
        if kind == StudyKind::AlphaSweep && grid.as_ref().unwrap().grid.dim() > 2 {
            return Err(err("grid.dim", "the sweep needs an exact oracle: 1-D or 2-D"));
        }
        let w1 = match (kind, w1) {
            (StudyKind::W1Rate, None) => Some(W1Problem::from_section(&Section { prefix: "w1".into(), table: &Table::new() })?),
            (_, w) => w,
        };
        Ok(Self {
            kind,
            sweep,
            trials,
            seed,
            output,
            grid,
            flow,
            w1,
            config_hash: sha256_hex(text.as_bytes()),
        })
    }
}

/// Single-run configuration for `solve-grid` and `train`. Accepts study
/// files too; only `seed`, `[grid]` and `[flow]` are read.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: Option<GridProblem>,
    pub flow: Option<FlowProblem>,
    pub config_hash: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = parse_table(text)?;
        let r = root(&table);
        r.only(&["study", "sweep", "trials", "seed", "output", "grid", "flow", "w1"])?;
        Ok(Self {
            seed: r.u64_req("seed")?,
            grid: r.sub("grid")?.map(|s| GridProblem::from_section(&s)).transpose()?,
            flow: r.sub("flow")?.map(|s| FlowProblem::from_section(&s)).transpose()?,
            config_hash: sha256_hex(text.as_bytes()),
        })
    }
}
