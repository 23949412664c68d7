//! Clipped gradient descent, training history and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{grad_loss, loss_jn, MlpParams};
use crate::error::{Error, Result};
use crate::measures::{BoxDomain, ParticleSet};

/// Step size `learning_rate · decay^epoch`, `steps_per_epoch` mini-batch
/// updates per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 20,
            steps_per_epoch: 10,
            batch_size: 128,
            learning_rate: 0.5,
            decay: 0.9,
        }
    }
}

impl Schedule {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::param("schedule", "epochs, steps and batch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", format!("{} must be nonnegative", self.learning_rate)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::param("decay", format!("{} must lie in (0, 1]", self.decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub n_steps: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

/// One history line. Epoch 0 is the initial network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub j_train: f64,
    pub j_heldout: f64,
    /// Gradient norm on the fixed monitoring batch (the first
    /// `batch_size` training points).
    pub grad_norm: f64,
    pub param_norm: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: Vec<EpochRow>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub failure: Option<Error>,
}

fn monitor(set: &ParticleSet, n: usize) -> Result<ParticleSet> {
    if n >= set.len() {
        return Ok(set.clone());
    }
    ParticleSet::uniform(set.dim(), set.points()[..n * set.dim()].to_vec())
}

fn subset(set: &ParticleSet, idx: &[usize]) -> Result<ParticleSet> {
    let d = set.dim();
    let mut pts = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        pts.extend_from_slice(set.point(i));
    }
    ParticleSet::uniform(d, pts)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mini-batch gradient descent on `J_N(train_set)`, clipping into `Θ_R`
/// after every update. Batches are drawn without replacement from a
/// ChaCha stream seeded by `cfg.seed`, so equal inputs give equal output.
pub fn train(train_set: &ParticleSet, heldout: &ParticleSet, init: &MlpParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.schedule.validate()?;
    let sch = &cfg.schedule;
    let mon = monitor(train_set, sch.batch_size)?;
    let mut params = init.clone();
    params.clip_in_place();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(sch.epochs + 1);

    let row = |epoch: usize, p: &MlpParams| -> Result<EpochRow> {
        let j_train = loss_jn(train_set, p, cfg.alpha, cfg.n_steps)?.j;
        let j_heldout = loss_jn(heldout, p, cfg.alpha, cfg.n_steps)?.j;
        let (_, g) = grad_loss(&mon, p, cfg.alpha, cfg.n_steps)?;
        Ok(EpochRow {
            epoch,
            j_train,
            j_heldout,
            grad_norm: norm(&g),
            param_norm: p.norm(),
        })
    };
    let finite = |r: &EpochRow| r.j_train.is_finite() && r.j_heldout.is_finite() && r.grad_norm.is_finite();

    let r0 = row(0, &params)?;
    if !finite(&r0) {
        return Ok(TrainOutcome {
            params,
            history: vec![r0],
            failure: Some(Error::Numerical("non-finite loss at the initial network".into())),
        });
    }
    history.push(r0);
    for epoch in 1..=sch.epochs {
        let lr = sch.learning_rate * sch.decay.powi(epoch as i32 - 1);
        for step in 0..sch.steps_per_epoch {
            let batch = if sch.batch_size >= train_set.len() {
                train_set.clone()
            } else {
                subset(train_set, &index::sample(&mut rng, train_set.len(), sch.batch_size).into_vec())?
            };
            let (lb, g) = match grad_loss(&batch, &params, cfg.alpha, cfg.n_steps) {
                Ok(v) => v,
                Err(e) if e.is_numerical() => return Ok(TrainOutcome { params, history, failure: Some(e) }),
                Err(e) => return Err(e),
            };
            if !lb.j.is_finite() || g.iter().any(|v| !v.is_finite()) {
                let e = Error::Numerical(format!("non-finite loss in epoch {epoch}, step {step}"));
                return Ok(TrainOutcome { params, history, failure: Some(e) });
            }
            if lr > 0.0 {
                let theta: Vec<f64> = params.theta().iter().zip(&g).map(|(t, gi)| t - lr * gi).collect();
                params = params.with_theta(theta)?;
                params.clip_in_place();
            }
        }
        let r = row(epoch, &params)?;
        let ok = finite(&r);
        history.push(r);
        if !ok {
            let e = Error::Numerical(format!("non-finite loss after epoch {epoch}"));
            return Ok(TrainOutcome { params, history, failure: Some(e) });
        }
    }
    Ok(TrainOutcome { params, history, failure: None })
}

const HISTORY_HEADER: &str = "epoch,J_train,J_heldout,grad_norm,param_norm";

/// `comments` become leading `# ` lines, which the reader skips.
pub fn write_history_csv(path: &Path, rows: &[EpochRow], comments: &[String]) -> Result<()> {
    let mut s = String::new();
    for c in comments {
        writeln!(s, "# {c}").unwrap();
    }
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.epoch, r.j_train, r.j_heldout, r.grad_norm, r.param_norm).unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Parse { path: path.to_path_buf(), reason };
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(bad("missing history header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {}: expected 5 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", i + 1)));
            Ok(EpochRow {
                epoch: f[0].parse().map_err(|e| bad(format!("row {}: {e}", i + 1)))?,
                j_train: num(f[1])?,
                j_heldout: num(f[2])?,
                grad_norm: num(f[3])?,
                param_norm: num(f[4])?,
            })
        })
        .collect()
}

const CHECKPOINT_MAGIC: &str = "# otflow checkpoint v1";

fn join(v: &[impl ToString]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Text header (architecture, box, R, seed) followed by one parameter per
/// line. Values are written in shortest round-trip form.
pub fn write_checkpoint(path: &Path, params: &MlpParams, seed: u64) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(s, "dims = {}", join(params.dims())).unwrap();
    writeln!(s, "lower = {}", join(&params.domain().lower)).unwrap();
    writeln!(s, "upper = {}", join(&params.domain().upper)).unwrap();
    writeln!(s, "clip_radius = {}", params.clip_radius()).unwrap();
    writeln!(s, "seed = {seed}").unwrap();
    writeln!(s, "n_params = {}", params.n_params()).unwrap();
    for v in params.theta() {
        writeln!(s, "{v}").unwrap();
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Returns the parameters and the recorded seed.
pub fn read_checkpoint(path: &Path) -> Result<(MlpParams, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Parse { path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not an otflow checkpoint".into()));
    }
    let mut header = |key: &str| -> Result<String> {
        let l = lines.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
        match l.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
            _ => Err(bad(format!("expected `{key} = ...`, found `{l}`"))),
        }
    };
    let list = |s: &str| -> Result<Vec<f64>> {
        s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| bad(e.to_string()))).collect()
    };
    let dims: Vec<usize> = header("dims")?
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    let lower = list(&header("lower")?)?;
    let upper = list(&header("upper")?)?;
    let r: f64 = header("clip_radius")?.parse().map_err(|e| bad(format!("clip_radius: {e}")))?;
    let seed: u64 = header("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?;
    let n: usize = header("n_params")?.parse().map_err(|e| bad(format!("n_params: {e}")))?;
    let theta: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    if theta.len() != n {
        return Err(bad(format!("header promises {n} parameters, file has {}", theta.len())));
    }
    if dims.len() < 2 || dims[0] != lower.len() + 1 || dims[dims.len() - 1] != lower.len() {
        return Err(bad(format!("dims {dims:?} do not fit a {}-dimensional box", lower.len())));
    }
    let p = MlpParams::zeros(BoxDomain::new(lower, upper)?, &dims[1..dims.len() - 1], r)?;
    Ok((p.with_theta(theta)?, seed))
}
