//! Monte Carlo formulation: a clipped network velocity, its flow map, the
//! per-sample loss `F_v = C + (2/α) L` and gradient-descent training.

mod flow;
mod mlp;
mod train;

use std::f64::consts::PI;

use rayon::prelude::*;

pub use flow::{integrate_field, integrate_flow, MaskedMlp, TrajectoryBatch, VelocityField, EXIT_TOLERANCE, HORIZON};
pub use mlp::{clip_params, mlp_velocity, MlpParams, Scratch};
pub use train::{
    read_checkpoint, read_history_csv, train, write_checkpoint, write_history_csv, EpochRow, Schedule, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use crate::measures::ParticleSet;
use flow::CHUNK;

/// Default RK4 step count on `[0, T]`.
pub const DEFAULT_STEPS: usize = 32;

/// Means of the terminal cost `C` and the kinetic integral `L`, and
/// `J = C_mean + (2/α) L_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub c_mean: f64,
    pub l_mean: f64,
    pub j: f64,
    pub alpha: f64,
    pub per_sample_c: Option<Vec<f64>>,
    pub per_sample_l: Option<Vec<f64>>,
}

impl LossBreakdown {
    fn new(c_mean: f64, l_mean: f64, alpha: f64) -> Self {
        Self {
            c_mean,
            l_mean,
            j: c_mean + kinetic_weight(alpha) * l_mean,
            alpha,
            per_sample_c: None,
            per_sample_l: None,
        }
    }
}

fn kinetic_weight(alpha: f64) -> f64 {
    2.0 / alpha
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::param("alpha", format!("{alpha} must be positive and finite")))
    }
}

/// `C = −ℓ + ½|z|² + (d/2) log 2π` at the terminal state.
pub fn terminal_cost(z: &[f64], logdet: f64) -> f64 {
    -logdet + 0.5 * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// Per-sample `C`, `L` and their weighted means.
pub fn loss_terms(traj: &TrajectoryBatch, alpha: f64) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    let n = traj.len();
    let c: Vec<f64> = (0..n).map(|i| terminal_cost(traj.terminal(i), traj.terminal_logdet(i))).collect();
    let l: Vec<f64> = (0..n).map(|i| traj.terminal_kinetic(i)).collect();
    let cm = c.iter().zip(&traj.weights).map(|(a, w)| a * w).sum();
    let lm = l.iter().zip(&traj.weights).map(|(a, w)| a * w).sum();
    let mut out = LossBreakdown::new(cm, lm, alpha);
    out.per_sample_c = Some(c);
    out.per_sample_l = Some(l);
    Ok(out)
}

fn check_batch(batch: &ParticleSet, params: &MlpParams, n_steps: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::param("batch", "needs at least one point"));
    }
    if n_steps == 0 {
        return Err(Error::param("n_steps", "need at least one step"));
    }
    if batch.dim() != params.dim() {
        return Err(Error::InvalidSpec(format!(
            "{}-dimensional batch for a {}-dimensional network",
            batch.dim(),
            params.dim()
        )));
    }
    match batch.iter().find(|p| !params.domain().contains(p)) {
        Some(p) => Err(Error::Domain { point: p.to_vec() }),
        None => Ok(()),
    }
}

/// Empirical loss `J_N` over a batch, streaming (no paths or per-sample
/// terms are kept).
pub fn loss_jn(batch: &ParticleSet, params: &MlpParams, alpha: f64, n_steps: usize) -> Result<LossBreakdown> {
    check_alpha(alpha)?;
    check_batch(batch, params, n_steps)?;
    let d = params.dim();
    let f = MaskedMlp(params);
    let sums: Vec<Result<(f64, f64)>> = batch
        .points()
        .par_chunks(CHUNK * d)
        .zip(batch.weights().par_chunks(CHUNK))
        .map(|(pts, ws)| {
            let mut s = f.scratch();
            let mut state = vec![0.0; d + 2];
            let (mut c, mut l) = (0.0, 0.0);
            for (x, w) in pts.chunks(d).zip(ws) {
                flow::terminal_state(&f, &mut s, x, n_steps, &mut state)?;
                c += w * terminal_cost(&state[..d], state[d]);
                l += w * state[d + 1];
            }
            Ok((c, l))
        })
        .collect();
    let (mut c, mut l) = (0.0, 0.0);
    for r in sums {
        let (a, b) = r?;
        c += a;
        l += b;
    }
    Ok(LossBreakdown::new(c, l, alpha))
}

/// `J_N` and its exact gradient through the discrete RK4 flow.
pub fn grad_loss(batch: &ParticleSet, params: &MlpParams, alpha: f64, n_steps: usize) -> Result<(LossBreakdown, Vec<f64>)> {
    check_alpha(alpha)?;
    check_batch(batch, params, n_steps)?;
    let d = params.dim();
    let np = params.n_params();
    let kw = kinetic_weight(alpha);
    let parts: Vec<Result<(f64, f64, Vec<f64>)>> = batch
        .points()
        .par_chunks(CHUNK * d)
        .zip(batch.weights().par_chunks(CHUNK))
        .map(|(pts, ws)| {
            let mut s = Scratch::new(params);
            let mut g = vec![0.0; np];
            let mut tape = Vec::new();
            let (mut c, mut l) = (0.0, 0.0);
            for (x, &w) in pts.chunks(d).zip(ws) {
                let (ci, li) = flow::sample_loss_grad(params, &mut s, x, n_steps, kw, w, &mut g, &mut tape)?;
                c += w * ci;
                l += w * li;
            }
            Ok((c, l, g))
        })
        .collect();
    let (mut c, mut l) = (0.0, 0.0);
    let mut grad = vec![0.0; np];
    for r in parts {
        let (a, b, g) = r?;
        c += a;
        l += b;
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += y);
    }
    Ok((LossBreakdown::new(c, l, alpha), grad))
}
