//! Space-time convex solver for dynamic transport with a soft (KL) or hard
//! terminal condition.
//!
//! The discrete problem is
//!
//! ```text
//! min  Σ f_2(I(ρ, m)) ΔxΔt + α KL(ρ_T ‖ ρ_1)   s.t.   A(ρ, m) = 0,  ρ(0) = ρ_0
//! ```
//!
//! with `I` the centering map and `A` the staggered continuity operator. It
//! is solved by a Chambolle–Pock iteration. The dual step on the action block
//! is a projection onto `K_2` (the Moreau complement of `prox_bb`), the dual
//! step on the terminal block goes through the scalar KL prox, and the primal
//! step is the exact projection onto the continuity constraint, so every
//! iterate is feasible up to round-off.

mod cone;
mod operator;
mod projector;
mod prox;

use std::io::Write;

pub use cone::{project_cone_k2, prox_bb};
pub use prox::{prox_kl_scalar, prox_terminal};
use prox::{prox_gkl_scalar, renormalize};

use crate::error::{Error, Result};
use crate::functionals::{
    bb_action, kinetic_energy, kl_divergence, perspective_f, Alpha, ConeParams, ZERO_DENSITY,
};
use crate::measures::{DensityField, DensitySlice, GridSpec, MomentumField};
use operator::{norm2, Stencil};
use projector::ContinuityProjector;

/// Marginals are floored here before solving.
pub const MARGINAL_FLOOR: f64 = 1e-12;

/// Primal and dual state of the scheme.
#[derive(Debug, Clone)]
pub struct StaggeredVars {
    pub rho: DensityField,
    pub m: MomentumField,
    /// Continuity multiplier per time midpoint and cell.
    pub dual: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PdhgParams {
    /// `None` selects `0.9/‖K‖`.
    pub primal_step: Option<f64>,
    pub dual_step: Option<f64>,
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Relative change of the objective across one logging window below
    /// which, together with `residual_tol`, the run counts as converged.
    pub objective_tol: f64,
    pub alpha: Alpha,
    pub terminal_tol: f64,
    pub log_every: usize,
    /// Default steps are `τ = 0.9/(r‖K‖)`, `σ = 0.9 r/‖K‖`.
    pub step_ratio: f64,
}

impl Default for PdhgParams {
    fn default() -> Self {
        Self {
            primal_step: None,
            dual_step: None,
            max_iters: 200_000,
            residual_tol: 1e-6,
            objective_tol: 1e-7,
            alpha: Alpha::Infinite,
            terminal_tol: 1e-6,
            log_every: 20,
            step_ratio: 3.0,
        }
    }
}

impl PdhgParams {
    pub fn with_alpha(alpha: Alpha) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    /// Kinetic energy `∫∫|m|²/ρ`.
    pub action: f64,
    pub kl_or_gap: f64,
    pub residual: f64,
    /// `bb_action + α KL` (finite α) or `bb_action` (α = ∞).
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Kinetic energy `∫∫|m|²/ρ` (twice the `f_2` action); comparable to `W_2²`.
    pub action: f64,
    /// `KL(ρ_T ‖ ρ_1)` for finite α, terminal L¹ gap for α = ∞.
    pub kl_or_gap: f64,
    pub residual: f64,
    pub marginal_floor: f64,
    pub history: Vec<HistoryRow>,
}

impl SolveReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,action,kl_or_gap,residual")?;
        for r in &self.history {
            writeln!(w, "{},{:e},{:e},{:e}", r.iter, r.action, r.kl_or_gap, r.residual)?;
        }
        Ok(())
    }
}

fn continuity_values(grid: &GridSpec, rho: &[f64], m: &[f64]) -> Vec<f64> {
    let st = Stencil::new(grid);
    let mut out = vec![0.0; st.cont_len()];
    st.continuity(rho, m, &mut out);
    out
}

fn l2_residual(grid: &GridSpec, r: &[f64]) -> f64 {
    (norm2(r) * grid.cell_volume() * grid.dt()).sqrt()
}

/// Space-time L² norm of `∂_t ρ + div m` on the staggered stencil.
pub fn continuity_residual(vars: &StaggeredVars) -> Result<f64> {
    let g = vars.rho.grid();
    if g != vars.m.grid() {
        return Err(Error::GridMismatch("density and momentum grids differ".into()));
    }
    Ok(l2_residual(g, &continuity_values(g, vars.rho.values(), vars.m.values())))
}

fn prepare_marginal(s: &DensitySlice, grid: &GridSpec, name: &str) -> Result<DensitySlice> {
    if s.grid() != grid {
        return Err(Error::GridMismatch(format!("{name} lives on another grid")));
    }
    Ok(s.floored(MARGINAL_FLOOR))
}

/// `Σ r log(r/q) − r + q`, nonnegative for any positive `r`.
fn generalized_kl(r: &[f64], q: &[f64]) -> f64 {
    r.iter()
        .zip(q)
        .map(|(&r, &q)| if r > 0.0 { r * (r / q).ln() - r + q } else { q })
        .sum()
}

fn terminal_measure(rho_t: &DensitySlice, rho1: &DensitySlice, alpha: Alpha) -> Result<f64> {
    match alpha {
        Alpha::Finite(_) => Ok(kl_divergence(rho_t, rho1)?.value()),
        Alpha::Infinite => rho_t.l1_distance(rho1),
    }
}

/// Runs the primal-dual scheme from the linear interpolation of the
/// marginals with zero momentum and zero multipliers (projected onto the
/// continuity constraint before the first iteration).
pub fn solve_otflow_grid(
    rho0: &DensitySlice,
    rho1: &DensitySlice,
    grid: &GridSpec,
    params: &PdhgParams,
) -> Result<(StaggeredVars, SolveReport)> {
    if params.max_iters == 0 {
        return Err(Error::param("max_iters", "must be at least 1"));
    }
    if params.log_every == 0 {
        return Err(Error::param("log_every", "must be at least 1"));
    }
    if !(params.residual_tol > 0.0) {
        return Err(Error::param("residual_tol", "must be positive"));
    }
    if params.alpha == Alpha::Infinite && !(params.terminal_tol > 0.0) {
        return Err(Error::param("terminal_tol", "must be positive"));
    }
    let rho0 = prepare_marginal(rho0, grid, "rho0")?;
    let rho1 = prepare_marginal(rho1, grid, "rho1")?;
    let st = Stencil::new(grid);
    let (nc, nt, nf, d) = (st.nc, st.nt, st.nf, st.dim);
    let w = 1 + d;
    let finite_alpha = match params.alpha {
        Alpha::Finite(a) => Some(a),
        Alpha::Infinite => None,
    };
    let projector = ContinuityProjector::new(grid, finite_alpha.is_none());

    let norm_i = st.interp_norm(50, 0x5eed);
    // The terminal selector adds at most 1 to ‖K‖²; a few percent of slack
    // absorbs the power-iteration underestimate.
    let norm_k = 1.02 * (norm_i * norm_i + if finite_alpha.is_some() { 1.0 } else { 0.0 }).sqrt();
    let r = params.step_ratio;
    if !(r > 0.0) {
        return Err(Error::param("step_ratio", "must be positive"));
    }
    let tau = params.primal_step.unwrap_or(0.9 / (r * norm_k));
    let sigma = params.dual_step.unwrap_or(0.9 * r / norm_k);
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::param("primal_step", "steps must be positive"));
    }
    if tau * sigma * norm_k * norm_k > 1.0 {
        return Err(Error::param(
            "primal_step",
            format!("τσ‖K‖² = {:.4} exceeds 1", tau * sigma * norm_k * norm_k),
        ));
    }

    let init = DensityField::linear_interpolation(&rho0, &rho1)?;
    let mut rho = init.values().to_vec();
    let mut m = vec![0.0; nt * nf];
    let mut work = Vec::new();
    projector.project(&st, &mut rho, &mut m, &mut work);
    let mut rho_prev = rho.clone();
    let mut m_prev = m.clone();
    let mut rho_bar = rho.clone();
    let mut m_bar = m.clone();
    let mut y1 = vec![0.0; st.interp_len()];
    let mut y3 = vec![0.0; nc];
    let mut buf1 = vec![0.0; st.interp_len()];
    let mut g_rho = vec![0.0; rho.len()];
    let mut g_m = vec![0.0; m.len()];
    let mut proj = vec![0.0; w];
    let terminal = nt * nc..(nt + 1) * nc;
    let q = rho1.values().to_vec();

    // Progress is monitored on the points the dual steps evaluate F at:
    // z = (y_old + σ K x̄ − y_new)/σ lies in the domain of F even while the
    // nodes of x are still slightly negative in the tails.
    let cell_w = grid.cell_volume() * st.dt;
    // What gets returned: for finite α the terminal slice becomes the
    // (renormalized) point the terminal dual step evaluated and the field is
    // projected onto continuity with both ends fixed; then `clean`.
    let polisher = finite_alpha.map(|_| ContinuityProjector::new(grid, true));
    let assemble = |rho: &[f64], m: &[f64], z3: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut rc, mut mc) = (rho.to_vec(), m.to_vec());
        if let Some(pol) = &polisher {
            // Same as `prox_terminal` applied to the last terminal dual input.
            let mut zt = z3.to_vec();
            renormalize(&mut zt, grid.cell_volume())?;
            rc[terminal.clone()].copy_from_slice(&zt);
            pol.project(&st, &mut rc, &mut mc, &mut Vec::new());
        }
        clean(&st, &mut rc, &mut mc, grid.cell_volume())?;
        Ok((rc, mc))
    };
    // The logged residual is that of the assembled output, so a converged
    // run returns exactly what passed the test.
    let row_from = |iter: usize, b2: f64, term: f64, rho: &[f64], m: &[f64], z3: &[f64]| -> Result<HistoryRow> {
        let (rc, mc) = assemble(rho, m, z3)?;
        Ok(HistoryRow {
            iter,
            action: 2.0 * b2,
            kl_or_gap: term,
            residual: l2_residual(grid, &continuity_values(grid, &rc, &mc)),
            objective: match finite_alpha {
                Some(a) => b2 + a * term,
                None => b2,
            },
        })
    };
    let initial_kl = {
        let rt = DensitySlice::from_raw(grid.clone(), rho[terminal.clone()].to_vec());
        terminal_measure(&rt, &rho1, params.alpha)?
    };
    let initial_b2 = {
        let rf = DensityField::from_raw(grid.clone(), rho.clone());
        let mf = MomentumField::from_raw(grid.clone(), m.clone());
        bb_action(&rf, &mf)?.value()
    };
    let mut z3 = q.clone();

    let first = row_from(0, initial_b2, initial_kl, &rho, &m, &z3)?;
    let baseline = if first.objective.is_finite() { first.objective.abs().max(1.0) } else { 1.0 };
    let mut history = vec![first];
    let mut above = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=params.max_iters {
        iterations = it;
        // f_2 is the support function of K_2, so the prox of σF* on the
        // centering block is P_K (the Moreau complement of prox_bb).
        let log_now = it % params.log_every == 0 || it == params.max_iters;
        let mut b2 = 0.0;
        st.interpolate(&rho_bar, &m_bar, &mut buf1);
        for (yc, bc) in y1.chunks_exact_mut(w).zip(buf1.chunks_exact_mut(w)) {
            for (y, b) in yc.iter_mut().zip(bc.iter_mut()) {
                *y += sigma * *b;
                *b = *y;
            }
            cone::project_into(yc[0], &yc[1..], &mut proj)?;
            yc.copy_from_slice(&proj);
            if log_now {
                for (b, y) in bc.iter_mut().zip(yc.iter()) {
                    *b = (*b - y) / sigma;
                }
                b2 += perspective_f(ConeParams::QUADRATIC, bc[0], &bc[1..]).value();
            }
        }
        b2 *= cell_w;
        // Terminal block: F = (α/Δt) Σ (r log(r/q) − r + q) per unit ΔxΔt,
        // equal to the KL term on unit-mass slices but stationary at r = q.
        if let Some(a) = finite_alpha {
            let s = a / (st.dt * sigma);
            for (c, ((y, &xb), &qc)) in y3.iter_mut().zip(&rho_bar[terminal.clone()]).zip(&q).enumerate() {
                let v = *y + sigma * xb;
                let r = prox_gkl_scalar(v / sigma, qc, s)?;
                *y = v - sigma * r;
                z3[c] = r;
            }
        }

        rho_prev.copy_from_slice(&rho);
        m_prev.copy_from_slice(&m);
        g_rho.iter_mut().for_each(|v| *v = 0.0);
        g_m.iter_mut().for_each(|v| *v = 0.0);
        st.add_interp_adjoint(&y1, &mut g_rho, &mut g_m);
        if finite_alpha.is_some() {
            for (g, y) in g_rho[terminal.clone()].iter_mut().zip(&y3) {
                *g += y;
            }
        }
        let free_rho = if finite_alpha.is_some() { nc..(nt + 1) * nc } else { nc..nt * nc };
        for i in free_rho {
            rho[i] -= tau * g_rho[i];
        }
        for ((v, g), &keep) in m.iter_mut().zip(&g_m).zip(st.interior.iter().cycle()) {
            *v = if keep { *v - tau * g } else { 0.0 };
        }
        projector.project(&st, &mut rho, &mut m, &mut work);

        for i in 0..rho.len() {
            rho_bar[i] = 2.0 * rho[i] - rho_prev[i];
        }
        for i in 0..m.len() {
            m_bar[i] = 2.0 * m[i] - m_prev[i];
        }

        if log_now {
            let term = match finite_alpha {
                Some(_) => generalized_kl(&z3, &q) * grid.cell_volume(),
                None => 0.0,
            };
            let row = row_from(it, b2, term, &rho, &m, &z3)?;
            if row.objective.is_nan() {
                return Err(Error::Numerical(format!("objective became NaN at iteration {it}")));
            }
            above = if row.objective > 10.0 * baseline { above + 1 } else { 0 };
            if above >= 100 {
                return Err(Error::Numerical(format!(
                    "diverging: objective {:e} above 10x baseline {:e} for 100 logs",
                    row.objective, baseline
                )));
            }
            let prev = history.last().map(|r| r.objective).unwrap_or(f64::NAN);
            history.push(row);
            let rel = (row.objective - prev).abs() / row.objective.abs().max(1e-12);
            let terminal_ok = finite_alpha.is_some() || row.kl_or_gap <= params.terminal_tol;
            if row.residual <= params.residual_tol && rel <= params.objective_tol && terminal_ok {
                converged = true;
                break;
            }
        }
    }

    let (rho, m) = assemble(&rho, &m, &z3)?;
    finish(grid, &st, &projector, rho, m, &y1, &y3, &rho1, params, iterations, converged, history)
}

/// Clips the nodes at zero (they are nonnegative only in the limit),
/// restores unit mass per slice and drops momentum on empty cells, which
/// would make the action infinite. The mass fix-up is of the order of the
/// clipped tails and shows up in the reported residual.
fn clean(st: &Stencil, rho: &mut [f64], m: &mut [f64], dx: f64) -> Result<()> {
    for v in rho[st.nc..].iter_mut() {
        *v = v.max(0.0);
    }
    for slice in rho[st.nc..].chunks_mut(st.nc) {
        renormalize(slice, dx)?;
    }
    for k in 0..st.nt {
        for c in 0..st.nc {
            let rc = 0.5 * (rho[k * st.nc + c] + rho[(k + 1) * st.nc + c]);
            if rc <= ZERO_DENSITY {
                for a in 0..st.dim {
                    let (lo, hi) = st.faces[c * st.dim + a];
                    m[k * st.nf + lo] = 0.0;
                    m[k * st.nf + hi] = 0.0;
                }
            }
        }
    }
    Ok(())
}

/// Evaluates the report on exactly what is returned.
#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &GridSpec,
    st: &Stencil,
    projector: &ContinuityProjector,
    rho: Vec<f64>,
    m: Vec<f64>,
    y1: &[f64],
    y3: &[f64],
    rho1: &DensitySlice,
    params: &PdhgParams,
    iterations: usize,
    converged: bool,
    history: Vec<HistoryRow>,
) -> Result<(StaggeredVars, SolveReport)> {
    // Continuity multiplier: least-squares solution of Aᵀφ = −(Iᵀy1 + Sᵀy3).
    let mut g_rho = vec![0.0; rho.len()];
    let mut g_m = vec![0.0; m.len()];
    st.add_interp_adjoint(y1, &mut g_rho, &mut g_m);
    if !projector.fixed_terminal() {
        for (g, y) in g_rho[st.nt * st.nc..].iter_mut().zip(y3) {
            *g += y;
        }
    }
    st.mask(&mut g_rho, &mut g_m);
    if projector.fixed_terminal() {
        g_rho[st.nt * st.nc..].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut phi = vec![0.0; st.cont_len()];
    st.continuity(&g_rho, &g_m, &mut phi);
    projector.solve(&mut phi);
    phi.iter_mut().for_each(|v| *v = -*v);

    let rho = DensityField::from_raw(grid.clone(), rho);
    let m = MomentumField::from_raw(grid.clone(), m);
    let action = kinetic_energy(&rho, &m)?.value();
    let kl_or_gap = terminal_measure(&rho.terminal(), rho1, params.alpha)?;
    let vars = StaggeredVars { rho, m, dual: phi };
    let residual = continuity_residual(&vars)?;
    Ok((
        vars,
        SolveReport {
            iterations,
            converged,
            action,
            kl_or_gap,
            residual,
            marginal_floor: MARGINAL_FLOOR,
            history,
        },
    ))
}
