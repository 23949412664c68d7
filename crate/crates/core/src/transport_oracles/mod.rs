//! Ground-truth transport values used to check both solvers.
//!
//! 1-D grid slices are compared through piecewise-linear quantile functions
//! built from the cell CDFs (mass spread uniformly inside each cell), which
//! makes `w2_squared_1d` and `displacement_interpolation_1d` exact for that
//! model. Empirical measures go through exact assignment or exact
//! transportation solvers, guarded by `MAX_PLAN_ENTRIES`.

mod assignment;

pub use assignment::{hungarian, min_cost_transport};

use crate::error::{Error, Result};
use crate::measures::{DensitySlice, GaussianSpec, ParticleSet, MASS_TOL};

/// Largest `N·M` the exact solvers accept.
pub const MAX_PLAN_ENTRIES: usize = 1_000_000;

/// Dense coupling between two weighted point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n_source: usize,
    pub n_target: usize,
    /// Row-major `n_source × n_target`.
    pub coupling: Vec<f64>,
    pub cost: f64,
}

impl TransportPlan {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.n_target + j]
    }

    /// Largest deviation of row/column sums from the given marginals.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, ai) in a.iter().enumerate() {
            let s: f64 = self.coupling[i * self.n_target..(i + 1) * self.n_target].iter().sum();
            worst = worst.max((s - ai).abs());
        }
        for (j, bj) in b.iter().enumerate() {
            let s: f64 = (0..self.n_source).map(|i| self.entry(i, j)).sum();
            worst = worst.max((s - bj).abs());
        }
        worst
    }
}

/// Cost exponent of the ground cost `|x − y|^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostExponent {
    One,
    Two,
}

impl CostExponent {
    fn apply(self, d2: f64) -> f64 {
        match self {
            CostExponent::One => d2.sqrt(),
            CostExponent::Two => d2,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact optimal coupling: Hungarian assignment for equal sizes with uniform
/// weights, successive shortest paths otherwise.
pub fn discrete_ot_exact(a: &ParticleSet, b: &ParticleSet, exponent: CostExponent) -> Result<TransportPlan> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidSpec(format!(
            "point sets have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let (n, m) = (a.len(), b.len());
    if n.saturating_mul(m) > MAX_PLAN_ENTRIES {
        return Err(Error::ScaleGuard {
            n,
            m,
            limit: MAX_PLAN_ENTRIES,
        });
    }
    let costs: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| exponent.apply(sq_dist(x, y))))
        .collect();
    let coupling = if n == m && a.has_uniform_weights() && b.has_uniform_weights() {
        let assign = hungarian(&costs, n);
        let mut c = vec![0.0; n * n];
        for (i, j) in assign.into_iter().enumerate() {
            c[i * n + j] = 1.0 / n as f64;
        }
        c
    } else {
        min_cost_transport(&costs, a.weights(), b.weights())
    };
    let cost = coupling.iter().zip(&costs).map(|(g, c)| g * c).sum();
    let plan = TransportPlan {
        n_source: n,
        n_target: m,
        coupling,
        cost,
    };
    let err = plan.marginal_error(a.weights(), b.weights());
    if err > 1e-9 {
        return Err(Error::Numerical(format!("transport plan violates marginals by {err:e}")));
    }
    Ok(plan)
}

/// Sorted-pairing cost `(1/n) Σ |x_(i) − y_(i)|^p` for equal-size 1-D sets.
pub fn sorted_pairing_cost(a: &ParticleSet, b: &ParticleSet, exponent: CostExponent) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 || a.len() != b.len() {
        return Err(Error::InvalidSpec("sorted pairing needs equal-size 1-D sets".into()));
    }
    let mut x = a.points().to_vec();
    let mut y = b.points().to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    Ok(x.iter()
        .zip(&y)
        .map(|(p, q)| exponent.apply((p - q) * (p - q)))
        .sum::<f64>()
        / n)
}

/// Exact `W_1` between two empirical measures.
pub fn w1_empirical(a: &ParticleSet, b: &ParticleSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidSpec("point sets have different dimensions".into()));
    }
    if a.dim() == 1 && a.len() == b.len() && a.has_uniform_weights() && b.has_uniform_weights() {
        return sorted_pairing_cost(a, b, CostExponent::One);
    }
    Ok(discrete_ot_exact(a, b, CostExponent::One)?.cost)
}

/// `|μ_a − μ_b|² + d (σ_a − σ_b)²` for untruncated isotropic Gaussians.
pub fn gaussian_w2_closed_form(a: &GaussianSpec, b: &GaussianSpec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidSpec("Gaussians have different dimensions".into()));
    }
    Ok(sq_dist(&a.mean, &b.mean) + a.dim() as f64 * (a.stddev - b.stddev).powi(2))
}

/// Piecewise-linear quantile function of a 1-D slice.
struct Quantile {
    lower: f64,
    h: f64,
    /// CDF at cell edges, `cdf[0] = 0`, `cdf[n] = 1`.
    cdf: Vec<f64>,
    mass: Vec<f64>,
}

impl Quantile {
    fn new(s: &DensitySlice) -> Result<Self> {
        let g = s.grid();
        if g.dim() != 1 {
            return Err(Error::InvalidSpec("1-D oracle on a multi-dimensional slice".into()));
        }
        let total = s.mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidSpec(format!("slice mass {total} is not 1")));
        }
        let mass: Vec<f64> = s.cell_masses().into_iter().map(|m| m / total).collect();
        let mut cdf = Vec::with_capacity(mass.len() + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for m in &mass {
            acc += m;
            cdf.push(acc);
        }
        let n = mass.len();
        cdf[n] = 1.0;
        Ok(Self {
            lower: g.domain().lower[0],
            h: g.spacing(0),
            cdf,
            mass,
        })
    }

    /// Value at `u` using cell `j`, which must satisfy `cdf[j] <= u <= cdf[j+1]`.
    fn eval_in(&self, j: usize, u: f64) -> f64 {
        let frac = if self.mass[j] > 0.0 {
            ((u - self.cdf[j]) / self.mass[j]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.lower + (j as f64 + frac) * self.h
    }
}

/// Merged breakpoints of two quantile functions; each piece carries the cell
/// of `a` and of `b` on which both are linear.
fn merged_pieces(qa: &Quantile, qb: &Quantile) -> Vec<(f64, f64, usize, usize)> {
    let n = qa.mass.len();
    let m = qb.mass.len();
    let mut pieces = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    while i < n && j < m {
        let ua = qa.cdf[i + 1];
        let ub = qb.cdf[j + 1];
        let next = ua.min(ub);
        if next > u {
            pieces.push((u, next, i, j));
            u = next;
        }
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    pieces
}

/// `∫₀¹ |Q_a(u) − Q_b(u)|² du` for two 1-D slices on the same grid.
pub fn w2_squared_1d(rho_a: &DensitySlice, rho_b: &DensitySlice) -> Result<f64> {
    if rho_a.grid() != rho_b.grid() {
        return Err(Error::GridMismatch("1-D oracle arguments differ in grid".into()));
    }
    let qa = Quantile::new(rho_a)?;
    let qb = Quantile::new(rho_b)?;
    let mut acc = 0.0;
    for (u0, u1, i, j) in merged_pieces(&qa, &qb) {
        let d0 = qa.eval_in(i, u0) - qb.eval_in(j, u0);
        let d1 = qa.eval_in(i, u1) - qb.eval_in(j, u1);
        acc += (u1 - u0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    Ok(acc)
}

/// McCann interpolant at time `t`: `((1 − t) id + t T)#ρ_a` with `T` the
/// monotone map, rebinned onto the grid.
pub fn displacement_interpolation_1d(rho_a: &DensitySlice, rho_b: &DensitySlice, t: f64) -> Result<DensitySlice> {
    if rho_a.grid() != rho_b.grid() {
        return Err(Error::GridMismatch("interpolation endpoints differ in grid".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("{t} outside [0, 1]")));
    }
    let g = rho_a.grid();
    let qa = Quantile::new(rho_a)?;
    let qb = Quantile::new(rho_b)?;
    let n = g.n_space();
    let lo = g.domain().lower[0];
    let h = g.spacing(0);
    let mut masses = vec![0.0; n];
    let bin = |x: f64| (((x - lo) / h).floor().max(0.0) as usize).min(n - 1);
    for (u0, u1, i, j) in merged_pieces(&qa, &qb) {
        let x0 = (1.0 - t) * qa.eval_in(i, u0) + t * qb.eval_in(j, u0);
        let x1 = (1.0 - t) * qa.eval_in(i, u1) + t * qb.eval_in(j, u1);
        let piece = u1 - u0;
        if x1 - x0 <= 1e-14 * h {
            masses[bin(x0)] += piece;
            continue;
        }
        // Spread uniformly over [x0, x1].
        let (c0, c1) = (bin(x0), bin(x1));
        for (c, mass) in masses.iter_mut().enumerate().take(c1 + 1).skip(c0) {
            let a = (lo + c as f64 * h).max(x0);
            let b = (lo + (c + 1) as f64 * h).min(x1);
            if b > a {
                *mass += piece * (b - a) / (x1 - x0);
            }
        }
    }
    let dx = g.cell_volume();
    DensitySlice::normalized(g.clone(), masses.into_iter().map(|m| m / dx).collect())
}
