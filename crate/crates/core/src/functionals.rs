//! Variational quantities on grid densities: the perspective integrand, the
//! Benamou-Brenier action, KL divergence with its Fenchel dual, and the
//! penalized / constrained objectives.

use std::fmt;
use std::ops::Add;

use crate::error::{Error, Result};
use crate::measures::{DensityField, DensitySlice, GridSpec, MomentumField};

/// Densities with magnitude below this are treated as exactly zero.
pub const ZERO_DENSITY: f64 = 1e-300;

/// A real number or `+∞`; never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtendedReal(f64);

impl ExtendedReal {
    pub const INFINITY: ExtendedReal = ExtendedReal(f64::INFINITY);
    pub const ZERO: ExtendedReal = ExtendedReal(0.0);

    /// Panics on NaN or `-∞`.
    pub fn finite(v: f64) -> Self {
        assert!(!v.is_nan() && v != f64::NEG_INFINITY, "ExtendedReal from {v}");
        ExtendedReal(v)
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    pub fn is_infinite(self) -> bool {
        !self.0.is_finite()
    }

    /// The value as `f64`, `f64::INFINITY` for `+∞`.
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn scale(self, s: f64) -> Self {
        debug_assert!(s >= 0.0);
        if self.is_infinite() {
            self
        } else {
            ExtendedReal(self.0 * s)
        }
    }
}

impl Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: Self) -> Self {
        if self.is_infinite() || rhs.is_infinite() {
            ExtendedReal::INFINITY
        } else {
            ExtendedReal(self.0 + rhs.0)
        }
    }
}

impl std::iter::Sum for ExtendedReal {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExtendedReal::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Exponent pair `1/p + 1/q = 1` of the cone `K_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    p: f64,
}

impl ConeParams {
    pub const QUADRATIC: ConeParams = ConeParams { p: 2.0 };

    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::param("p", format!("{p} must exceed 1")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

/// `f_p(t, x)`: `|x|^p / (p t^{p-1})` for `t > 0`, `0` at the origin, `+∞` otherwise.
pub fn perspective_f(cone: ConeParams, t: f64, x: &[f64]) -> ExtendedReal {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    if t.abs() < ZERO_DENSITY {
        return if norm2 == 0.0 {
            ExtendedReal::ZERO
        } else {
            ExtendedReal::INFINITY
        };
    }
    if t < 0.0 || t.is_nan() {
        return ExtendedReal::INFINITY;
    }
    let p = cone.p();
    let v = if p == 2.0 {
        0.5 * norm2 / t
    } else {
        norm2.sqrt().powf(p) / (p * t.powf(p - 1.0))
    };
    if v.is_finite() {
        ExtendedReal::finite(v)
    } else {
        ExtendedReal::INFINITY
    }
}

fn check_same(rho: &GridSpec, m: &GridSpec) -> Result<()> {
    if rho != m {
        return Err(Error::GridMismatch("density and momentum grids differ".into()));
    }
    Ok(())
}

/// Cell-centered density at time midpoint `k` (mean of the two nodes).
pub(crate) fn centered_density(rho: &DensityField, k: usize) -> Vec<f64> {
    rho.slice_values(k)
        .iter()
        .zip(rho.slice_values(k + 1))
        .map(|(a, b)| 0.5 * (a + b))
        .collect()
}

/// Discrete `∫∫ f_2(ρ, m) dx dt` with both fields interpolated to cell
/// centers at time midpoints.
pub fn bb_action(rho: &DensityField, m: &MomentumField) -> Result<ExtendedReal> {
    check_same(rho.grid(), m.grid())?;
    let g = rho.grid();
    let d = g.dim();
    let w = g.cell_volume() * g.dt();
    let mut total = ExtendedReal::ZERO;
    for k in 0..g.n_time() {
        let rc = centered_density(rho, k);
        let mc = m.centered(k);
        for (c, r) in rc.iter().enumerate() {
            total = total + perspective_f(ConeParams::QUADRATIC, *r, &mc[c * d..(c + 1) * d]);
            if total.is_infinite() {
                return Ok(total);
            }
        }
    }
    Ok(total.scale(w))
}

/// Kinetic energy `∫∫ |m|²/ρ`, i.e. twice the action; comparable to `W_2²`.
pub fn kinetic_energy(rho: &DensityField, m: &MomentumField) -> Result<ExtendedReal> {
    Ok(bb_action(rho, m)?.scale(2.0))
}

/// `Σ p log(p/q) Δx`; `+∞` when `p > 0` somewhere `q = 0`.
pub fn kl_divergence(p: &DensitySlice, q: &DensitySlice) -> Result<ExtendedReal> {
    if p.grid() != q.grid() {
        return Err(Error::GridMismatch("KL arguments live on different grids".into()));
    }
    let dx = p.grid().cell_volume();
    let mut acc = 0.0;
    for (a, b) in p.values().iter().zip(q.values()) {
        if *a <= 0.0 {
            continue;
        }
        if *b <= 0.0 {
            return Ok(ExtendedReal::INFINITY);
        }
        acc += a * (a / b).ln();
    }
    // Rounding can leave tiny negative sums for p ≈ q.
    Ok(ExtendedReal::finite((acc * dx).max(0.0)))
}

/// `1 + Σ h p Δx − Σ e^h q Δx`, a lower bound on `KL(p‖q)` for every finite `h`.
pub fn kl_dual_objective(p: &DensitySlice, q: &DensitySlice, h: &[f64]) -> Result<f64> {
    if p.grid() != q.grid() || h.len() != p.values().len() {
        return Err(Error::GridMismatch("dual KL arguments have different layouts".into()));
    }
    if let Some(v) = h.iter().find(|v| !v.is_finite()) {
        return Err(Error::param("h", format!("test function value {v} is not finite")));
    }
    let dx = p.grid().cell_volume();
    let mut lin = 0.0;
    let mut exp = 0.0;
    for ((a, b), hv) in p.values().iter().zip(q.values()).zip(h) {
        lin += hv * a;
        exp += hv.exp() * b;
    }
    Ok(1.0 + lin * dx - exp * dx)
}

/// Terminal penalty weight: finite `α > 0` or the hard constraint `α = ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha {
    Finite(f64),
    Infinite,
}

impl Alpha {
    pub fn new(v: f64) -> Result<Self> {
        if v == f64::INFINITY {
            Ok(Alpha::Infinite)
        } else if v.is_finite() && v > 0.0 {
            Ok(Alpha::Finite(v))
        } else {
            Err(Error::param("alpha", format!("{v} must be positive")))
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Alpha::Finite(v) => v,
            Alpha::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Finite(v) => write!(f, "{v}"),
            Alpha::Infinite => write!(f, "inf"),
        }
    }
}

/// Default radius of the L¹ ball standing in for `ρ(·,T) = ρ_1`.
pub fn default_terminal_tol(grid: &GridSpec) -> f64 {
    1e-6 * grid.n_cells() as f64 * grid.cell_volume()
}

/// `bb_action + α KL(ρ(·,T) ‖ ρ_1)`, or for `α = ∞` the action when the
/// terminal L¹ gap is within `terminal_tol` and `+∞` otherwise.
pub fn objective_f(
    rho: &DensityField,
    m: &MomentumField,
    rho1: &DensitySlice,
    alpha: Alpha,
    terminal_tol: f64,
) -> Result<ExtendedReal> {
    if rho.grid() != rho1.grid() {
        return Err(Error::GridMismatch("terminal target lives on another grid".into()));
    }
    let action = bb_action(rho, m)?;
    let terminal = rho.terminal();
    match alpha {
        Alpha::Finite(a) => Ok(action + kl_divergence(&terminal, rho1)?.scale(a)),
        Alpha::Infinite => {
            if !(terminal_tol > 0.0) {
                return Err(Error::param("terminal_tol", format!("{terminal_tol} must be positive")));
            }
            if terminal.l1_distance(rho1)? <= terminal_tol {
                Ok(action)
            } else {
                Ok(ExtendedReal::INFINITY)
            }
        }
    }
}

/// Cell-centered velocity at time midpoints, layout `(k * n_cells + cell) * dim + axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl VelocityField {
    pub fn at(&self, k: usize, cell: usize) -> &[f64] {
        let d = self.grid.dim();
        let i = (k * self.grid.n_cells() + cell) * d;
        &self.values[i..i + d]
    }
}

/// `v = m/ρ` where the centered density exceeds `floor`, zero elsewhere.
pub fn recover_velocity(rho: &DensityField, m: &MomentumField, floor: f64) -> Result<VelocityField> {
    check_same(rho.grid(), m.grid())?;
    if !(floor > 0.0) {
        return Err(Error::param("floor", format!("{floor} must be positive")));
    }
    let g = rho.grid().clone();
    let d = g.dim();
    let mut values = Vec::with_capacity(g.n_time() * g.n_cells() * d);
    for k in 0..g.n_time() {
        let rc = centered_density(rho, k);
        let mc = m.centered(k);
        for (c, r) in rc.iter().enumerate() {
            for a in 0..d {
                values.push(if *r > floor { mc[c * d + a] / r } else { 0.0 });
            }
        }
    }
    Ok(VelocityField { grid: g, values })
}
