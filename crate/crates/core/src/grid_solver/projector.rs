//! Exact Euclidean projection onto the discrete continuity constraint.
//!
//! With `A` the staggered continuity operator on the free unknowns, the
//! projection is `x − Aᵀ(AAᵀ)⁻¹(Ax + b)`. `AAᵀ` splits into a time
//! second-difference plus the zero-flux spatial Laplacian; the latter is
//! diagonal in the cosine basis (DCT-II per axis), leaving one tridiagonal
//! system in time per spatial mode.

use std::f64::consts::PI;

use super::operator::Stencil;
use crate::measures::GridSpec;

#[derive(Debug, Clone)]
pub(crate) struct ContinuityProjector {
    n: usize,
    dim: usize,
    nt: usize,
    nc: usize,
    /// Orthonormal DCT-II matrix, `n × n` row-major.
    dct: Vec<f64>,
    /// Thomas factors per spatial mode: modified upper diagonal and
    /// reciprocal pivots, each `nt` long.
    upper: Vec<f64>,
    pivot: Vec<f64>,
    /// Modes whose time system is singular and solved with a pinned last entry.
    pinned: Vec<bool>,
    off: f64,
    /// Terminal node is fixed as well as the initial one.
    fixed_terminal: bool,
}

impl ContinuityProjector {
    pub fn new(grid: &GridSpec, fixed_terminal: bool) -> Self {
        let n = grid.n_space();
        let dim = grid.dim();
        let nt = grid.n_time();
        let nc = grid.n_cells();
        let mut dct = vec![0.0; n * n];
        for j in 0..n {
            let w = if j == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                dct[j * n + i] = w * (PI * j as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let eig1: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let h = grid.spacing(a);
                (0..n)
                    .map(|j| (2.0 * (PI * j as f64 / (2.0 * n as f64)).sin() / h).powi(2))
                    .collect()
            })
            .collect();
        let dt2 = 1.0 / (grid.dt() * grid.dt());
        let off = -dt2;
        let mut upper = vec![0.0; nc * nt];
        let mut pivot = vec![0.0; nc * nt];
        let mut pinned = vec![false; nc];
        for c in 0..nc {
            let lam: f64 = grid
                .cell_multi_index(c)
                .iter()
                .enumerate()
                .map(|(a, &j)| eig1[a][j])
                .sum();
            // Row k couples nodes k and k+1; node 0 is fixed, node nt too when
            // the terminal is fixed.
            let diag = |k: usize| {
                let mut free = 0.0;
                if k > 0 {
                    free += 1.0;
                }
                if !(fixed_terminal && k + 1 == nt) {
                    free += 1.0;
                }
                free * dt2 + lam
            };
            let singular = fixed_terminal && lam == 0.0;
            pinned[c] = singular;
            let len = if singular { nt - 1 } else { nt };
            let u = &mut upper[c * nt..(c + 1) * nt];
            let p = &mut pivot[c * nt..(c + 1) * nt];
            let mut prev_u = 0.0;
            for k in 0..len {
                let d = diag(k) - if k > 0 { off * prev_u } else { 0.0 };
                p[k] = 1.0 / d;
                prev_u = if k + 1 < len { off / d } else { 0.0 };
                u[k] = prev_u;
            }
        }
        Self {
            n,
            dim,
            nt,
            nc,
            dct,
            upper,
            pivot,
            pinned,
            off,
            fixed_terminal,
        }
    }

    pub fn fixed_terminal(&self) -> bool {
        self.fixed_terminal
    }

    /// Applies the DCT (or its transpose) along every axis of one slice.
    fn transform(&self, data: &mut [f64], scratch: &mut Vec<f64>, inverse: bool) {
        let n = self.n;
        scratch.resize(n, 0.0);
        for a in 0..self.dim {
            let stride = n.pow((self.dim - 1 - a) as u32);
            for base in 0..self.nc {
                if (base / stride) % n != 0 {
                    continue;
                }
                for (i, s) in scratch.iter_mut().enumerate() {
                    *s = data[base + i * stride];
                }
                for j in 0..n {
                    let mut acc = 0.0;
                    for (i, s) in scratch.iter().enumerate() {
                        let c = if inverse { self.dct[i * n + j] } else { self.dct[j * n + i] };
                        acc += c * s;
                    }
                    data[base + j * stride] = acc;
                }
            }
        }
    }

    /// Solves `(AAᵀ) μ = r` in place (`r` is `nt × nc`).
    pub fn solve(&self, r: &mut [f64]) {
        let mut scratch = Vec::new();
        for k in 0..self.nt {
            self.transform(&mut r[k * self.nc..(k + 1) * self.nc], &mut scratch, false);
        }
        let mut col = vec![0.0; self.nt];
        for c in 0..self.nc {
            for (k, v) in col.iter_mut().enumerate() {
                *v = r[k * self.nc + c];
            }
            let len = if self.pinned[c] { self.nt - 1 } else { self.nt };
            let u = &self.upper[c * self.nt..(c + 1) * self.nt];
            let p = &self.pivot[c * self.nt..(c + 1) * self.nt];
            // Forward elimination then back substitution.
            for k in 0..len {
                let prev = if k > 0 { col[k - 1] } else { 0.0 };
                col[k] = (col[k] - self.off * prev) * p[k];
            }
            for k in (0..len.saturating_sub(1)).rev() {
                col[k] -= u[k] * col[k + 1];
            }
            if self.pinned[c] {
                col[self.nt - 1] = 0.0;
            }
            for (k, v) in col.iter().enumerate() {
                r[k * self.nc + c] = *v;
            }
        }
        for k in 0..self.nt {
            self.transform(&mut r[k * self.nc..(k + 1) * self.nc], &mut scratch, true);
        }
    }

    /// Projects `(rho, m)` onto `A(ρ, m) = 0` keeping node 0 (and the
    /// terminal node if fixed) and boundary faces untouched.
    pub fn project(&self, st: &Stencil, rho: &mut [f64], m: &mut [f64], work: &mut Vec<f64>) {
        work.resize(st.cont_len(), 0.0);
        st.continuity(rho, m, work);
        self.solve(work);
        let nc = st.nc;
        // x ← x − Aᵀμ restricted to free unknowns.
        let inv_dt = 1.0 / st.dt;
        for k in 0..st.nt {
            for c in 0..nc {
                let z = work[k * nc + c];
                if k > 0 {
                    rho[k * nc + c] += z * inv_dt;
                }
                if !(self.fixed_terminal && k + 1 == st.nt) {
                    rho[(k + 1) * nc + c] -= z * inv_dt;
                }
                for a in 0..st.dim {
                    let (lo, hi) = st.faces[c * st.dim + a];
                    let zd = z * st.inv_h[a];
                    if st.interior[lo] {
                        m[k * st.nf + lo] += zd;
                    }
                    if st.interior[hi] {
                        m[k * st.nf + hi] -= zd;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_solver::operator::norm2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn projection_is_feasible_and_idempotent() {
        for (dim, n, fixed) in [(1, 8, false), (1, 8, true), (2, 6, false), (2, 5, true), (3, 4, true)] {
            let g = GridSpec::unit(dim, n, 5).unwrap();
            let st = Stencil::new(&g);
            let pr = ContinuityProjector::new(&g, fixed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n as u64);
            let mut rho: Vec<f64> = (0..(st.nt + 1) * st.nc).map(|_| rng.random_range(0.5..1.5)).collect();
            let mut m: Vec<f64> = (0..st.nt * st.nf).map(|_| rng.random_range(-1.0..1.0)).collect();
            for k in 0..st.nt {
                for f in 0..st.nf {
                    if !st.interior[f] {
                        m[k * st.nf + f] = 0.0;
                    }
                }
            }
            if fixed {
                // Equal masses at both ends keep the system consistent.
                let s0: f64 = rho[..st.nc].iter().sum();
                let s1: f64 = rho[st.nt * st.nc..].iter().sum();
                rho[st.nt * st.nc..].iter_mut().for_each(|v| *v *= s0 / s1);
            }
            let ends: Vec<f64> = rho[..st.nc].iter().chain(&rho[st.nt * st.nc..]).cloned().collect();
            let mut work = Vec::new();
            pr.project(&st, &mut rho, &mut m, &mut work);
            let mut r = vec![0.0; st.cont_len()];
            st.continuity(&rho, &m, &mut r);
            assert!(norm2(&r).sqrt() < 1e-9, "dim {dim} fixed {fixed}: {}", norm2(&r).sqrt());
            assert_eq!(&rho[..st.nc], &ends[..st.nc]);
            if fixed {
                assert_eq!(&rho[st.nt * st.nc..], &ends[st.nc..]);
            }
            let before = (rho.clone(), m.clone());
            pr.project(&st, &mut rho, &mut m, &mut work);
            let diff = rho.iter().zip(&before.0).chain(m.iter().zip(&before.1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-10);
        }
    }
}
