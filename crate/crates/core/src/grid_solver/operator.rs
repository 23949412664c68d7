//! The linear map of the space-time scheme: interpolation of (ρ, m) to cell
//! centers at time midpoints, and the discrete continuity operator.

use rand::{Rng, SeedableRng};

use crate::measures::GridSpec;

/// Precomputed face neighbours of every cell.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub nc: usize,
    pub nf: usize,
    pub nt: usize,
    pub dim: usize,
    pub dt: f64,
    pub inv_h: Vec<f64>,
    /// `faces[c * dim + a] = (lower, upper)` as offsets inside a midpoint block.
    pub faces: Vec<(usize, usize)>,
    /// Interior-face mask inside a midpoint block.
    pub interior: Vec<bool>,
}

impl Stencil {
    pub fn new(g: &GridSpec) -> Self {
        let dim = g.dim();
        let nc = g.n_cells();
        let mut faces = Vec::with_capacity(nc * dim);
        for c in 0..nc {
            for a in 0..dim {
                let off = g.face_block_offset(a);
                faces.push((off + g.face_of_cell(a, c, false), off + g.face_of_cell(a, c, true)));
            }
        }
        let mut interior = vec![false; g.n_faces_total()];
        for a in 0..dim {
            let off = g.face_block_offset(a);
            for f in 0..g.n_faces(a) {
                interior[off + f] = !g.is_boundary_face(a, f);
            }
        }
        Self {
            nc,
            nf: g.n_faces_total(),
            nt: g.n_time(),
            dim,
            dt: g.dt(),
            inv_h: (0..dim).map(|a| 1.0 / g.spacing(a)).collect(),
            faces,
            interior,
        }
    }

    pub fn interp_len(&self) -> usize {
        self.nt * self.nc * (1 + self.dim)
    }

    pub fn cont_len(&self) -> usize {
        self.nt * self.nc
    }

    /// Centered `(ρ, m)` per midpoint and cell, written as `1 + dim` entries.
    pub fn interpolate(&self, rho: &[f64], m: &[f64], out: &mut [f64]) {
        let w = 1 + self.dim;
        for k in 0..self.nt {
            let r0 = &rho[k * self.nc..(k + 1) * self.nc];
            let r1 = &rho[(k + 1) * self.nc..(k + 2) * self.nc];
            let mb = &m[k * self.nf..(k + 1) * self.nf];
            let ob = &mut out[k * self.nc * w..(k + 1) * self.nc * w];
            for c in 0..self.nc {
                ob[c * w] = 0.5 * (r0[c] + r1[c]);
                for a in 0..self.dim {
                    let (lo, hi) = self.faces[c * self.dim + a];
                    ob[c * w + 1 + a] = 0.5 * (mb[lo] + mb[hi]);
                }
            }
        }
    }

    /// `(ρ_{k+1} − ρ_k)/Δt + div m` per midpoint and cell.
    pub fn continuity(&self, rho: &[f64], m: &[f64], out: &mut [f64]) {
        let inv_dt = 1.0 / self.dt;
        for k in 0..self.nt {
            let r0 = &rho[k * self.nc..(k + 1) * self.nc];
            let r1 = &rho[(k + 1) * self.nc..(k + 2) * self.nc];
            let mb = &m[k * self.nf..(k + 1) * self.nf];
            let ob = &mut out[k * self.nc..(k + 1) * self.nc];
            for c in 0..self.nc {
                let mut v = (r1[c] - r0[c]) * inv_dt;
                for a in 0..self.dim {
                    let (lo, hi) = self.faces[c * self.dim + a];
                    v += (mb[hi] - mb[lo]) * self.inv_h[a];
                }
                ob[c] = v;
            }
        }
    }

    /// Adds `Iᵀ y1` to the gradients `(g_rho, g_m)`.
    pub fn add_interp_adjoint(&self, y1: &[f64], g_rho: &mut [f64], g_m: &mut [f64]) {
        let w = 1 + self.dim;
        for k in 0..self.nt {
            let yb = &y1[k * self.nc * w..(k + 1) * self.nc * w];
            let (lower, upper) = g_rho.split_at_mut((k + 1) * self.nc);
            let gr0 = &mut lower[k * self.nc..];
            let gr1 = &mut upper[..self.nc];
            let gm = &mut g_m[k * self.nf..(k + 1) * self.nf];
            for c in 0..self.nc {
                let yr = 0.5 * yb[c * w];
                gr0[c] += yr;
                gr1[c] += yr;
                for a in 0..self.dim {
                    let (lo, hi) = self.faces[c * self.dim + a];
                    let ym = 0.5 * yb[c * w + 1 + a];
                    gm[lo] += ym;
                    gm[hi] += ym;
                }
            }
        }
    }

    /// Adds `s Aᵀ y2` to the gradients `(g_rho, g_m)`.
    #[cfg(test)]
    pub fn add_continuity_adjoint(&self, y2: &[f64], s: f64, g_rho: &mut [f64], g_m: &mut [f64]) {
        let inv_dt = 1.0 / self.dt;
        for k in 0..self.nt {
            let zb = &y2[k * self.nc..(k + 1) * self.nc];
            let (lower, upper) = g_rho.split_at_mut((k + 1) * self.nc);
            let gr0 = &mut lower[k * self.nc..];
            let gr1 = &mut upper[..self.nc];
            let gm = &mut g_m[k * self.nf..(k + 1) * self.nf];
            for c in 0..self.nc {
                let z = s * zb[c];
                gr0[c] -= z * inv_dt;
                gr1[c] += z * inv_dt;
                for a in 0..self.dim {
                    let (lo, hi) = self.faces[c * self.dim + a];
                    let zd = z * self.inv_h[a];
                    gm[lo] -= zd;
                    gm[hi] += zd;
                }
            }
        }
    }

    /// Zeroes node 0 (fixed) and boundary faces in a primal direction.
    pub fn mask(&self, rho: &mut [f64], m: &mut [f64]) {
        rho[..self.nc].iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.nt {
            for (v, &keep) in m[k * self.nf..(k + 1) * self.nf].iter_mut().zip(&self.interior) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    /// Power iteration for `‖I‖` on the free primal variables.
    pub fn interp_norm(&self, iters: usize, seed: u64) -> f64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rho: Vec<f64> = (0..(self.nt + 1) * self.nc).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m: Vec<f64> = (0..self.nt * self.nf).map(|_| rng.random_range(-1.0..1.0)).collect();
        self.mask(&mut rho, &mut m);
        let mut y = vec![0.0; self.interp_len()];
        let mut est = 0.0;
        for _ in 0..iters {
            let n = (norm2(&rho) + norm2(&m)).sqrt();
            if n == 0.0 {
                return 0.0;
            }
            rho.iter_mut().chain(m.iter_mut()).for_each(|v| *v /= n);
            self.interpolate(&rho, &m, &mut y);
            est = norm2(&y).sqrt();
            rho.iter_mut().chain(m.iter_mut()).for_each(|v| *v = 0.0);
            self.add_interp_adjoint(&y, &mut rho, &mut m);
            self.mask(&mut rho, &mut m);
        }
        est
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
