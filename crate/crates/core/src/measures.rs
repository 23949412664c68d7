//! Grids, space-time density and momentum fields, Gaussian data laws,
//! sampling and histograms.
//!
//! Cells are indexed row-major with axis 0 slowest. A density field stores
//! `n_time + 1` slices (time nodes `t_k = k·Δt`); a momentum field stores one
//! block per time midpoint, and inside each block the faces normal to axis 0,
//! then axis 1, and so on. Faces normal to axis `a` are indexed like cells but
//! with `n_space + 1` positions along `a`; positions `0` and `n_space` are the
//! boundary faces and always carry zero flux.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Tolerance for the unit-mass invariant of density slices.
pub const MASS_TOL: f64 = 1e-8;

/// Axis-aligned box `Π [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (k, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidSpec(format!(
                    "box edge {k} is [{a}, {b}], need a finite positive length"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_within(x, 0.0)
    }

    pub fn contains_within(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| *v >= a - slack && *v <= b + slack)
    }
}

/// Uniform space-time grid on a box times `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    domain: BoxDomain,
    n_space: usize,
    n_time: usize,
    horizon: f64,
}

impl GridSpec {
    pub fn new(domain: BoxDomain, n_space: usize, n_time: usize, horizon: f64) -> Result<Self> {
        let dim = domain.dim();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidSpec(format!("grid dimension {dim} not in 1..=3")));
        }
        if n_space < 4 {
            return Err(Error::InvalidSpec(format!("n_space = {n_space}, need at least 4")));
        }
        if n_time < 2 {
            return Err(Error::InvalidSpec(format!("n_time = {n_time}, need at least 2")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidSpec(format!("horizon {horizon} must be positive")));
        }
        Ok(Self {
            domain,
            n_space,
            n_time,
            horizon,
        })
    }

    /// Unit box `[0,1]^dim` with horizon 1.
    pub fn unit(dim: usize, n_space: usize, n_time: usize) -> Result<Self> {
        Self::new(BoxDomain::unit(dim), n_space, n_time, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_cells(&self) -> usize {
        self.n_space.pow(self.dim() as u32)
    }

    pub fn n_slices(&self) -> usize {
        self.n_time + 1
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.domain.upper[axis] - self.domain.lower[axis]) / self.n_space as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_time as f64
    }

    /// Row-major stride of `axis` in the cell index.
    pub fn stride(&self, axis: usize) -> usize {
        self.n_space.pow((self.dim() - 1 - axis) as u32)
    }

    pub fn cell_multi_index(&self, cell: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|a| (cell / self.stride(a)) % self.n_space)
            .collect()
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.cell_multi_index(cell)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.domain.lower[a] + (i as f64 + 0.5) * self.spacing(a))
            .collect()
    }

    /// Nearest-cell bin of a point; points on the upper edge go to the last cell.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.domain.contains(x) {
            return None;
        }
        let mut cell = 0;
        for (a, &v) in x.iter().enumerate() {
            let i = ((v - self.domain.lower[a]) / self.spacing(a)).floor() as isize;
            let i = i.clamp(0, self.n_space as isize - 1) as usize;
            cell += i * self.stride(a);
        }
        Some(cell)
    }

    /// Number of faces normal to `axis`, boundary faces included.
    pub fn n_faces(&self, _axis: usize) -> usize {
        (self.n_space + 1) * self.n_space.pow(self.dim() as u32 - 1)
    }

    /// Faces per time midpoint, all axes.
    pub fn n_faces_total(&self) -> usize {
        (0..self.dim()).map(|a| self.n_faces(a)).sum()
    }

    fn face_stride(&self, face_axis: usize, axis: usize) -> usize {
        // Faces normal to `face_axis` have n+1 positions along it.
        ((axis + 1)..self.dim())
            .map(|b| if b == face_axis { self.n_space + 1 } else { self.n_space })
            .product()
    }

    /// Index (within the block of faces normal to `axis`) of the lower or
    /// upper face of `cell`.
    pub fn face_of_cell(&self, axis: usize, cell: usize, upper: bool) -> usize {
        let mi = self.cell_multi_index(cell);
        let mut idx = 0;
        for (b, &i) in mi.iter().enumerate() {
            let i = if b == axis && upper { i + 1 } else { i };
            idx += i * self.face_stride(axis, b);
        }
        idx
    }

    /// Position of a face along its normal axis (0 and n_space are boundary).
    pub fn face_position(&self, axis: usize, face: usize) -> usize {
        (face / self.face_stride(axis, axis)) % (self.n_space + 1)
    }

    pub fn is_boundary_face(&self, axis: usize, face: usize) -> bool {
        let p = self.face_position(axis, face);
        p == 0 || p == self.n_space
    }

    /// Offset of the block of `axis`-normal faces inside one time midpoint.
    pub fn face_block_offset(&self, axis: usize) -> usize {
        (0..axis).map(|a| self.n_faces(a)).sum()
    }

    pub fn same_layout(&self, other: &GridSpec) -> bool {
        self == other
    }
}

fn mass(values: &[f64], dx: f64) -> f64 {
    values.iter().sum::<f64>() * dx
}

/// One time slice of a density on the grid's cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySlice {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DensitySlice {
    /// Validates nonnegativity and unit mass.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_slice(&grid, &values)?;
        Ok(Self { grid, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidSpec("density values must be finite and nonnegative".into()));
        }
        let m = mass(&values, grid.cell_volume());
        if m <= 0.0 {
            return Err(Error::InvalidSpec("density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= m);
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        Self { grid, values }
    }

    pub fn uniform(grid: GridSpec) -> Self {
        let v = 1.0 / grid.domain().volume();
        let n = grid.n_cells();
        Self::from_raw(grid, vec![v; n])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        mass(&self.values, self.grid.cell_volume())
    }

    /// Cell masses `values · Δx`.
    pub fn cell_masses(&self) -> Vec<f64> {
        let dx = self.grid.cell_volume();
        self.values.iter().map(|v| v * dx).collect()
    }

    /// `Σ |a − b| Δx`.
    pub fn l1_distance(&self, other: &DensitySlice) -> Result<f64> {
        l1_distance(&self.grid, &self.values, other)
    }

    /// Expected coordinate under the slice, using cell centers.
    pub fn mean(&self) -> Vec<f64> {
        let dx = self.grid.cell_volume();
        let mut m = vec![0.0; self.grid.dim()];
        for (c, v) in self.values.iter().enumerate() {
            for (a, x) in self.grid.cell_center(c).into_iter().enumerate() {
                m[a] += v * dx * x;
            }
        }
        m
    }

    /// Floors every cell at `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> DensitySlice {
        let v: Vec<f64> = self.values.iter().map(|v| v.max(floor)).collect();
        DensitySlice::normalized(self.grid.clone(), v).expect("floored slice has positive mass")
    }
}

fn l1_distance(grid: &GridSpec, values: &[f64], other: &DensitySlice) -> Result<f64> {
    if grid != other.grid() {
        return Err(Error::GridMismatch("slices live on different grids".into()));
    }
    Ok(values
        .iter()
        .zip(other.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * grid.cell_volume())
}

fn check_slice(grid: &GridSpec, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_cells() {
        return Err(Error::GridMismatch(format!(
            "{} values for {} cells",
            values.len(),
            grid.n_cells()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidSpec(format!("density value {v} is negative or not finite")));
    }
    let m = mass(values, grid.cell_volume());
    if (m - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidSpec(format!("slice mass {m} differs from 1")));
    }
    Ok(())
}

/// Space-time density on time nodes `0..=n_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let nc = grid.n_cells();
        if values.len() != nc * grid.n_slices() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} slices of {} cells",
                values.len(),
                grid.n_slices(),
                nc
            )));
        }
        for chunk in values.chunks(nc) {
            check_slice(&grid, chunk)?;
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells() * grid.n_slices());
        Self { grid, values }
    }

    /// Every slice equal to `slice`.
    pub fn constant_in_time(slice: &DensitySlice) -> Self {
        let grid = slice.grid().clone();
        let values = slice.values().repeat(grid.n_slices());
        Self::from_raw(grid, values)
    }

    /// Linear interpolation `(1 − t/T) a + (t/T) b` at every time node.
    pub fn linear_interpolation(a: &DensitySlice, b: &DensitySlice) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(Error::GridMismatch("marginals live on different grids".into()));
        }
        let grid = a.grid().clone();
        let k_max = grid.n_time() as f64;
        let mut values = Vec::with_capacity(grid.n_cells() * grid.n_slices());
        for k in 0..grid.n_slices() {
            let s = k as f64 / k_max;
            values.extend(a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - s) * x + s * y));
        }
        Ok(Self::from_raw(grid, values))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice_values(&self, k: usize) -> &[f64] {
        let nc = self.grid.n_cells();
        &self.values[k * nc..(k + 1) * nc]
    }

    pub fn slice(&self, k: usize) -> DensitySlice {
        DensitySlice::from_raw(self.grid.clone(), self.slice_values(k).to_vec())
    }

    pub fn terminal(&self) -> DensitySlice {
        self.slice(self.grid.n_time())
    }

    /// Slice at the node nearest to time `t`.
    pub fn slice_at_time(&self, t: f64) -> DensitySlice {
        let k = (t / self.grid.dt()).round().clamp(0.0, self.grid.n_time() as f64) as usize;
        self.slice(k)
    }

    pub fn slice_masses(&self) -> Vec<f64> {
        let dx = self.grid.cell_volume();
        self.values.chunks(self.grid.n_cells()).map(|c| mass(c, dx)).collect()
    }
}

/// Momentum on staggered faces and time midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl MomentumField {
    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.n_faces_total() * grid.n_time();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Validates finiteness and zeroes nothing: boundary faces must already be zero.
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let n = grid.n_faces_total() * grid.n_time();
        if values.len() != n {
            return Err(Error::GridMismatch(format!("{} values for {n} face slots", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("momentum entries must be finite".into()));
        }
        let f = Self { grid, values };
        if f.max_boundary_flux() != 0.0 {
            return Err(Error::InvalidSpec("momentum has nonzero boundary flux".into()));
        }
        Ok(f)
    }

    /// Builds faces from `f(axis, face_center, k)`; boundary faces are set to zero.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, &[f64], usize) -> f64) -> Self {
        let mut field = Self::zeros(grid.clone());
        let nft = grid.n_faces_total();
        for k in 0..grid.n_time() {
            for axis in 0..grid.dim() {
                let off = k * nft + grid.face_block_offset(axis);
                for face in 0..grid.n_faces(axis) {
                    if grid.is_boundary_face(axis, face) {
                        continue;
                    }
                    let x = face_center(&grid, axis, face);
                    field.values[off + face] = f(axis, &x, k);
                }
            }
        }
        field
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_faces_total() * grid.n_time());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Faces of one time midpoint.
    pub fn midpoint_values(&self, k: usize) -> &[f64] {
        let n = self.grid.n_faces_total();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn max_boundary_flux(&self) -> f64 {
        let g = &self.grid;
        let nft = g.n_faces_total();
        let mut worst: f64 = 0.0;
        for k in 0..g.n_time() {
            for axis in 0..g.dim() {
                let off = k * nft + g.face_block_offset(axis);
                for face in 0..g.n_faces(axis) {
                    if g.is_boundary_face(axis, face) {
                        worst = worst.max(self.values[off + face].abs());
                    }
                }
            }
        }
        worst
    }

    /// Cell-centered momentum at midpoint `k`, by averaging the two faces per axis.
    /// Layout: `cell * dim + axis`.
    pub fn centered(&self, k: usize) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        let block = self.midpoint_values(k);
        let mut out = vec![0.0; g.n_cells() * d];
        for c in 0..g.n_cells() {
            for a in 0..d {
                let off = g.face_block_offset(a);
                let lo = block[off + g.face_of_cell(a, c, false)];
                let hi = block[off + g.face_of_cell(a, c, true)];
                out[c * d + a] = 0.5 * (lo + hi);
            }
        }
        out
    }
}

/// Physical coordinates of the center of a face.
pub fn face_center(grid: &GridSpec, axis: usize, face: usize) -> Vec<f64> {
    let d = grid.dim();
    let mut rem = face;
    let mut idx = vec![0usize; d];
    for b in (0..d).rev() {
        let len = if b == axis { grid.n_space() + 1 } else { grid.n_space() };
        idx[b] = rem % len;
        rem /= len;
    }
    (0..d)
        .map(|b| {
            let off = if b == axis { 0.0 } else { 0.5 };
            grid.domain().lower[b] + (idx[b] as f64 + off) * grid.spacing(b)
        })
        .collect()
}

/// Weighted sample points in a box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    seed: Option<u64>,
}

impl ParticleSet {
    /// Uniformly weighted points, stored flat (`i * dim + k`).
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidSpec(format!(
                "{} coordinates cannot form points of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
            seed: None,
        })
    }

    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut ps = Self::uniform(dim, points)?;
        if weights.len() != ps.len() {
            return Err(Error::InvalidSpec("weight count differs from point count".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidSpec("weights must be nonnegative".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("weights sum to {s}, not 1")));
        }
        ps.weights = weights;
        Ok(ps)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    pub fn has_uniform_weights(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= 1e-15)
    }

    /// Each point repeated `times` times, uniform weights.
    pub fn repeated(&self, times: usize) -> ParticleSet {
        let mut pts = Vec::with_capacity(self.points.len() * times);
        for p in self.iter() {
            for _ in 0..times {
                pts.extend_from_slice(p);
            }
        }
        ParticleSet::uniform(self.dim, pts).expect("nonempty")
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.iter().zip(&self.weights) {
            for (mk, x) in m.iter_mut().zip(p) {
                *mk += w * x;
            }
        }
        m
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Isotropic Gaussian, truncated to a box when discretized or sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub stddev: f64,
}

/// Minimum fraction of untruncated Gaussian mass the box must hold.
pub const MIN_BOX_MASS: f64 = 0.99;

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, stddev: f64) -> Self {
        Self { mean, stddev }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Untruncated mass inside the box.
    pub fn box_mass(&self, domain: &BoxDomain) -> f64 {
        self.mean
            .iter()
            .enumerate()
            .map(|(k, mu)| {
                std_normal_cdf((domain.upper[k] - mu) / self.stddev)
                    - std_normal_cdf((domain.lower[k] - mu) / self.stddev)
            })
            .product()
    }

    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        if !(self.stddev.is_finite() && self.stddev > 0.0) {
            return Err(Error::InvalidSpec(format!("{self:?}: stddev must be positive")));
        }
        if self.dim() != domain.dim() || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "{self:?}: mean does not match a {}-dimensional box",
                domain.dim()
            )));
        }
        let inside = self.box_mass(domain);
        if inside < MIN_BOX_MASS {
            return Err(Error::InvalidSpec(format!(
                "{self:?}: only {:.4}% of its mass lies inside the box",
                100.0 * inside
            )));
        }
        Ok(())
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let r2: f64 = x.iter().zip(&self.mean).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * r2 / self.stddev.powi(2)).exp()
            / ((2.0 * std::f64::consts::PI).sqrt() * self.stddev).powf(d)
    }

    /// Unnormalized cell masses (product of per-axis interval masses).
    fn cell_masses(&self, grid: &GridSpec) -> Vec<f64> {
        let n = grid.n_space();
        let per_axis: Vec<Vec<f64>> = (0..grid.dim())
            .map(|a| {
                let h = grid.spacing(a);
                let lo = grid.domain().lower[a];
                let cdf: Vec<f64> = (0..=n)
                    .map(|i| std_normal_cdf((lo + i as f64 * h - self.mean[a]) / self.stddev))
                    .collect();
                cdf.windows(2).map(|w| w[1] - w[0]).collect()
            })
            .collect();
        (0..grid.n_cells())
            .map(|c| {
                grid.cell_multi_index(c)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| per_axis[a][i])
                    .product()
            })
            .collect()
    }

    fn sample_into(&self, domain: &BoxDomain, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let mut x = vec![0.0; self.dim()];
        loop {
            for (xk, mu) in x.iter_mut().zip(&self.mean) {
                let z: f64 = rng.sample(StandardNormal);
                *xk = mu + self.stddev * z;
            }
            if domain.contains(&x) {
                out.extend_from_slice(&x);
                return;
            }
        }
    }
}

/// Data laws supported by the sampler and discretizer.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Gaussian(GaussianSpec),
    /// Components with weights summing to one.
    Mixture(Vec<(f64, GaussianSpec)>),
}

impl Distribution {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Gaussian(g) => g.dim(),
            Distribution::Mixture(c) => c.first().map_or(0, |(_, g)| g.dim()),
        }
    }

    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        match self {
            Distribution::Gaussian(g) => g.validate(domain),
            Distribution::Mixture(comps) => {
                if comps.is_empty() {
                    return Err(Error::InvalidSpec("mixture has no components".into()));
                }
                let s: f64 = comps.iter().map(|(w, _)| w).sum();
                if comps.iter().any(|(w, _)| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!("mixture weights sum to {s}")));
                }
                comps.iter().try_for_each(|(_, g)| g.validate(domain))
            }
        }
    }
}

/// Cell-averaged truncated Gaussian, renormalized to unit mass on the grid.
pub fn discretize_gaussian(spec: &GaussianSpec, grid: &GridSpec) -> Result<DensitySlice> {
    spec.validate(grid.domain())?;
    DensitySlice::normalized(grid.clone(), spec.cell_masses(grid))
}

/// Cell-averaged truncated law (mixtures truncate each component).
pub fn discretize(dist: &Distribution, grid: &GridSpec) -> Result<DensitySlice> {
    dist.validate(grid.domain())?;
    match dist {
        Distribution::Gaussian(g) => discretize_gaussian(g, grid),
        Distribution::Mixture(comps) => {
            let mut acc = vec![0.0; grid.n_cells()];
            for (w, g) in comps {
                let m = g.cell_masses(grid);
                let total: f64 = m.iter().sum();
                for (a, v) in acc.iter_mut().zip(m) {
                    *a += w * v / total;
                }
            }
            DensitySlice::normalized(grid.clone(), acc)
        }
    }
}

/// Draws `n` points, resampling any draw that falls outside the box.
pub fn sample_distribution(dist: &Distribution, domain: &BoxDomain, n: usize, seed: u64) -> Result<ParticleSet> {
    Ok(sample_labeled(dist, domain, n, seed)?.0)
}

/// As `sample_distribution`, also returning the mixture component of each point.
pub fn sample_labeled(
    dist: &Distribution,
    domain: &BoxDomain,
    n: usize,
    seed: u64,
) -> Result<(ParticleSet, Vec<usize>)> {
    if n == 0 {
        return Err(Error::param("n", "need at least one sample"));
    }
    dist.validate(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n * domain.dim());
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        match dist {
            Distribution::Gaussian(g) => {
                g.sample_into(domain, &mut rng, &mut pts);
                labels.push(0);
            }
            Distribution::Mixture(comps) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = comps.len() - 1;
                for (j, (w, _)) in comps.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                comps[pick].1.sample_into(domain, &mut rng, &mut pts);
                labels.push(pick);
            }
        }
    }
    Ok((ParticleSet::uniform(domain.dim(), pts)?.with_seed(seed), labels))
}

/// Weighted bin counts divided by the cell volume.
pub fn empirical_histogram(ps: &ParticleSet, grid: &GridSpec) -> Result<DensitySlice> {
    if ps.dim() != grid.dim() {
        return Err(Error::GridMismatch(format!(
            "{}-dimensional particles on a {}-dimensional grid",
            ps.dim(),
            grid.dim()
        )));
    }
    let dx = grid.cell_volume();
    let mut values = vec![0.0; grid.n_cells()];
    for (p, w) in ps.iter().zip(ps.weights()) {
        let c = grid.locate(p).ok_or_else(|| Error::Domain { point: p.to_vec() })?;
        values[c] += w / dx;
    }
    Ok(DensitySlice::from_raw(grid.clone(), values))
}
