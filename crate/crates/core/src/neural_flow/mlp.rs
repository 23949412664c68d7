//! Clipped multilayer network on `(x, t)` and its boundary-masked velocity.
//!
//! Per-point evaluation carries `d` forward tangents so the divergence is
//! exact; the reverse pass goes back through both the values and the
//! tangents, which gives the parameter gradient of `v`, `div v` and `|v|²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::measures::BoxDomain;

/// Network weights `θ` together with their fixed architecture and the box
/// whose boundary the velocity vanishes on.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    theta: Vec<f64>,
    clip_radius: f64,
    domain: BoxDomain,
}

impl MlpParams {
    /// All-zero weights. `hidden` lists the tanh layer widths.
    pub fn zeros(domain: BoxDomain, hidden: &[usize], clip_radius: f64) -> Result<Self> {
        if !(clip_radius > 0.0 && clip_radius.is_finite()) {
            return Err(Error::param("clip_radius", format!("{clip_radius} must be positive")));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::param("hidden", "layer widths must be positive"));
        }
        let d = domain.dim();
        let mut dims = vec![d + 1];
        dims.extend_from_slice(hidden);
        dims.push(d);
        let n: usize = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            dims,
            theta: vec![0.0; n],
            clip_radius,
            domain,
        })
    }

    /// Gaussian weights with variance `scale² / fan_in`, zero biases, then
    /// clipped into the ball.
    pub fn random(domain: BoxDomain, hidden: &[usize], clip_radius: f64, scale: f64, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(domain, hidden, clip_radius)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in p.dims.clone().windows(2) {
            let normal = Normal::new(0.0, scale / (w[0] as f64).sqrt())
                .map_err(|e| Error::param("scale", e.to_string()))?;
            for v in &mut p.theta[off..off + w[0] * w[1]] {
                *v = normal.sample(&mut rng);
            }
            off += w[1] * (w[0] + 1);
        }
        p.clip_in_place();
        Ok(p)
    }

    /// Same architecture, new weights (not clipped).
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::param(
                "theta",
                format!("expected {} parameters, got {}", self.theta.len(), theta.len()),
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("theta", "non-finite parameter"));
        }
        Ok(Self { theta, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Layer widths from input `d + 1` to output `d`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn clip_radius(&self) -> f64 {
        self.clip_radius
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn norm(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn clip_in_place(&mut self) {
        let n = self.norm();
        if n > self.clip_radius {
            let s = self.clip_radius / n;
            self.theta.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }
}

/// Projection onto `Θ_R`: `θ` if `‖θ‖ ≤ R`, else `θ R/‖θ‖`.
pub fn clip_params(params: &MlpParams) -> MlpParams {
    let mut p = params.clone();
    p.clip_in_place();
    p
}

/// Boundary-masked network velocity at `x ∈ D`.
pub fn mlp_velocity(x: &[f64], t: f64, params: &MlpParams) -> Result<Vec<f64>> {
    if !params.domain.contains(x) {
        return Err(Error::Domain { point: x.to_vec() });
    }
    let mut s = Scratch::new(params);
    let mut v = vec![0.0; params.dim()];
    s.forward(params, x, t);
    s.velocity(&mut v);
    Ok(v)
}

/// Mask `Π g_k` with `g_k = (x_k − a_k)(b_k − x_k)/((b_k − a_k)/2)²`.
#[derive(Debug, Clone)]
struct Mask {
    m: f64,
    grad: Vec<f64>,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl Mask {
    fn new(d: usize) -> Self {
        Self {
            m: 0.0,
            grad: vec![0.0; d],
            g: vec![0.0; d],
            dg: vec![0.0; d],
        }
    }

    fn eval(&mut self, dom: &BoxDomain, x: &[f64]) {
        let d = x.len();
        for k in 0..d {
            let (a, b) = (dom.lower[k], dom.upper[k]);
            let c = 4.0 / ((b - a) * (b - a));
            self.g[k] = (x[k] - a) * (b - x[k]) * c;
            self.dg[k] = (a + b - 2.0 * x[k]) * c;
        }
        self.m = self.g.iter().product();
        for j in 0..d {
            let mut p = self.dg[j];
            for l in 0..d {
                if l != j {
                    p *= self.g[l];
                }
            }
            self.grad[j] = p;
        }
    }

    /// Adds `H w` (mask Hessian times `w`) to `out`.
    fn add_hessian_times(&self, dom: &BoxDomain, w: &[f64], out: &mut [f64]) {
        let d = w.len();
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                let mut h = if j == k {
                    let (a, b) = (dom.lower[j], dom.upper[j]);
                    -8.0 / ((b - a) * (b - a))
                } else {
                    self.dg[j] * self.dg[k]
                };
                for l in 0..d {
                    if l != j && l != k {
                        h *= self.g[l];
                    }
                }
                acc += h * w[k];
            }
            out[j] += acc;
        }
    }
}

/// Opaque per-point buffers for the tangent-carrying forward and reverse pass.
#[derive(Debug, Clone)]
pub struct Scratch {
    d: usize,
    /// `y[0]` is the input `(x, t)`, `y[k]` the k-th hidden activation.
    y: Vec<Vec<f64>>,
    /// `dy[k][j * n_k + i]`: tangent of `y[k]_i` along `x_j` (unused for k = 0).
    dy: Vec<Vec<f64>>,
    u: Vec<f64>,
    /// `du[j * d + i] = ∂u_i/∂x_j`.
    du: Vec<f64>,
    mask: Mask,
    ybar: Vec<Vec<f64>>,
    dybar: Vec<Vec<f64>>,
    abar: Vec<f64>,
    dabar: Vec<f64>,
    uvbar: Vec<f64>,
}

impl Scratch {
    pub fn new(p: &MlpParams) -> Self {
        let d = p.dim();
        let hid = &p.dims[..p.dims.len() - 1];
        let widest = *p.dims.iter().max().unwrap();
        Self {
            d,
            y: hid.iter().map(|&n| vec![0.0; n]).collect(),
            dy: hid.iter().map(|&n| vec![0.0; n * d]).collect(),
            u: vec![0.0; d],
            du: vec![0.0; d * d],
            mask: Mask::new(d),
            ybar: hid.iter().map(|&n| vec![0.0; n]).collect(),
            dybar: hid.iter().map(|&n| vec![0.0; n * d]).collect(),
            abar: vec![0.0; widest],
            dabar: vec![0.0; widest * d],
            uvbar: vec![0.0; d],
        }
    }

    /// Raw network output and its x-Jacobian, plus the mask, at `(x, t)`.
    pub fn forward(&mut self, p: &MlpParams, x: &[f64], t: f64) {
        let d = self.d;
        self.y[0][..d].copy_from_slice(x);
        self.y[0][d] = t;
        let nl = p.n_layers();
        let mut off = 0;
        for k in 1..=nl {
            let (nin, nout) = (p.dims[k - 1], p.dims[k]);
            let w = &p.theta[off..off + nin * nout];
            let b = &p.theta[off + nin * nout..off + nout * (nin + 1)];
            off += nout * (nin + 1);
            let (prev, rest) = self.y.split_at_mut(k);
            let yin = &prev[k - 1];
            let (dprev, drest) = self.dy.split_at_mut(k);
            let dyin = &dprev[k - 1];
            let last = k == nl;
            for i in 0..nout {
                let row = &w[i * nin..(i + 1) * nin];
                let a = b[i] + row.iter().zip(yin).map(|(wi, yi)| wi * yi).sum::<f64>();
                // Tangents of the pre-activation along each x_j.
                let (out_y, out_dy): (&mut f64, &mut [f64]) = if last {
                    (&mut self.u[i], &mut self.du[..])
                } else {
                    (&mut rest[0][i], &mut drest[0][..])
                };
                if last {
                    *out_y = a;
                    for j in 0..d {
                        out_dy[j * d + i] = if k == 1 {
                            row[j]
                        } else {
                            row.iter().zip(&dyin[j * nin..(j + 1) * nin]).map(|(wi, t)| wi * t).sum()
                        };
                    }
                } else {
                    let y = a.tanh();
                    let s = 1.0 - y * y;
                    *out_y = y;
                    for j in 0..d {
                        let da: f64 = if k == 1 {
                            row[j]
                        } else {
                            row.iter().zip(&dyin[j * nin..(j + 1) * nin]).map(|(wi, t)| wi * t).sum()
                        };
                        out_dy[j * nout + i] = s * da;
                    }
                }
            }
        }
        self.mask.eval(&p.domain, x);
    }

    pub fn velocity(&self, v: &mut [f64]) {
        for (vi, ui) in v.iter_mut().zip(&self.u) {
            *vi = self.mask.m * ui;
        }
    }

    /// `div v = m tr(∂u/∂x) + ∇m · u`.
    pub fn divergence(&self) -> f64 {
        let d = self.d;
        let tr: f64 = (0..d).map(|i| self.du[i * d + i]).sum();
        self.mask.m * tr + self.mask.grad.iter().zip(&self.u).map(|(g, u)| g * u).sum::<f64>()
    }

    /// Reverse pass for the scalar `⟨vbar, v⟩ + divbar·div v + kinbar·½|v|²`
    /// at the point of the last `forward`. Adds to `gtheta`, writes `xbar`.
    pub fn backward(&mut self, p: &MlpParams, vbar: &[f64], divbar: f64, kinbar: f64, gtheta: &mut [f64], xbar: &mut [f64]) {
        let d = self.d;
        let m = self.mask.m;
        let tr: f64 = (0..d).map(|i| self.du[i * d + i]).sum();
        // Total cotangent of v, then of u, the trace, and the mask.
        let mut mbar = 0.0;
        for i in 0..d {
            let vt = vbar[i] + kinbar * m * self.u[i];
            self.uvbar[i] = m * vt + divbar * self.mask.grad[i];
            mbar += vt * self.u[i];
        }
        mbar += divbar * tr;
        let trbar = m * divbar;
        xbar.iter_mut().zip(&self.mask.grad).for_each(|(x, g)| *x = mbar * g);
        let gmbar: Vec<f64> = self.u.iter().map(|u| divbar * u).collect();
        self.mask.add_hessian_times(&p.domain, &gmbar, xbar);

        let nl = p.n_layers();
        let mut off_end = gtheta.len();
        for k in (1..=nl).rev() {
            let (nin, nout) = (p.dims[k - 1], p.dims[k]);
            let off = off_end - nout * (nin + 1);
            off_end = off;
            // Pre-activation cotangents.
            if k == nl {
                self.abar[..nout].copy_from_slice(&self.uvbar);
                for j in 0..d {
                    for i in 0..nout {
                        self.dabar[j * nout + i] = if i == j { trbar } else { 0.0 };
                    }
                }
            } else {
                let y = &self.y[k];
                let dy = &self.dy[k];
                let yb = &self.ybar[k];
                let dyb = &self.dybar[k];
                for i in 0..nout {
                    let s = 1.0 - y[i] * y[i];
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += dy[j * nout + i] * dyb[j * nout + i];
                        self.dabar[j * nout + i] = s * dyb[j * nout + i];
                    }
                    self.abar[i] = s * yb[i] - 2.0 * y[i] * acc;
                }
            }
            let (wg, bg) = gtheta[off..off + nout * (nin + 1)].split_at_mut(nin * nout);
            let yin = &self.y[k - 1];
            let dyin = &self.dy[k - 1];
            for i in 0..nout {
                let ab = self.abar[i];
                bg[i] += ab;
                let row = &mut wg[i * nin..(i + 1) * nin];
                for (r, yv) in row.iter_mut().zip(yin) {
                    *r += ab * yv;
                }
                for j in 0..d {
                    let dab = self.dabar[j * nout + i];
                    if dab == 0.0 {
                        continue;
                    }
                    if k == 1 {
                        row[j] += dab;
                    } else {
                        for (r, t) in row.iter_mut().zip(&dyin[j * nin..(j + 1) * nin]) {
                            *r += dab * t;
                        }
                    }
                }
            }
            let w = &p.theta[off..off + nin * nout];
            if k > 1 {
                let yb = &mut self.ybar[k - 1];
                let dyb = &mut self.dybar[k - 1];
                yb.iter_mut().for_each(|v| *v = 0.0);
                dyb.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..nout {
                    let row = &w[i * nin..(i + 1) * nin];
                    let ab = self.abar[i];
                    for (o, wi) in yb.iter_mut().zip(row) {
                        *o += wi * ab;
                    }
                    for j in 0..d {
                        let dab = self.dabar[j * nout + i];
                        for (o, wi) in dyb[j * nin..(j + 1) * nin].iter_mut().zip(row) {
                            *o += wi * dab;
                        }
                    }
                }
            } else {
                for i in 0..nout {
                    let ab = self.abar[i];
                    for j in 0..d {
                        xbar[j] += w[i * nin + j] * ab;
                    }
                }
            }
        }
    }
}
