//! RK4 integration of the coupled `(z, ℓ, L)` system and its exact
//! reverse-mode derivative.

use rayon::prelude::*;

use super::mlp::{MlpParams, Scratch};
use crate::error::{Error, Result};
use crate::measures::{BoxDomain, ParticleSet};

/// Flow horizon `T`.
pub const HORIZON: f64 = 1.0;

/// States may leave the box by this much before being flagged.
pub const EXIT_TOLERANCE: f64 = 1e-9;

/// Samples per parallel work unit; sums are reduced chunk by chunk in order.
pub(crate) const CHUNK: usize = 64;

/// A velocity field together with its divergence. Used to swap the
/// network for analytic fields in tests.
pub trait VelocityField: Sync {
    type Scratch: Send;

    fn dim(&self) -> usize;

    fn scratch(&self) -> Self::Scratch;

    /// Writes `v(z, t)` into `v` and returns `div v(z, t)`.
    fn eval(&self, s: &mut Self::Scratch, z: &[f64], t: f64, v: &mut [f64]) -> f64;

    /// Box the states are confined to, if any.
    fn domain(&self) -> Option<&BoxDomain> {
        None
    }
}

/// The network velocity `v = mask · u`.
pub struct MaskedMlp<'a>(pub &'a MlpParams);

impl VelocityField for MaskedMlp<'_> {
    type Scratch = Scratch;

    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn scratch(&self) -> Scratch {
        Scratch::new(self.0)
    }

    fn eval(&self, s: &mut Scratch, z: &[f64], t: f64, v: &mut [f64]) -> f64 {
        s.forward(self.0, z, t);
        s.velocity(v);
        s.divergence()
    }

    fn domain(&self) -> Option<&BoxDomain> {
        Some(self.0.domain())
    }
}

/// Per-sample paths on the uniform time grid `t_k = k T / n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub dim: usize,
    pub n_steps: usize,
    /// `states[(i * (n_steps + 1) + k) * dim ..]` is `z(x_i, t_k)`.
    pub states: Vec<f64>,
    /// `ℓ(x_i, t_k)`.
    pub logdet: Vec<f64>,
    /// Running kinetic integral `L(x_i, t_k) = ∫_0^{t_k} ½|v|²`.
    pub kinetic: Vec<f64>,
    pub weights: Vec<f64>,
    /// Step-end states that left the box by more than `EXIT_TOLERANCE`
    /// and were clamped back.
    pub exits: usize,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        let o = (i * (self.n_steps + 1) + k) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn initial(&self, i: usize) -> &[f64] {
        self.state(i, 0)
    }

    pub fn terminal(&self, i: usize) -> &[f64] {
        self.state(i, self.n_steps)
    }

    pub fn terminal_logdet(&self, i: usize) -> f64 {
        self.logdet[i * (self.n_steps + 1) + self.n_steps]
    }

    pub fn terminal_kinetic(&self, i: usize) -> f64 {
        self.kinetic[i * (self.n_steps + 1) + self.n_steps]
    }
}

/// `f(z, t) = (v, div v, ½|v|²)` written to `k`, laid out `[v.., div, kin]`.
fn rhs<F: VelocityField>(f: &F, s: &mut F::Scratch, z: &[f64], t: f64, k: &mut [f64]) {
    let d = z.len();
    let div = f.eval(s, z, t, &mut k[..d]);
    k[d] = div;
    k[d + 1] = 0.5 * k[..d].iter().map(|v| v * v).sum::<f64>();
}

/// Stage-input times and weights of the classical RK4 step.
const STAGE_TIME: [f64; 4] = [0.0, 0.5, 0.5, 1.0];
const STAGE_WEIGHT: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// One RK4 step from `state = [z.., ℓ, L]`. Stage inputs are written to
/// `stages` (4·d values) when given. Returns true if the state was clamped
/// by more than the tolerance.
fn rk4_step<F: VelocityField>(
    f: &F,
    s: &mut F::Scratch,
    state: &mut [f64],
    t: f64,
    h: f64,
    ks: &mut [f64],
    zin: &mut [f64],
    mut stages: Option<&mut [f64]>,
) -> bool {
    let d = f.dim();
    let w = d + 2;
    for st in 0..4 {
        for j in 0..d {
            zin[j] = if st == 0 { state[j] } else { state[j] + STAGE_TIME[st] * h * ks[(st - 1) * w + j] };
        }
        if let Some(buf) = stages.as_deref_mut() {
            buf[st * d..(st + 1) * d].copy_from_slice(&zin[..d]);
        }
        let (_, rest) = ks.split_at_mut(st * w);
        rhs(f, s, &zin[..d], t + STAGE_TIME[st] * h, &mut rest[..w]);
    }
    for j in 0..w {
        state[j] += h * (0..4).map(|st| STAGE_WEIGHT[st] * ks[st * w + j]).sum::<f64>();
    }
    let mut flagged = false;
    if let Some(dom) = f.domain() {
        for j in 0..d {
            let (a, b) = (dom.lower[j], dom.upper[j]);
            if state[j] < a || state[j] > b {
                flagged |= state[j] < a - EXIT_TOLERANCE || state[j] > b + EXIT_TOLERANCE;
                state[j] = state[j].clamp(a, b);
            }
        }
    }
    flagged
}

fn check_inputs<F: VelocityField>(f: &F, x0: &ParticleSet, n_steps: usize) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::param("n_steps", "need at least one step"));
    }
    if x0.dim() != f.dim() {
        return Err(Error::InvalidSpec(format!(
            "{}-dimensional points for a {}-dimensional field",
            x0.dim(),
            f.dim()
        )));
    }
    if let Some(dom) = f.domain() {
        if let Some(p) = x0.iter().find(|p| !dom.contains(p)) {
            return Err(Error::Domain { point: p.to_vec() });
        }
    }
    Ok(())
}

fn non_finite(step: usize) -> Error {
    Error::Numerical(format!("non-finite flow state at RK4 step {step}"))
}

/// Integrates every sample over `[0, T]` with `n_steps` RK4 steps and keeps
/// the full paths.
pub fn integrate_field<F: VelocityField>(f: &F, x0: &ParticleSet, n_steps: usize) -> Result<TrajectoryBatch> {
    check_inputs(f, x0, n_steps)?;
    let d = f.dim();
    let n = x0.len();
    let ns = n_steps + 1;
    let h = HORIZON / n_steps as f64;
    let chunks: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)>> = x0
        .points()
        .par_chunks(CHUNK * d)
        .map(|pts| {
            let m = pts.len() / d;
            let mut s = f.scratch();
            let mut states = Vec::with_capacity(m * ns * d);
            let mut logdet = Vec::with_capacity(m * ns);
            let mut kinetic = Vec::with_capacity(m * ns);
            let mut exits = 0;
            let mut ks = vec![0.0; 4 * (d + 2)];
            let mut zin = vec![0.0; d];
            let mut state = vec![0.0; d + 2];
            for p in pts.chunks(d) {
                state[..d].copy_from_slice(p);
                state[d] = 0.0;
                state[d + 1] = 0.0;
                states.extend_from_slice(p);
                logdet.push(0.0);
                kinetic.push(0.0);
                for k in 0..n_steps {
                    exits += rk4_step(f, &mut s, &mut state, k as f64 * h, h, &mut ks, &mut zin, None) as usize;
                    if state.iter().any(|v| !v.is_finite()) {
                        return Err(non_finite(k + 1));
                    }
                    states.extend_from_slice(&state[..d]);
                    logdet.push(state[d]);
                    kinetic.push(state[d + 1]);
                }
            }
            Ok((states, logdet, kinetic, exits))
        })
        .collect();
    let mut out = TrajectoryBatch {
        dim: d,
        n_steps,
        states: Vec::with_capacity(n * ns * d),
        logdet: Vec::with_capacity(n * ns),
        kinetic: Vec::with_capacity(n * ns),
        weights: x0.weights().to_vec(),
        exits: 0,
    };
    for c in chunks {
        let (s, l, k, e) = c?;
        out.states.extend(s);
        out.logdet.extend(l);
        out.kinetic.extend(k);
        out.exits += e;
    }
    Ok(out)
}

/// Network flow of `x0` under `params`.
pub fn integrate_flow(x0: &ParticleSet, params: &MlpParams, n_steps: usize) -> Result<TrajectoryBatch> {
    integrate_field(&MaskedMlp(params), x0, n_steps)
}

/// Terminal `(z, ℓ, L)` of one sample without keeping the path.
pub(crate) fn terminal_state<F: VelocityField>(
    f: &F,
    s: &mut F::Scratch,
    x: &[f64],
    n_steps: usize,
    state: &mut [f64],
) -> Result<()> {
    let d = f.dim();
    let h = HORIZON / n_steps as f64;
    let mut ks = vec![0.0; 4 * (d + 2)];
    let mut zin = vec![0.0; d];
    state[..d].copy_from_slice(x);
    state[d] = 0.0;
    state[d + 1] = 0.0;
    for k in 0..n_steps {
        rk4_step(f, s, state, k as f64 * h, h, &mut ks, &mut zin, None);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(k + 1));
        }
    }
    Ok(())
}

/// Per-sample loss `C + (2/α) L` with `C = −ℓ + ½|z|² + (d/2) log 2π`,
/// and its parameter gradient added to `grad` with weight `w`.
/// Returns `(C, L)`.
pub(crate) fn sample_loss_grad(
    p: &MlpParams,
    s: &mut Scratch,
    x: &[f64],
    n_steps: usize,
    kin_weight: f64,
    w: f64,
    grad: &mut [f64],
    tape: &mut Vec<f64>,
) -> Result<(f64, f64)> {
    let f = MaskedMlp(p);
    let d = p.dim();
    let h = HORIZON / n_steps as f64;
    let wd = d + 2;
    let mut ks = vec![0.0; 4 * wd];
    let mut zin = vec![0.0; d];
    let mut state = vec![0.0; wd];
    state[..d].copy_from_slice(x);
    tape.resize(n_steps * 4 * d, 0.0);
    for k in 0..n_steps {
        rk4_step(&f, s, &mut state, k as f64 * h, h, &mut ks, &mut zin, Some(&mut tape[k * 4 * d..(k + 1) * 4 * d]));
        if state.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(k + 1));
        }
    }
    let z = &state[..d];
    let c = -state[d] + 0.5 * z.iter().map(|v| v * v).sum::<f64>() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    let l = state[d + 1];

    // Adjoints: ℓ and L do not feed back, so their cotangents stay constant.
    let mut zbar: Vec<f64> = z.iter().map(|v| w * v).collect();
    let lbar = -w;
    let kbar = w * kin_weight;
    let mut vbar = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut xb = vec![0.0; d];
    for k in (0..n_steps).rev() {
        let t = k as f64 * h;
        let stages = &tape[k * 4 * d..(k + 1) * 4 * d];
        let zout = zbar.clone();
        for st in 0..4 {
            for j in 0..d {
                vbar[st][j] = h * STAGE_WEIGHT[st] * zout[j];
            }
        }
        for st in (0..4).rev() {
            s.forward(p, &stages[st * d..(st + 1) * d], t + STAGE_TIME[st] * h);
            s.backward(
                p,
                &vbar[st],
                h * STAGE_WEIGHT[st] * lbar,
                h * STAGE_WEIGHT[st] * kbar,
                grad,
                &mut xb,
            );
            for j in 0..d {
                zbar[j] += xb[j];
                if st > 0 {
                    vbar[st - 1][j] += STAGE_TIME[st] * h * xb[j];
                }
            }
        }
    }
    Ok((c, l))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `v(z) = a z` with divergence `a d`.
    pub(crate) struct Linear(pub f64, pub usize);

    impl VelocityField for Linear {
        type Scratch = ();

        fn dim(&self) -> usize {
            self.1
        }

        fn scratch(&self) {}

        fn eval(&self, _: &mut (), z: &[f64], _t: f64, v: &mut [f64]) -> f64 {
            v.iter_mut().zip(z).for_each(|(vi, zi)| *vi = self.0 * zi);
            self.0 * self.1 as f64
        }
    }

    #[test]
    fn linear_field_is_exponential_with_fourth_order_error() {
        let x0 = ParticleSet::uniform(1, vec![0.3, -1.2]).unwrap();
        let mut errs = Vec::new();
        for n in [4, 8, 16, 32] {
            let tr = integrate_field(&Linear(1.0, 1), &x0, n).unwrap();
            let ez = (tr.terminal(1)[0] - (-1.2) * std::f64::consts::E).abs();
            assert!(ez < 1e-2);
            assert!((tr.terminal_logdet(0) - 1.0).abs() < 1e-12);
            errs.push(ez);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((12.0..=20.0).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn zero_params_leave_points_fixed() {
        let p = MlpParams::zeros(BoxDomain::cube(2, -3.0, 3.0).unwrap(), &[6], 1.0).unwrap();
        let x0 = ParticleSet::uniform(2, vec![0.1, 0.2, -2.0, 2.5]).unwrap();
        let tr = integrate_flow(&x0, &p, 8).unwrap();
        for i in 0..2 {
            assert_eq!(tr.terminal(i), x0.point(i));
            assert_eq!(tr.terminal_logdet(i), 0.0);
            assert_eq!(tr.terminal_kinetic(i), 0.0);
        }
        assert_eq!(tr.state(1, 0), x0.point(1));
    }

    #[test]
    fn strong_field_keeps_states_in_box() {
        let dom = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let p = MlpParams::random(dom.clone(), &[8], 50.0, 4.0, 5).unwrap();
        let pts: Vec<f64> = (0..200).map(|i| ((i * 37 % 101) as f64 / 50.5) - 1.0).collect();
        let tr = integrate_flow(&ParticleSet::uniform(2, pts).unwrap(), &p, 16).unwrap();
        assert_eq!(tr.exits, 0);
        assert!(tr.states.chunks(2).all(|z| dom.contains_within(z, EXIT_TOLERANCE)));
    }
}
