use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 100;

/// Euclidean projection of `(a, b)` onto `K_2 = {a + |b|²/2 ≤ 0}`, written
/// into `out` as `[a', b'...]`.
///
/// Outside the cone the projection sits at `(−β²/2, β b/|b|)` where `β` is
/// the largest root of `β³/2 + (a + 1)β − |b| = 0`. The cubic is convex on
/// `β > 0` and positive at `β = |b|`, so Newton started there decreases
/// monotonically onto that root.
pub(crate) fn project_into(a: f64, b: &[f64], out: &mut [f64]) -> Result<()> {
    let r2: f64 = b.iter().map(|x| x * x).sum();
    if a + 0.5 * r2 <= 0.0 {
        out[0] = a;
        out[1..].copy_from_slice(b);
        return Ok(());
    }
    let r = r2.sqrt();
    if r == 0.0 {
        out[0] = 0.0;
        out[1..].iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    let mut beta = r;
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        let cubic = 0.5 * beta * beta * beta;
        let lin = (a + 1.0) * beta;
        let f = cubic + lin - r;
        if f.abs() <= NEWTON_TOL * cubic.abs().max(lin.abs()).max(r).max(1.0) {
            converged = true;
            break;
        }
        let df = 1.5 * beta * beta + a + 1.0;
        let next = beta - f / df;
        if !next.is_finite() || next < 0.0 {
            beta *= 0.5;
        } else if next >= beta {
            // No further decrease representable: at the root up to round-off.
            converged = true;
            break;
        } else {
            beta = next;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "cone projection did not converge for a={a}, b={b:?}"
        )));
    }
    out[0] = -0.5 * beta * beta;
    let s = beta / r;
    for (o, x) in out[1..].iter_mut().zip(b) {
        *o = s * x;
    }
    Ok(())
}

/// Projection onto `K_2`; see [`project_into`].
pub fn project_cone_k2(a: f64, b: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut out = vec![0.0; 1 + b.len()];
    project_into(a, b, &mut out)?;
    let bp = out.split_off(1);
    Ok((out[0], bp))
}

/// `prox_{step·f_2}(ρ, m)` by Moreau: `x − step·P_K(x/step)`.
pub fn prox_bb(rho: f64, m: &[f64], step: f64) -> Result<(f64, Vec<f64>)> {
    if !(step > 0.0) {
        return Err(Error::param("step", format!("{step} must be positive")));
    }
    let scaled: Vec<f64> = m.iter().map(|v| v / step).collect();
    let a = rho / step;
    if a + 0.5 * scaled.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
        // Inside K: the prox is exactly the origin.
        return Ok((0.0, vec![0.0; m.len()]));
    }
    let (pa, pb) = project_cone_k2(a, &scaled)?;
    Ok((
        rho - step * pa,
        m.iter().zip(&pb).map(|(v, p)| v - step * p).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{perspective_f, ConeParams};
    use rand::{Rng, SeedableRng};

    fn in_cone(a: f64, b: &[f64]) -> bool {
        a + 0.5 * b.iter().map(|x| x * x).sum::<f64>() <= 1e-12
    }

    #[test]
    fn fixed_examples() {
        assert_eq!(project_cone_k2(-1.0, &[0.0]).unwrap(), (-1.0, vec![0.0]));
        assert_eq!(project_cone_k2(1.0, &[0.0]).unwrap(), (0.0, vec![0.0]));
        let (a, b) = project_cone_k2(0.0, &[1.0]).unwrap();
        // Root of β³ + 2β − 2 = 0 by bisection.
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid.powi(3) + 2.0 * mid - 2.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((b[0] - lo).abs() < 1e-12);
        assert!((b[0] - 0.7709).abs() < 1e-4);
        assert!((a + 0.2971).abs() < 1e-4);
    }

    #[test]
    fn boundary_projection_is_normal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = rng.random_range(-3.0..3.0);
            let b: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (pa, pb) = project_cone_k2(a, &b).unwrap();
            assert!(in_cone(pa, &pb));
            if !in_cone(a, &b) {
                // Normal of a + |b|²/2 at the boundary point is (1, b').
                let da = a - pa;
                let db: Vec<f64> = b.iter().zip(&pb).map(|(x, y)| x - y).collect();
                let cross: Vec<f64> = db.iter().zip(&pb).map(|(d, p)| d - da * p).collect();
                assert!(da >= 0.0);
                assert!(cross.iter().all(|c| c.abs() < 1e-8), "{cross:?}");
            }
        }
    }

    #[test]
    fn extreme_inputs_converge() {
        for (a, b) in [(1e8, 1e-8), (-1e6, 2e3), (-50.0, 10.1), (1e-10, 1e9), (-0.999_999, 1e-7)] {
            let (pa, pb) = project_cone_k2(a, &[b]).unwrap();
            assert!(pa + 0.5 * pb[0] * pb[0] <= 1e-12 * (1.0 + pb[0] * pb[0]));
        }
    }

    #[test]
    fn prox_zero_momentum_unchanged() {
        for rho in [0.0, 0.3, 5.0] {
            let (r, m) = prox_bb(rho, &[0.0, 0.0], 0.7).unwrap();
            assert_eq!(r, rho);
            assert_eq!(m, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn prox_dominates_input_and_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let c = ConeParams::QUADRATIC;
        for _ in 0..200 {
            let rho = rng.random_range(-1.0..2.0);
            let m = [rng.random_range(-2.0..2.0)];
            let s = rng.random_range(0.05..2.0);
            let (pr, pm) = prox_bb(rho, &m, s).unwrap();
            let obj = |t: f64, x: f64| s * perspective_f(c, t, &[x]).value() + 0.5 * ((t - rho).powi(2) + (x - m[0]).powi(2));
            let at = obj(pr, pm[0]);
            assert!(at.is_finite());
            assert!(at <= obj(rho, m[0]) + 1e-12);
            assert!(at <= obj(0.0, 0.0) + 1e-12);
            // Optimality: perturbations do not improve.
            for (dt, dx) in [(1e-5, 0.0), (-1e-5, 0.0), (0.0, 1e-5), (0.0, -1e-5)] {
                assert!(at <= obj(pr + dt, pm[0] + dx) + 1e-9);
            }
        }
    }
}
