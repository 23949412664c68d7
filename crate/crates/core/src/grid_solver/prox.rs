use crate::error::{Error, Result};
use crate::functionals::Alpha;
use crate::measures::DensitySlice;

const MAX_NEWTON: usize = 100;

/// Solves `e^y + s·y = w` for `y` (`s > 0`). The left side is convex and
/// increasing, so Newton from any point with nonnegative residual decreases
/// monotonically onto the root. Both `w/s` and `ln(1 + |w|)` are such points.
fn solve_exp_linear(w: f64, s: f64) -> Result<f64> {
    let mut y = (w / s).min(w.abs().ln_1p());
    for _ in 0..MAX_NEWTON {
        let e = y.exp();
        let h = e + s * y - w;
        if h.abs() <= 1e-14 * (e.abs() + (s * y).abs() + w.abs()).max(1e-300) {
            return Ok(y);
        }
        let next = y - h / (e + s);
        if !(next < y) {
            return Ok(y);
        }
        y = next;
    }
    Err(Error::Numerical(format!("log-linear Newton failed for w={w}, s={s}")))
}

/// `argmin_r ½(r − u)² + s·r·log(r/q)`, i.e. the root of
/// `r + s(log(r/q) + 1) = u`, for `q > 0`, `s > 0`.
pub fn prox_kl_scalar(u: f64, q: f64, s: f64) -> Result<f64> {
    if !(q > 0.0) || !(s > 0.0) {
        return Err(Error::param("prox_kl_scalar", format!("needs q > 0 and s > 0, got q={q}, s={s}")));
    }
    // r = e^y: e^y + s·y = u − s(1 − ln q).
    Ok(solve_exp_linear(u - s * (1.0 - q.ln()), s)?.exp())
}

/// `argmin_r ½(r − u)² + s·(r log(r/q) − r + q)`, the root of
/// `r + s·log(r/q) = u`. Same as the KL prox on unit-mass slices but with
/// `r = q` as its fixed point.
pub(crate) fn prox_gkl_scalar(u: f64, q: f64, s: f64) -> Result<f64> {
    prox_kl_scalar(u + s, q, s)
}

/// Terminal prox: per-cell prox of `step·α` times the (mass-compensated)
/// KL integrand, then renormalization to unit mass. For `α = ∞` the result
/// is `ρ_1`, the projection onto the terminal constraint.
pub fn prox_terminal(rho_t: &[f64], rho1: &DensitySlice, alpha: Alpha, step: f64) -> Result<Vec<f64>> {
    let q = rho1.values();
    if rho_t.len() != q.len() {
        return Err(Error::GridMismatch("terminal slice length differs from target".into()));
    }
    if !(step > 0.0) {
        return Err(Error::param("step", format!("{step} must be positive")));
    }
    let alpha = match alpha {
        Alpha::Infinite => return Ok(q.to_vec()),
        Alpha::Finite(a) => a,
    };
    if q.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidSpec("target slice must be strictly positive".into()));
    }
    let s = step * alpha;
    let mut out = rho_t
        .iter()
        .zip(q)
        .map(|(&u, &qc)| prox_gkl_scalar(u, qc, s))
        .collect::<Result<Vec<f64>>>()?;
    renormalize(&mut out, rho1.grid().cell_volume())?;
    Ok(out)
}

pub(crate) fn renormalize(r: &mut [f64], dx: f64) -> Result<()> {
    let mass = r.iter().sum::<f64>() * dx;
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Numerical(format!("cannot renormalize a slice of mass {mass}")));
    }
    r.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{discretize_gaussian, GaussianSpec, GridSpec};

    #[test]
    fn scalar_example_against_bisection() {
        let r = prox_kl_scalar(2.0, 1.0, 1.0).unwrap();
        // r + ln r + 1 = 2 by bisection.
        let (mut lo, mut hi) = (1e-9f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + mid.ln() + 1.0 - 2.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((r - lo).abs() < 1e-10);
        assert!((r - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_residual_over_wide_range() {
        for &u in &[-1e4, -3.0, 0.0, 1e-3, 1.0, 50.0, 1e5] {
            for &q in &[1e-12, 0.3, 7.0] {
                for &s in &[1e-6, 0.5, 1e5] {
                    let r = prox_kl_scalar(u, q, s).unwrap();
                    assert!(r > 0.0 || (u - s * (1.0 - q.ln())) / s < -700.0);
                    if r > 1e-200 {
                        let res = r + s * ((r / q).ln() + 1.0) - u;
                        assert!(res.abs() <= 1e-10 * (1.0 + u.abs() + s * (1.0 + q.ln().abs())), "{u} {q} {s}: {res}");
                    }
                }
            }
        }
    }

    #[test]
    fn terminal_fixed_point_and_hard_constraint() {
        let g = GridSpec::unit(1, 32, 4).unwrap();
        let q = discretize_gaussian(&GaussianSpec::new(vec![0.6], 0.1), &g).unwrap().floored(1e-12);
        for a in [1e-2, 1.0, 1e4] {
            for step in [0.01, 0.3, 50.0] {
                let out = prox_terminal(q.values(), &q, Alpha::Finite(a), step).unwrap();
                let err = out.iter().zip(q.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "alpha {a}: {err}");
            }
        }
        let u = vec![3.0; 32];
        assert_eq!(prox_terminal(&u, &q, Alpha::Infinite, 1.0).unwrap(), q.values());
    }

    #[test]
    fn terminal_output_unit_mass_and_between_input_and_target() {
        let g = GridSpec::unit(1, 16, 4).unwrap();
        let q = discretize_gaussian(&GaussianSpec::new(vec![0.4], 0.15), &g).unwrap().floored(1e-12);
        let u = discretize_gaussian(&GaussianSpec::new(vec![0.6], 0.15), &g).unwrap();
        let mut prev = f64::INFINITY;
        for s in [1e-3, 1e-1, 10.0, 1e3] {
            let r = prox_terminal(u.values(), &q, Alpha::Finite(1.0), s).unwrap();
            let mass: f64 = r.iter().sum::<f64>() / 16.0;
            assert!((mass - 1.0).abs() < 1e-12);
            // Larger weight pulls the output towards the target.
            let rs = DensitySlice::new(g.clone(), r).unwrap();
            let d = rs.l1_distance(&q).unwrap();
            assert!(d < prev);
            prev = d;
        }
        assert!(prev < 1e-2);
    }
}
