use proptest::prelude::*;

use otflow::functionals::{kl_divergence, kl_dual_objective};
use otflow::grid_solver::{project_cone_k2, prox_bb};
use otflow::measures::{DensitySlice, GridSpec};
use otflow::transport_oracles::w2_squared_1d;

fn slice(v: Vec<f64>) -> DensitySlice {
    let n = v.len();
    DensitySlice::normalized(GridSpec::unit(1, n, 2).unwrap(), v).unwrap()
}

proptest! {
    #[test]
    fn projection_is_feasible_and_idempotent(a in -5.0..5.0f64, b in prop::collection::vec(-5.0..5.0f64, 1..4)) {
        let (pa, pb) = project_cone_k2(a, &b).unwrap();
        prop_assert!(pa + 0.5 * pb.iter().map(|x| x * x).sum::<f64>() <= 1e-12);
        let (qa, qb) = project_cone_k2(pa, &pb).unwrap();
        prop_assert!((qa - pa).abs() < 1e-9);
        for (x, y) in qb.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_nonexpansive(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -3.0..3.0f64) {
        let (pa, pb) = project_cone_k2(a, &[b]).unwrap();
        let (qa, qb) = project_cone_k2(c, &[d]).unwrap();
        let before = (a - c).hypot(b - d);
        let after = (pa - qa).hypot(pb[0] - qb[0]);
        prop_assert!(after <= before + 1e-9);
    }

    #[test]
    fn prox_output_has_nonnegative_density(rho in -4.0..4.0f64, m in -4.0..4.0f64, step in 0.01..3.0f64) {
        let (r, q) = prox_bb(rho, &[m], step).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!(r > 0.0 || q[0] == 0.0);
    }

    #[test]
    fn dual_never_exceeds_kl(p in prop::collection::vec(0.01..2.0f64, 8), q in prop::collection::vec(0.01..2.0f64, 8),
                             h in prop::collection::vec(-3.0..3.0f64, 8)) {
        let (p, q) = (slice(p), slice(q));
        let kl = kl_divergence(&p, &q).unwrap().value();
        prop_assert!(kl_dual_objective(&p, &q, &h).unwrap() <= kl + 1e-9);
    }

    #[test]
    fn w2_is_symmetric_and_nonnegative(p in prop::collection::vec(0.01..2.0f64, 12), q in prop::collection::vec(0.01..2.0f64, 12)) {
        let (p, q) = (slice(p), slice(q));
        let (ab, ba) = (w2_squared_1d(&p, &q).unwrap(), w2_squared_1d(&q, &p).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}
