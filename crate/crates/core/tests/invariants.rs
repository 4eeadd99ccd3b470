use harnack_core::barrier::{normalized_residual, normalized_residual_fd, BarrierParams};
use harnack_core::harnack::{harnack_bound, max_quadratic_gap};
use harnack_core::kernel::ln_explicit_kernel_a0;
use harnack_core::measure::{doubling_quotient, scaling_defect, DoublingSample};
use harnack_core::{HalfSpacePoint, OperatorParams};
use proptest::prelude::*;

fn coupling() -> impl Strategy<Value = (usize, f64, Vec<f64>)> {
    (0usize..=2, -0.9f64..4.0).prop_flat_map(|(n, c)| (Just(n), Just(c), prop::collection::vec(-0.6f64..0.6, n)))
}

fn point(n: usize) -> impl Strategy<Value = HalfSpacePoint> {
    (prop::collection::vec(-3.0f64..3.0, n), 1e-3f64..4.0).prop_map(|(x, y)| HalfSpacePoint { x, y })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn volume_is_homogeneous((n, c, _a) in coupling(), y0 in 0.0f64..50.0, r in 1e-3f64..20.0, lambda in 1e-3f64..1e3) {
        let p = OperatorParams::uncoupled(n, c).unwrap();
        prop_assert!(scaling_defect(&p, y0, r, lambda) < 1e-12);
    }

    #[test]
    fn doubling_quotient_is_positive_and_finite(c in -0.9f64..4.0, y0 in 0.0f64..10.0, r in 1e-3f64..5.0, k in 1.0f64..50.0) {
        let p = OperatorParams::uncoupled(1, c).unwrap();
        let q = doubling_quotient(&p, &DoublingSample { y0, r, s: k * r });
        prop_assert!(q.is_finite() && q > 0.0);
    }

    #[test]
    fn quadratic_gap_is_translation_invariant_and_maximal(
        x in prop::collection::vec(-5.0f64..5.0, 2),
        y in prop::collection::vec(-5.0f64..5.0, 2),
        shift in prop::collection::vec(-5.0f64..5.0, 2),
        c1 in 0.1f64..5.0,
        extra in 0.05f64..5.0,
        probe in prop::collection::vec(-20.0f64..20.0, 2),
    ) {
        let c2 = c1 + extra;
        let (xi, g) = max_quadratic_gap(&x, &y, c1, c2).unwrap();
        let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (xi_s, g_s) = max_quadratic_gap(&xs, &ys, c1, c2).unwrap();
        prop_assert!((g - g_s).abs() <= 1e-9 * (1.0 + g.abs()));
        for k in 0..2 {
            prop_assert!((xi_s[k] - xi[k] - shift[k]).abs() <= 1e-9 * (1.0 + xi[k].abs()));
        }
        let at = |p: &[f64]| {
            let d1: f64 = p.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let d2: f64 = p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            c1 * d1 - c2 * d2
        };
        prop_assert!((at(&xi) - g).abs() <= 1e-9 * (1.0 + g.abs()));
        prop_assert!(at(&probe) <= g + 1e-9 * (1.0 + g.abs()));
    }

    #[test]
    fn harnack_bound_grows_with_constant(c in 0.0f64..3.0, s in 0.01f64..1.0, dt in 1e-3f64..1.0, z1 in point(1), z2 in point(1), k in 1.0f64..10.0, bump in 0.01f64..5.0) {
        let p = OperatorParams::uncoupled(1, c).unwrap();
        let a = harnack_bound(s, &z2, s + dt, &z1, &p, k).unwrap();
        let b = harnack_bound(s, &z2, s + dt, &z1, &p, k + bump).unwrap();
        prop_assert!(b >= a && a >= 1.0);
    }

    #[test]
    fn explicit_kernel_is_symmetric((n, c, _a) in coupling(), t in 0.01f64..3.0, z1 in point(2), z2 in point(2)) {
        let p = OperatorParams::uncoupled(n, c).unwrap();
        let cut = |z: &HalfSpacePoint| HalfSpacePoint { x: z.x[..n].to_vec(), y: z.y };
        let a = ln_explicit_kernel_a0(t, &cut(&z1), &cut(&z2), &p).unwrap();
        let b = ln_explicit_kernel_a0(t, &cut(&z2), &cut(&z1), &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn barrier_paths_agree((n, c, a) in coupling(), t in 0.0f64..0.9, z in point(2), kappa in 0.01f64..0.5, alpha in 0.1f64..5.0) {
        let p = OperatorParams::new(n, c, &a).unwrap();
        let bp = BarrierParams::new(alpha, kappa, 1.0, 0.1).unwrap();
        let z = HalfSpacePoint { x: z.x[..n].to_vec(), y: z.y.max(0.05) };
        let closed = normalized_residual(t, &z, &bp, &p);
        let fd = normalized_residual_fd(t, &z, &bp, &p);
        prop_assert!((closed - fd).abs() <= 1e-6 * (closed.abs() + fd.abs() + 1.0), "{closed} vs {fd}");
    }
}
