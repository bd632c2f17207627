//! Property tests for the model algebra, the reduced flow and periodic orbits.

use proptest::prelude::*;
use slowctl::integrate::{integrate_reduced, IntegratorConfig};
use slowctl::models::{eval_fields, ModelSpec};
use slowctl::orbits::{orbit_average, orbit_for_level, orbit_from_point, OrbitConfig};

fn models() -> [ModelSpec; 2] {
    [ModelSpec::rotation_example1(), ModelSpec::lotka_volterra_example2()]
}

fn lv_f(y: &[f64]) -> [f64; 2] {
    [-y[0] + y[0] * y[1], y[1] - y[0] * y[1]]
}

fn lv_grad_f(y: &[f64]) -> [f64; 2] {
    [1.0 / y[0] - 1.0, 1.0 / y[1] - 1.0]
}

proptest! {
    #[test]
    fn constant_of_motion_is_exact(a in 0.0f64..1.0, b in 0.0f64..1.0, s in 0.0f64..1.0) {
        for model in models() {
            let (lo, hi) = model.state_box();
            let y = [lo[0] + a * (hi[0] - lo[0]), lo[1] + b * (hi[1] - lo[1])];
            let u = [model.u_lo[0] + s * (model.u_hi[0] - model.u_lo[0])];
            let ev = eval_fields(&model, &u, &y).unwrap();
            let dot = ev.observable_jacobian[0] * ev.f[0] + ev.observable_jacobian[1] * ev.f[1];
            prop_assert!(dot.abs() <= 1e-12, "{:?} {y:?}: {dot}", model.kind);
        }
    }

    #[test]
    fn lotka_volterra_fields_match_closed_forms(y1 in 0.05f64..10.0, y2 in 0.05f64..10.0, u in 0.0f64..1.0) {
        let model = ModelSpec::lotka_volterra_example2();
        let ev = eval_fields(&model, &[u], &[y1, y2]).unwrap();
        let f = lv_f(&[y1, y2]);
        prop_assert_eq!(ev.f.clone(), f.to_vec());
        let grad = lv_grad_f(&[y1, y2]);
        // h = F'(y) g(u, y) with g = (-u y1, 0)
        let h = grad[0] * (-u * y1);
        prop_assert!((ev.h[0] - h).abs() <= 1e-14);
        prop_assert!((ev.h[0] - u * (y1 - 1.0)).abs() <= 1e-12);
        let z = y2.ln() - y2 + y1.ln() - y1;
        prop_assert!((ev.observable[0] - z).abs() <= 1e-14);
        prop_assert!(ev.r >= 0.0);
        prop_assert!((ev.r - (u * u + (z + 2.05).powi(2))).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reduced_flow_conserves_observable(a in 0.2f64..3.0, b in 0.2f64..3.0, s in 0.0f64..1.0, which in 0usize..2) {
        let model = &models()[which];
        let y0 = [a, b];
        let u = model.u_lo[0] + s * (model.u_hi[0] - model.u_lo[0]);
        let cfg = IntegratorConfig::default().with_stride(10);
        let traj = integrate_reduced(model, |_, _, out: &mut [f64]| out[0] = u, &y0, 50.0, &cfg).unwrap();
        let z0 = model.observable1(&y0);
        let worst = traj.states.iter().map(|y| (model.observable1(y) - z0).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6, "drift {worst}");
        prop_assert!(traj.running_cost.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn orbit_shift_invariance(z in -3.0f64..-2.05, frac in 0.1f64..0.9) {
        let model = ModelSpec::lotka_volterra_example2();
        let cfg = OrbitConfig::default();
        let a = orbit_for_level(&model, &[z], &cfg).unwrap();
        let b = orbit_from_point(&model, &a.nodes[(frac * a.nodes.len() as f64) as usize], &cfg).unwrap();
        prop_assert!((a.period - b.period).abs() <= 1e-6);
        for node in a.nodes.iter().chain(&b.nodes) {
            prop_assert!((model.observable1(node) - z).abs() <= 1e-6);
        }
        let probes: [fn(&[f64]) -> f64; 3] = [|y| y[0], |y| y[1], |y| y[0] * y[1]];
        for q in probes {
            prop_assert!((orbit_average(&a, q) - orbit_average(&b, q)).abs() <= 1e-5);
        }
    }
}
