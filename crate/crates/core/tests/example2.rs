//! End-to-end checks on the Lotka-Volterra problem, sharing one solve.

use std::io::BufReader;
use std::sync::OnceLock;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use slowctl::config::RunConfig;
use slowctl::lp::DualSolution;
use slowctl::perturbed::simulate_closed_loop;
use slowctl::pipeline::{integrator_config, solve_stage, stop_rule, synthesize_stage, SolveOutput, SynthesisOutput};
use slowctl::synthesis::Policy;

struct Shared {
    cfg: RunConfig,
    solve: SolveOutput,
    synth: SynthesisOutput,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig::example2();
        let solve = solve_stage(&cfg).unwrap();
        let synth = synthesize_stage(&cfg, &solve.dual).unwrap();
        Shared { cfg, solve, synth }
    })
}

fn lv_observable(y: &[f64]) -> f64 {
    y[1].ln() - y[1] + y[0].ln() - y[0]
}

#[test]
fn certificate_reload_is_bit_exact_on_probes() {
    let dual = &shared().solve.dual;
    let mut buf = Vec::new();
    dual.write_text(&mut buf).unwrap();
    let back = DualSolution::read_text(BufReader::new(&buf[..])).unwrap();
    assert_eq!(&back, dual);
    let (lo, hi) = dual.grid_hull();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..10_000 {
        let z = rng.gen_range(lo..=hi);
        let y = [rng.gen_range(0.1..4.0), rng.gen_range(0.1..6.0)];
        let v = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let k = dual.nearest_node(z);
        assert_eq!(back.zeta(z).to_bits(), dual.zeta(z).to_bits());
        assert_eq!(back.zeta_prime(z).to_bits(), dual.zeta_prime(z).to_bits());
        assert_eq!(back.eta_grad_dot(k, &y, &v).to_bits(), dual.eta_grad_dot(k, &y, &v).to_bits());
    }
}

#[test]
fn averaged_drift_is_nonnegative_on_every_level() {
    let tables = &shared().synth.tables;
    for (z, h) in tables.z_grid.iter().zip(&tables.h_star) {
        assert!(*h >= -1e-9, "h at {z} is {h}");
    }
}

#[test]
fn averaged_trajectory_rises_to_target() {
    let avg = &shared().synth.averaged;
    for w in avg.z.windows(2) {
        assert!(w[1] >= w[0] - 1e-12);
    }
    assert!(avg.z.iter().all(|&z| z <= -2.05 + 1e-3));
}

#[test]
fn averaged_gap_respects_weak_duality() {
    let s = shared();
    let c = s.solve.problem.discount;
    assert!(c * s.synth.averaged.r_tilde - s.solve.dual.value >= -1e-3);
    assert!(s.synth.gap >= -1e-3 / c);
}

#[test]
fn stop_rule_holds_the_level_and_observables_agree() {
    let s = shared();
    let problem = &s.solve.problem;
    let stop = stop_rule(problem).unwrap();
    let icfg = integrator_config(&s.cfg).with_stride(50);
    let report = simulate_closed_loop(problem, &s.synth.policy, 40.0, Some(&stop), None, &icfg).unwrap();
    let tr = &report.trajectory;
    for (y, z) in tr.states.iter().zip(&tr.observables) {
        assert!((z[0] - lv_observable(y)).abs() <= 1e-12);
    }
    let switch = report.switch_time.expect("target level reached");
    for (i, &t) in tr.times.iter().enumerate() {
        if t > switch {
            assert!((tr.observables[i][0] - stop.level).abs() <= 1e-5, "t={t}: {}", tr.observables[i][0]);
            assert_eq!(tr.controls[i], stop.fallback);
        }
    }
    // the policy itself never leaves the control box
    for y in tr.states.iter().take(200) {
        let u = s.synth.policy.control(y, lv_observable(y));
        assert!((0.0..=1.0).contains(&u[0]));
    }
}
