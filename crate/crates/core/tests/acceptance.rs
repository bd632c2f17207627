//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#![allow(clippy::needless_range_loop)]

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use slowctl::config::RunConfig;
use slowctl::integrate::{integrate_reduced, IntegratorConfig};
use slowctl::lp::{certificate_diagnostics, solve_finite_lp, FiniteLp, LpStatus, RowKind, Sense};
use slowctl::models::{check_constant_of_motion, ModelSpec};
use slowctl::orbits::orbit_average;
use slowctl::perturbed::simulate_frozen;
use slowctl::pipeline::{
    feedback_policy, grid_orbits, integrator_config, load_dual, run_command, solve_stage, stop_rule, Summary, Verb,
};

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn get(s: &Summary, key: &str) -> f64 {
    s.get(key).unwrap_or_else(|| panic!("summary lacks {key}"))
}

struct SweepLine {
    eps: f64,
    sup_gap: f64,
    cost_gap: f64,
}

fn read_sweep(path: &Path) -> Vec<SweepLine> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').take(4).map(|x| x.parse().unwrap()).collect();
            SweepLine { eps: f[0], sup_gap: f[1], cost_gap: f[3] }
        })
        .collect()
}

fn conservation(r: &mut Report) {
    let mut worst_flow: f64 = 0.0;
    let mut worst_alg: f64 = 0.0;
    let cases: [(ModelSpec, Vec<[f64; 2]>); 2] = [
        (ModelSpec::rotation_example1(), vec![[1.0, 0.0], [0.3, -1.2], [-2.0, 0.5]]),
        (ModelSpec::lotka_volterra_example2(), vec![[0.8916, 3.137], [0.5, 2.0], [2.0, 0.5]]),
    ];
    let cfg = IntegratorConfig::default().with_stride(10);
    for (model, starts) in &cases {
        worst_alg = worst_alg.max(check_constant_of_motion(model, 1000, 7).unwrap());
        for y0 in starts {
            for s in [0.0, 0.37, 1.0] {
                let u = model.u_lo[0] + s * (model.u_hi[0] - model.u_lo[0]);
                let tr = integrate_reduced(model, |_, _, out: &mut [f64]| out[0] = u, y0, 50.0, &cfg).unwrap();
                let z0 = model.observable1(y0);
                for y in &tr.states {
                    worst_flow = worst_flow.max((model.observable1(y) - z0).abs());
                }
            }
        }
    }
    r.line(
        "4 (conservation)",
        worst_flow <= 1e-6 && worst_alg <= 1e-12,
        format!("max |F(y)-F(y0)| = {worst_flow:.3e} (<= 1e-6), algebraic residual = {worst_alg:.3e} (<= 1e-12)"),
    );
}

fn orbit_suite(r: &mut Report) {
    let (_, _, rot) = grid_orbits(&RunConfig::example1()).unwrap();
    let period_err = rot.iter().map(|o| (o.period - std::f64::consts::TAU).abs()).fold(0.0, f64::max);
    let (_, grid, lv) = grid_orbits(&RunConfig::example2()).unwrap();
    let mut mean_err: f64 = 0.0;
    for (z, o) in grid.iter().zip(&lv) {
        if (-3.0..=-2.05).contains(z) {
            mean_err = mean_err.max((orbit_average(o, |y| y[0]) - 1.0).abs());
            mean_err = mean_err.max((orbit_average(o, |y| y[1]) - 1.0).abs());
        }
    }
    let decreasing = lv.windows(2).all(|w| w[1].period < w[0].period);
    r.line(
        "5 (orbits)",
        period_err <= 1e-6 && mean_err <= 1e-4 && decreasing,
        format!(
            "rotation max |T-2pi| = {period_err:.3e} (<= 1e-6), LV max |mean-1| = {mean_err:.3e} (<= 1e-4), T_z strictly decreasing = {decreasing}"
        ),
    );
}

/// Max of `c.x` over `A x <= b, x >= 0` by enumerating every basic solution.
fn vertex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = -1.0;
        rows.push((e, 0.0));
    }
    let total = rows.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        if let Some(x) = solve_square(&pick.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()) {
            let feasible = rows.iter().all(|(row, rhs)| row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9);
            if feasible {
                let v: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
        // next n-subset in lexicographic order
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < total - n + i {
                pick[i] += 1;
                for k in i + 1..n {
                    pick[k] = pick[k - 1] + 1;
                }
                break;
            }
        }
    }
}

fn solve_square(rows: &[(Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut m: Vec<Vec<f64>> = rows.iter().map(|(r, b)| r.iter().copied().chain([*b]).collect()).collect();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[p][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, p);
        for i in 0..n {
            if i != col {
                let f = m[i][col] / m[col][col];
                for k in col..=n {
                    m[i][k] -= f * m[col][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

fn lp_oracle(r: &mut Report) {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let m = rng.gen_range(1..=8);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let mut a: Vec<Vec<f64>> = (0..m - 1).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // keeps the region bounded
        a.push((0..n).map(|_| rng.gen_range(0.2..1.0)).collect());
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..3.0)).collect();
        let mut lp = FiniteLp::new(Sense::Maximize, c.clone());
        for (row, rhs) in a.iter().zip(&b) {
            lp.add_row(row.iter().copied().enumerate().collect(), RowKind::Le, *rhs);
        }
        let sol = solve_finite_lp(&lp).unwrap();
        match (sol.status, vertex_max(&a, &b, &c)) {
            (LpStatus::Optimal, Some(v)) => worst = worst.max((sol.value - v).abs()),
            _ => mismatched += 1,
        }
    }
    r.line(
        "8 (LP oracle)",
        worst <= 1e-7 && mismatched == 0,
        format!("100 random LPs, max |simplex - vertex enumeration| = {worst:.3e} (<= 1e-7), status mismatches = {mismatched}"),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::example2();
    cfg.output_dir = tmp.path().to_path_buf();

    let start = Instant::now();
    let summary = run_command(Verb::ReproduceExample2, &cfg, None).unwrap();
    let runtime = start.elapsed().as_secs_f64();

    let a = get(&summary, "a_MN");
    let c = cfg.discount;
    r.line(
        "1 (dual value)",
        (0.10..=0.135).contains(&a) && runtime <= 600.0,
        format!("a_MN = {a:.6} (in [0.10, 0.135]), runtime = {runtime:.1}s (<= 600s)"),
    );

    let cost = get(&summary, "R_eps");
    r.line("2 (perturbed cost)", (1.10..=1.40).contains(&cost), format!("R(0.1) = {cost:.6} (in [1.10, 1.40])"));

    let gap = cost - a / c;
    let weak = c * get(&summary, "R_tilde") - a;
    r.line(
        "3 (gap)",
        (0.0..=0.25).contains(&gap) && weak >= -1e-3,
        format!("R(0.1) - a/C = {gap:.6} (in [0, 0.25]), C*R~ - a = {weak:.3e} (>= -1e-3)"),
    );

    conservation(&mut r);
    orbit_suite(&mut r);

    let sweep = read_sweep(&tmp.path().join("sweep.csv"));
    let eps: Vec<f64> = sweep.iter().map(|s| s.eps).collect();
    let sup: Vec<f64> = sweep.iter().map(|s| s.sup_gap).collect();
    let sup_dec = sweep.windows(2).all(|w| w[1].sup_gap < w[0].sup_gap);
    let first = sweep.iter().find(|s| s.eps == 0.2).map(|s| s.cost_gap);
    let last = sweep.iter().find(|s| s.eps == 0.025).map(|s| s.cost_gap);
    let cost_dec = matches!((first, last), (Some(f), Some(l)) if l < f);
    r.line(
        "6 (averaging)",
        eps == [0.2, 0.1, 0.05, 0.025] && sup_dec && cost_dec,
        format!("eps {eps:?}: sup gap {sup:.4?} strictly decreasing = {sup_dec}; |R-R~| {first:.4?} -> {last:.4?} decreasing = {cost_dec}"),
    );

    let dual = load_dual(&tmp.path().join("dual.txt")).unwrap();
    let policy = feedback_policy(&cfg, dual.clone()).unwrap();
    let problem = cfg.problem().unwrap();
    let stop = stop_rule(&problem);
    let mut drift_ok = true;
    let mut drifts = Vec::new();
    for e in [0.2, 0.1, 0.05] {
        let d = if e == 0.1 {
            get(&summary, "frozen_max_drift")
        } else {
            let icfg = integrator_config(&cfg).with_stride(100);
            simulate_frozen(&problem.with_epsilon(e), &policy, cfg.horizon, stop.as_ref(), &icfg).unwrap().max_drift()
        };
        drift_ok &= d <= e.powf(0.25);
        drifts.push(format!("eps {e}: {d:.4e} <= {:.4}", e.powf(0.25)));
    }
    let cost_diff = (get(&summary, "R_eps_frozen") - cost).abs();
    r.line(
        "7 (frozen schedule)",
        drift_ok && cost_diff <= 0.15,
        format!("block drift [{}], |cost_frozen - cost_closed| = {cost_diff:.3e} (<= 0.15)", drifts.join(", ")),
    );

    lp_oracle(&mut r);

    let diag = certificate_diagnostics(&dual, &dual.z_grid);
    let max_dz = diag.dzeta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut fine = cfg.clone();
    fine.z_grid_size = 2 * cfg.z_grid_size - 1;
    fine.control_grid_size = 2 * cfg.control_grid_size - 1;
    let a_fine = solve_stage(&fine).unwrap().dual.value;
    let da = (a_fine - a).abs();
    r.line(
        "9 (certificate)",
        max_dz < 0.0 && da <= 5e-3,
        format!(
            "max dzeta/dz over {} nodes = {max_dz:.4e} (< 0), a({} levels) = {a_fine:.6}, |delta a| = {da:.3e} (<= 5e-3)",
            diag.z.len(),
            fine.z_grid_size
        ),
    );

    println!("{} of 9 criteria failed", r.failures);
    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
