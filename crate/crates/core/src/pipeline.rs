//! End-to-end stages shared by the command line and the acceptance suite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fmt::num;
use crate::integrate::IntegratorConfig;
use crate::lp::{certificate_diagnostics, solve_dual_exchange, DualSolution, ExchangeConfig, MonomialBasisY, MonomialBasisZ};
use crate::models::ProblemSpec;
use crate::orbits::{orbit_for_level_refined, orbits_for_grid, OrbitConfig, PeriodicOrbit};
use crate::perturbed::{averaging_experiment, simulate_closed_loop, simulate_frozen, write_sweep_csv, EvaluationReport, FrozenReport, StopRule, SweepRow};
use crate::synthesis::{integrate_averaged, optimality_gap, tabulate_acg, AcgTables, AveragedConfig, AveragedTrajectory, FeedbackPolicy, Policy};

/// Largest orbit resolution the automatic refinement may reach.
const MAX_ORBIT_NODES: usize = 4096;
/// Tolerance on orbit averages between successive node doublings.
const ORBIT_AVERAGE_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Orbit,
    Solve,
    Synthesize,
    Simulate,
    Sweep,
    ReproduceExample2,
}

impl Verb {
    pub fn tag(self) -> &'static str {
        match self {
            Verb::Orbit => "orbit",
            Verb::Solve => "solve",
            Verb::Synthesize => "synthesize",
            Verb::Simulate => "simulate",
            Verb::Sweep => "sweep",
            Verb::ReproduceExample2 => "reproduce-example2",
        }
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub z_grid_size: Option<usize>,
    pub exchange_tol: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(g) = self.z_grid_size {
            cfg.z_grid_size = g;
        }
        if let Some(t) = self.exchange_tol {
            cfg.exchange_tol = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `n` equispaced levels over the hull of `Z` and `z0`.
pub fn z_grid(problem: &ProblemSpec, n: usize) -> Vec<f64> {
    let (lo, hi) = problem.observable_hull();
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

pub fn integrator_config(cfg: &RunConfig) -> IntegratorConfig {
    IntegratorConfig { dt: cfg.dt, event_refine_tol: cfg.event_refine_tol, ..Default::default() }
}

pub fn orbit_config(cfg: &RunConfig) -> OrbitConfig {
    OrbitConfig { integrator: integrator_config(cfg), nodes: cfg.orbit_nodes, ..Default::default() }
}

/// Orbits for the configured z-grid.
pub fn grid_orbits(cfg: &RunConfig) -> Result<(ProblemSpec, Vec<f64>, Vec<PeriodicOrbit>)> {
    let problem = cfg.problem()?;
    let grid = z_grid(&problem, cfg.z_grid_size);
    let orbits = orbits_for_grid(&problem.model, &grid, &orbit_config(cfg))?;
    Ok((problem, grid, orbits))
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub problem: ProblemSpec,
    pub z_grid: Vec<f64>,
    pub orbits: Vec<PeriodicOrbit>,
    pub dual: DualSolution,
    pub seconds: f64,
}

pub fn solve_stage(cfg: &RunConfig) -> Result<SolveOutput> {
    let start = Instant::now();
    let (problem, grid, orbits) = grid_orbits(cfg)?;
    let (lo, hi) = problem.observable_hull();
    let bz = MonomialBasisZ::for_interval(cfg.basis_n, lo, hi)?;
    let by = MonomialBasisY::fitted(cfg.degree_bound()?, cfg.basis_y_degree, orbits.iter().flat_map(|o| o.nodes.iter().cloned()))?;
    let controls = problem.model.control_grid(cfg.control_grid_size);
    let ex = ExchangeConfig {
        tol: cfg.exchange_tol,
        max_iterations: cfg.max_iterations,
        cuts_per_level: cfg.cuts_per_level,
        ..Default::default()
    };
    let dual = solve_dual_exchange(&problem, &bz, &by, &grid, &controls, &orbits, &ex)?;
    Ok(SolveOutput { problem, z_grid: grid, orbits, dual, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug)]
pub struct SynthesisOutput {
    pub policy: FeedbackPolicy,
    pub tables: AcgTables,
    pub averaged: AveragedTrajectory,
    /// `R~ - a / C`.
    pub gap: f64,
}

pub fn feedback_policy(cfg: &RunConfig, dual: DualSolution) -> Result<FeedbackPolicy> {
    let mut policy = FeedbackPolicy::new(cfg.model_spec()?, dual);
    policy.control_grid = policy.model.control_grid(cfg.control_grid_size);
    Ok(policy)
}

/// Tabulates the policy on orbits refined until the averages of `h` and `r` settle.
pub fn synthesize_stage(cfg: &RunConfig, dual: &DualSolution) -> Result<SynthesisOutput> {
    let problem = cfg.problem()?;
    let policy = feedback_policy(cfg, dual.clone())?;
    let model = &problem.model;
    let grid = &dual.z_grid;
    let ocfg = orbit_config(cfg);
    let orbits: Vec<PeriodicOrbit> = grid
        .par_iter()
        .map(|&z| {
            let h = |y: &[f64]| model.drift(&policy.control(y, z), y)[0];
            let r = |y: &[f64]| model.cost(&policy.control(y, z), y);
            orbit_for_level_refined(model, &[z], &ocfg, &[&h, &r], ORBIT_AVERAGE_TOL, MAX_ORBIT_NODES)
        })
        .collect::<Result<_>>()?;
    let tables = tabulate_acg(model, &policy, &orbits)?;
    let acfg = AveragedConfig { min_horizon: cfg.horizon.max(cfg.sweep_horizon), ..Default::default() };
    let averaged = integrate_averaged(&tables, problem.z0[0], problem.discount, &acfg)?;
    let gap = optimality_gap(averaged.r_tilde, dual.value, problem.discount);
    Ok(SynthesisOutput { policy, tables, averaged, gap })
}

pub fn stop_rule(problem: &ProblemSpec) -> Option<StopRule> {
    problem.stop_level.map(|level| StopRule::zero(&problem.model, level))
}

/// Keeps recorded trajectories near 20000 samples.
fn stride_for(problem: &ProblemSpec, cfg: &RunConfig, horizon: f64) -> usize {
    let steps = horizon / (problem.epsilon * cfg.dt);
    ((steps / 20000.0).ceil() as usize).max(1)
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub closed: EvaluationReport,
    pub frozen: FrozenReport,
}

pub fn simulate_stage(cfg: &RunConfig, synth: &SynthesisOutput) -> Result<SimulationOutput> {
    let problem = cfg.problem()?;
    let stop = stop_rule(&problem);
    let icfg = integrator_config(cfg).with_stride(stride_for(&problem, cfg, cfg.horizon));
    let (closed, frozen) = rayon::join(
        || simulate_closed_loop(&problem, &synth.policy, cfg.horizon, stop.as_ref(), Some(&synth.averaged), &icfg),
        || simulate_frozen(&problem, &synth.policy, cfg.horizon, stop.as_ref(), &icfg),
    );
    Ok(SimulationOutput { closed: closed?, frozen: frozen? })
}

pub fn sweep_stage(cfg: &RunConfig, synth: &SynthesisOutput) -> Result<Vec<SweepRow>> {
    let problem = cfg.problem()?;
    let stop = stop_rule(&problem);
    averaging_experiment(&problem, &synth.policy, &synth.averaged, &cfg.eps_list, cfg.sweep_horizon, stop.as_ref(), &integrator_config(cfg))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Plain-text report, one `name value` pair per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, name: &str, value: f64) {
        self.entries.push((name.into(), num(value)));
    }

    pub fn push_text(&mut self, name: &str, value: impl ToString) {
        self.entries.push((name.into(), value.to_string()));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(k, _)| k == name).and_then(|(_, v)| v.parse().ok())
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(w, "{k} {v}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Summary {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(' '))
            .map(|(k, v)| (k.to_string(), v.trim().to_string()))
            .collect();
        Summary { entries }
    }
}

pub fn write_orbits(dir: &Path, grid: &[f64], orbits: &[PeriodicOrbit]) -> Result<()> {
    let sub = dir.join("orbits");
    let mut index = create(dir, "orbits.csv")?;
    writeln!(index, "z,T_z,closure_error")?;
    for (i, (z, o)) in grid.iter().zip(orbits).enumerate() {
        let mut w = create(&sub, &format!("orbit_{i:03}.csv"))?;
        o.write_csv(&mut w)?;
        w.flush()?;
        crate::fmt::write_row(&mut index, [*z, o.period, o.closure_error])?;
    }
    index.flush()?;
    Ok(())
}

pub fn load_dual(path: &Path) -> Result<DualSolution> {
    let file = File::open(path).map_err(|_| Error::MissingCertificate(path.display().to_string()))?;
    DualSolution::read_text(BufReader::new(file))
}

fn write_dual(dir: &Path, out: &SolveOutput, summary: &mut Summary) -> Result<()> {
    let mut w = create(dir, "dual.txt")?;
    out.dual.write_text(&mut w)?;
    w.flush()?;
    let diag = certificate_diagnostics(&out.dual, &out.z_grid);
    let mut w = create(dir, "certificate.csv")?;
    writeln!(w, "z,zeta,dzeta")?;
    for i in 0..diag.z.len() {
        crate::fmt::write_row(&mut w, [diag.z[i], diag.zeta[i], diag.dzeta[i]])?;
    }
    w.flush()?;
    let mut w = create(dir, "exchange_history.csv")?;
    writeln!(w, "iteration,value")?;
    for (i, v) in out.dual.value_history.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, num(*v))?;
    }
    w.flush()?;
    summary.push("a_MN", out.dual.value);
    summary.push("max_violation", out.dual.max_violation);
    summary.push_text("exchange_iterations", out.dual.iterations);
    summary.push_text("exchange_converged", out.dual.converged);
    summary.push_text("zeta_monotone", diag.monotone);
    summary.push("solve_seconds", out.seconds);
    Ok(())
}

fn write_synthesis(dir: &Path, cfg: &RunConfig, dual: &DualSolution, s: &SynthesisOutput, summary: &mut Summary) -> Result<()> {
    let mut w = create(dir, "acg_tables.csv")?;
    s.tables.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "averaged.csv")?;
    s.averaged.write_csv(&mut w)?;
    w.flush()?;
    summary.push("a_MN", dual.value);
    summary.push("R_tilde", s.averaged.r_tilde);
    summary.push("R_tilde_tail_bound", s.averaged.tail_bound);
    summary.push_text("averaged_saturated", s.averaged.saturated);
    summary.push("gap_averaged", s.gap);
    summary.push("certificate_gap", cfg.discount * s.averaged.r_tilde - dual.value);
    Ok(())
}

fn write_simulation(dir: &Path, cfg: &RunConfig, dual: &DualSolution, sim: &SimulationOutput, summary: &mut Summary) -> Result<()> {
    let mut w = create(dir, "trajectory.csv")?;
    sim.closed.trajectory.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "trajectory_frozen.csv")?;
    sim.frozen.report.trajectory.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(dir, "frozen_blocks.csv")?;
    sim.frozen.write_blocks_csv(&mut w)?;
    w.flush()?;
    let eps = sim.closed.epsilon;
    summary.push("epsilon", eps);
    summary.push("R_eps", sim.closed.cost);
    summary.push("R_eps_tail_bound", sim.closed.tail_bound);
    // fast time: R_eps = eps * integral of exp(-eps C tau) r dtau
    summary.push("R_eps_tau_integral", sim.closed.cost / eps);
    if let Some(ts) = sim.closed.switch_time {
        summary.push("switch_time", ts);
        summary.push("switch_time_tau_scale", ts / eps);
    }
    if let Some(g) = sim.closed.sup_observable_gap {
        summary.push("sup_observable_gap", g);
    }
    summary.push("gap_perturbed", optimality_gap(sim.closed.cost, dual.value, cfg.discount));
    summary.push("R_eps_frozen", sim.frozen.report.cost);
    summary.push("frozen_block_length", sim.frozen.block_length);
    summary.push("frozen_lipschitz", sim.frozen.lipschitz);
    summary.push("frozen_max_drift", sim.frozen.max_drift());
    summary.push("frozen_drift_bound", sim.frozen.drift_bound);
    Ok(())
}

fn finish(dir: &Path, summary: &Summary) -> Result<()> {
    let mut w = create(dir, "summary.txt")?;
    summary.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn dual_for(cfg: &RunConfig, dual_path: Option<&Path>) -> Result<DualSolution> {
    let default = cfg.output_dir.join("dual.txt");
    load_dual(dual_path.unwrap_or(&default))
}

/// Runs one verb and writes its artifacts under `cfg.output_dir`.
pub fn run_command(verb: Verb, cfg: &RunConfig, dual_path: Option<&Path>) -> Result<Summary> {
    let dir = cfg.output_dir.as_path();
    let mut summary = Summary::default();
    summary.push_text("verb", verb.tag());
    match verb {
        Verb::Orbit => {
            let (_, grid, orbits) = grid_orbits(cfg)?;
            write_orbits(dir, &grid, &orbits)?;
            summary.push_text("orbits", orbits.len());
            let worst = orbits.iter().fold(0.0f64, |a, o| a.max(o.closure_error));
            summary.push("max_closure_error", worst);
        }
        Verb::Solve => {
            let out = solve_stage(cfg)?;
            write_dual(dir, &out, &mut summary)?;
        }
        Verb::Synthesize => {
            let dual = dual_for(cfg, dual_path)?;
            let s = synthesize_stage(cfg, &dual)?;
            write_synthesis(dir, cfg, &dual, &s, &mut summary)?;
        }
        Verb::Simulate => {
            let dual = dual_for(cfg, dual_path)?;
            let s = synthesize_stage(cfg, &dual)?;
            let sim = simulate_stage(cfg, &s)?;
            write_simulation(dir, cfg, &dual, &sim, &mut summary)?;
        }
        Verb::Sweep => {
            let dual = dual_for(cfg, dual_path)?;
            let s = synthesize_stage(cfg, &dual)?;
            let rows = sweep_stage(cfg, &s)?;
            let mut w = create(dir, "sweep.csv")?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
            summary.push("R_tilde", s.averaged.r_tilde);
        }
        Verb::ReproduceExample2 => {
            let start = Instant::now();
            let (_, grid, orbits) = grid_orbits(cfg)?;
            write_orbits(dir, &grid, &orbits)?;
            let out = solve_stage(cfg)?;
            write_dual(dir, &out, &mut summary)?;
            let s = synthesize_stage(cfg, &out.dual)?;
            let mut syn = Summary::default();
            write_synthesis(dir, cfg, &out.dual, &s, &mut syn)?;
            summary.entries.extend(syn.entries.into_iter().filter(|(k, _)| k != "a_MN"));
            let sim = simulate_stage(cfg, &s)?;
            write_simulation(dir, cfg, &out.dual, &sim, &mut summary)?;
            let rows = sweep_stage(cfg, &s)?;
            let mut w = create(dir, "sweep.csv")?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
            summary.push("total_seconds", start.elapsed().as_secs_f64());
        }
    }
    finish(dir, &summary)?;
    Ok(summary)
}
